// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

// Runs the taqdit_cli binary in a scratch directory.

#ifndef TAQDIT_TESTS_CLI_RUNNER_HPP_
#define TAQDIT_TESTS_CLI_RUNNER_HPP_

#include <taqdit/serialization.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#ifndef TAQDIT_CLI_PATH
#error "TAQDIT_CLI_PATH must name the taqdit_cli binary"
#endif

namespace taqdit::testing {

class Scratch {
public:
    explicit Scratch(const std::string& name)
    {
        std::random_device rd;
        dir_ = std::filesystem::temp_directory_path() /
               (name + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(dir_);
    }
    ~Scratch()
    {
        std::error_code ec;
        std::filesystem::remove_all(dir_, ec);
    }
    Scratch(const Scratch&) = delete;
    Scratch& operator=(const Scratch&) = delete;

    std::string path(const std::string& file) const { return (dir_ / file).string(); }

    void write(const std::string& file, const std::string& text) const
    {
        std::ofstream(path(file)) << text;
    }

    std::string read(const std::string& file) const
    {
        std::ifstream in(path(file), std::ios::binary);
        return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    }

    /// Runs the CLI with `args` inside the scratch directory; stdout and
    /// stderr land in out.txt and err.txt. `env` is prepended verbatim.
    int run(const std::string& args, const std::string& env = "") const
    {
        const std::string cmd = "cd '" + dir_.string() + "' && env -u TAQ_SEED " + env + " '" +
                                TAQDIT_CLI_PATH + "' " + args + " > out.txt 2> err.txt";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string out() const { return read("out.txt"); }
    std::string err() const { return read("err.txt"); }

private:
    std::filesystem::path dir_;
};

/// Small problem that keeps CLI round trips fast.
inline const char* kSmallConfig = "d = 16\ntokens = 8\nblocks = 2\ntimesteps = 3\nper_step = 4\n";

/// Flips one payload byte, keeping the file's CRC stale.
inline void corrupt_byte(const std::string& path, std::size_t offset)
{
    auto bytes = read_file(path);
    bytes.at(offset) ^= 0x01;
    write_file(path, bytes);
}

/// Rewrites the version field and recomputes the CRC.
inline void set_version(const std::string& path, std::uint32_t version)
{
    auto bytes = read_file(path);
    for (int i = 0; i < 4; ++i)
        bytes.at(4 + static_cast<std::size_t>(i)) = static_cast<std::uint8_t>(version >> (8 * i));
    bytes.resize(bytes.size() - 4);
    const std::uint32_t crc = crc32_of(bytes);
    for (int i = 0; i < 4; ++i)
        bytes.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
    write_file(path, bytes);
}

} // namespace taqdit::testing

#endif // TAQDIT_TESTS_CLI_RUNNER_HPP_
