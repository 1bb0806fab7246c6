// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef TAQDIT_SERIALIZATION_HPP_
#define TAQDIT_SERIALIZATION_HPP_

#include <taqdit/error.hpp>
#include <taqdit/pipeline.hpp>
#include <taqdit/toy_dit.hpp>

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

namespace taqdit {

inline constexpr std::uint32_t kCalibrationFormatVersion = 1;
inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr char kCalibrationMagic[4] = {'T', 'A', 'Q', 'C'};
inline constexpr char kModelMagic[4] = {'T', 'A', 'Q', 'M'};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes)
{
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t off = 0;
    while (off < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
        crc = crc32(crc, bytes.data() + off, chunk);
        off += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

namespace io {

/// Little-endian fixed-width encoder.
class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void magic(const char (&m)[4])
    {
        for (char c : m)
            buf_.push_back(static_cast<std::uint8_t>(c));
    }
    void size(std::size_t n)
    {
        if (n > 0xffffffffULL)
            throw InvalidArgument("length does not fit the file format");
        u32(static_cast<std::uint32_t>(n));
    }
    void f64s(std::span<const double> v)
    {
        for (double x : v)
            f64(x);
    }

    std::vector<std::uint8_t> finish()
    {
        const std::uint32_t crc = crc32_of(buf_);
        u32(crc);
        return std::move(buf_);
    }

private:
    void put(std::uint64_t v, int bytes)
    {
        for (int i = 0; i < bytes; ++i)
            buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian decoder.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    std::int64_t i64() { return static_cast<std::int64_t>(get(8)); }
    double f64() { return std::bit_cast<double>(get(8)); }

    /// A length prefix that must leave room for `elem` bytes per element.
    std::size_t count(std::size_t elem)
    {
        const std::size_t n = u32();
        if (elem > 0 && n > remaining() / elem)
            throw FormatError(FormatError::Kind::Truncated, "length prefix exceeds the file size");
        return n;
    }

    std::vector<double> f64s(std::size_t n)
    {
        need(n * 8);
        std::vector<double> v(n);
        for (double& x : v)
            x = f64();
        return v;
    }

    std::size_t remaining() const noexcept { return data_.size() - pos_; }

private:
    void need(std::size_t n) const
    {
        if (n > remaining())
            throw FormatError(FormatError::Kind::Truncated, "unexpected end of file");
    }

    std::uint64_t get(int bytes)
    {
        need(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i)
            v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

/// Checks magic, trailing CRC and version, in that order, and returns the
/// payload after the version field (CRC excluded).
inline std::span<const std::uint8_t> open_frame(std::span<const std::uint8_t> bytes,
                                                const char (&magic)[4], std::uint32_t version,
                                                const char* what)
{
    if (bytes.size() < 12)
        throw FormatError(FormatError::Kind::Truncated, std::string(what) + " file is too short");
    if (std::memcmp(bytes.data(), magic, 4) != 0)
        throw FormatError(FormatError::Kind::BadMagic, std::string(what) + " file has a bad magic");
    const auto body = bytes.first(bytes.size() - 4);
    Reader tail(bytes.last(4));
    if (tail.u32() != crc32_of(body))
        throw FormatError(FormatError::Kind::Crc, std::string(what) + " file failed its CRC check");
    Reader head(body.subspan(4, 4));
    const std::uint32_t found = head.u32();
    if (found != version)
        throw FormatError(FormatError::Kind::Version,
                          std::string(what) + " file version " + std::to_string(found) +
                              ", expected " + std::to_string(version));
    return body.subspan(8);
}

inline void write_params(Writer& w, const QuantParams& p)
{
    w.u32(static_cast<std::uint32_t>(p.bits));
    w.u8(static_cast<std::uint8_t>(p.granularity));
    w.size(p.scales.size());
    w.f64s(p.scales);
    for (std::int64_t z : p.zero_points)
        w.i64(z);
}

inline QuantParams read_params(Reader& r)
{
    QuantParams p;
    p.bits = static_cast<int>(r.u32());
    const std::uint8_t g = r.u8();
    if (g > static_cast<std::uint8_t>(Granularity::InputChannelWise))
        throw FormatError(FormatError::Kind::Malformed, "unknown granularity tag");
    p.granularity = static_cast<Granularity>(g);
    const std::size_t n = r.count(16);
    p.scales = r.f64s(n);
    p.zero_points.resize(n);
    for (auto& z : p.zero_points)
        z = r.i64();
    return p;
}

inline void write_shape(Writer& w, const Shape& s)
{
    w.size(s.size());
    for (std::size_t d : s)
        w.size(d);
}

inline Shape read_shape(Reader& r)
{
    const std::size_t rank = r.count(4);
    if (rank > 4)
        throw FormatError(FormatError::Kind::Malformed, "tensor rank above 4");
    Shape s(rank);
    for (auto& d : s)
        d = r.u32();
    return s;
}

inline void write_tensor(Writer& w, const Tensor& t)
{
    write_shape(w, t.shape());
    w.f64s(t.values());
}

inline Tensor read_tensor(Reader& r)
{
    Shape s = read_shape(r);
    const std::size_t n = shape_size(s);
    if (n > r.remaining() / 8)
        throw FormatError(FormatError::Kind::Truncated, "tensor payload exceeds the file size");
    return Tensor(std::move(s), r.f64s(n));
}

inline void write_affine(Writer& w, const ChannelAffine& a)
{
    w.size(a.scale.size());
    w.f64s(a.scale);
    w.f64s(a.offset);
}

inline ChannelAffine read_affine(Reader& r)
{
    const std::size_t n = r.count(16);
    ChannelAffine a;
    a.scale = r.f64s(n);
    a.offset = r.f64s(n);
    return a;
}

inline void write_linear(Writer& w, const QuantizedLinear& l)
{
    write_shape(w, l.weight.shape);
    write_params(w, l.weight.params);
    for (std::int64_t c : l.weight.codes)
        w.i64(c);
    write_tensor(w, l.bias);
    write_params(w, l.act);
}

inline QuantizedLinear read_linear(Reader& r)
{
    QuantizedLinear l;
    l.weight.shape = read_shape(r);
    if (l.weight.shape.size() != 2)
        throw FormatError(FormatError::Kind::Malformed, "weight must be 2-D");
    l.weight.params = read_params(r);
    const std::size_t n = shape_size(l.weight.shape);
    if (n > r.remaining() / 8)
        throw FormatError(FormatError::Kind::Malformed, "weight codes exceed the file size");
    l.weight.codes.resize(n);
    for (auto& c : l.weight.codes)
        c = r.i64();
    l.bias = read_tensor(r);
    l.act = read_params(r);
    try {
        l.weight.params.validate_for(l.weight.shape[0], l.weight.shape[1]);
    } catch (const Error& e) {
        throw FormatError(FormatError::Kind::Malformed, std::string("stored weight params: ") + e.what());
    }
    for (std::int64_t c : l.weight.codes)
        if (c < 0 || c > l.weight.params.max_code())
            throw FormatError(FormatError::Kind::Malformed, "stored weight code out of range");
    return l;
}

} // namespace io

/// A calibration set together with the depth of the model it was made for.
struct CalibrationFile {
    CalibrationSet set;
    std::size_t blocks = 2;

    friend bool operator==(const CalibrationFile&, const CalibrationFile&) = default;
};

/// "TAQC" | version | n | m | d | T | seed | blocks | samples | CRC32.
/// Each sample is its timestep as f64 followed by T x d f64 values.
inline std::vector<std::uint8_t> encode_calibration(const CalibrationFile& file)
{
    const CalibrationSet& s = file.set;
    io::Writer w;
    w.magic(kCalibrationMagic);
    w.u32(kCalibrationFormatVersion);
    w.size(s.timesteps);
    w.size(s.per_step);
    w.size(s.width);
    w.size(s.tokens);
    w.u64(s.seed);
    w.size(file.blocks);
    w.size(s.samples.size());
    for (const auto& sample : s.samples) {
        if (sample.input.rows() != s.tokens || sample.input.cols() != s.width)
            throw DimensionError("calibration sample does not match the set's T x d");
        w.f64(static_cast<double>(sample.timestep));
        w.f64s(sample.input.values());
    }
    return w.finish();
}

inline CalibrationFile decode_calibration(std::span<const std::uint8_t> bytes)
{
    io::Reader r(io::open_frame(bytes, kCalibrationMagic, kCalibrationFormatVersion, "calibration"));
    CalibrationFile file;
    CalibrationSet& s = file.set;
    s.timesteps = r.u32();
    s.per_step = r.u32();
    s.width = r.u32();
    s.tokens = r.u32();
    s.seed = r.u64();
    file.blocks = r.u32();
    const std::size_t per = s.width * s.tokens;
    const std::size_t count = r.count(8 * (per + 1));
    s.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        CalibrationSample sample;
        const double t = r.f64();
        if (!(t >= 0.0) || t > 4294967295.0 || t != std::floor(t))
            throw FormatError(FormatError::Kind::Malformed, "invalid timestep tag");
        sample.timestep = static_cast<std::uint32_t>(t);
        sample.input = Tensor({s.tokens, s.width}, r.f64s(per));
        s.samples.push_back(std::move(sample));
    }
    if (r.remaining() != 0)
        throw FormatError(FormatError::Kind::Malformed, "trailing bytes in calibration file");
    return file;
}

/// "TAQM" | version | d | T | blocks | bits_w | bits_a | seed | shift mode |
/// migration kind | blocks ... | CRC32.
inline std::vector<std::uint8_t> encode_model(const QuantizedModel& m)
{
    io::Writer w;
    w.magic(kModelMagic);
    w.u32(kModelFormatVersion);
    w.size(m.width);
    w.size(m.tokens);
    w.size(m.blocks.size());
    w.u32(static_cast<std::uint32_t>(m.bits_w));
    w.u32(static_cast<std::uint32_t>(m.bits_a));
    w.u64(m.seed);
    w.u8(static_cast<std::uint8_t>(m.shift_mode));
    w.u8(static_cast<std::uint8_t>(m.migration));
    for (const auto& b : m.blocks) {
        io::write_affine(w, b.norm1);
        io::write_affine(w, b.norm2);
        for (const auto* l : {&b.query, &b.key, &b.value, &b.out_proj, &b.pf_in, &b.pf_out})
            io::write_linear(w, *l);
        w.f64(b.shift.beta());
        w.u64(b.shift.updates_seen());
        w.size(b.shift.channels());
        w.f64s(b.shift.values());
        w.size(b.plan.size());
        for (std::size_t i : b.plan.outlier_indices)
            w.size(i);
        w.f64s(b.plan.factors);
    }
    return w.finish();
}

inline QuantizedModel decode_model(std::span<const std::uint8_t> bytes)
{
    io::Reader r(io::open_frame(bytes, kModelMagic, kModelFormatVersion, "model"));
    QuantizedModel m;
    m.width = r.u32();
    m.tokens = r.u32();
    const std::size_t blocks = r.u32();
    m.bits_w = static_cast<int>(r.u32());
    m.bits_a = static_cast<int>(r.u32());
    m.seed = r.u64();
    const std::uint8_t shift = r.u8(), migration = r.u8();
    if (shift > static_cast<std::uint8_t>(ShiftMode::Dynamic) ||
        migration > static_cast<std::uint8_t>(MigrationKind::Split))
        throw FormatError(FormatError::Kind::Malformed, "unknown shift or migration tag");
    m.shift_mode = static_cast<ShiftMode>(shift);
    m.migration = static_cast<MigrationKind>(migration);
    for (std::size_t i = 0; i < blocks; ++i) {
        QuantizedBlock b;
        b.norm1 = io::read_affine(r);
        b.norm2 = io::read_affine(r);
        for (auto* l : {&b.query, &b.key, &b.value, &b.out_proj, &b.pf_in, &b.pf_out})
            *l = io::read_linear(r);
        const double beta = r.f64();
        const std::uint64_t updates = r.u64();
        const std::size_t channels = r.count(8);
        try {
            b.shift = ShiftState(r.f64s(channels), beta, updates);
        } catch (const InvalidArgument& e) {
            throw FormatError(FormatError::Kind::Malformed, e.what());
        }
        const std::size_t k = r.count(12);
        b.plan.outlier_indices.resize(k);
        for (auto& idx : b.plan.outlier_indices)
            idx = r.u32();
        b.plan.factors = r.f64s(k);
        try {
            b.plan.validate(channels);
        } catch (const Error& e) {
            throw FormatError(FormatError::Kind::Malformed, std::string("stored plan: ") + e.what());
        }
        m.blocks.push_back(std::move(b));
    }
    if (r.remaining() != 0)
        throw FormatError(FormatError::Kind::Malformed, "trailing bytes in model file");
    return m;
}

inline std::vector<std::uint8_t> read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError(FormatError::Kind::Io, "cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw FormatError(FormatError::Kind::Io, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw FormatError(FormatError::Kind::Io, "write to " + path + " failed");
}

inline void save_calibration(const std::string& path, const CalibrationFile& file)
{
    write_file(path, encode_calibration(file));
}

inline CalibrationFile load_calibration(const std::string& path)
{
    return decode_calibration(read_file(path));
}

inline void save_model(const std::string& path, const QuantizedModel& m)
{
    write_file(path, encode_model(m));
}

inline QuantizedModel load_model(const std::string& path)
{
    return decode_model(read_file(path));
}

} // namespace taqdit

#endif // TAQDIT_SERIALIZATION_HPP_
