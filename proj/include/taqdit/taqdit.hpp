// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef TAQDIT_TAQDIT_HPP_
#define TAQDIT_TAQDIT_HPP_

#include <taqdit/config.hpp>
#include <taqdit/error.hpp>
#include <taqdit/metrics.hpp>
#include <taqdit/pipeline.hpp>
#include <taqdit/quantizer.hpp>
#include <taqdit/reconstruction.hpp>
#include <taqdit/report.hpp>
#include <taqdit/serialization.hpp>
#include <taqdit/tensor.hpp>
#include <taqdit/toy_dit.hpp>
#include <taqdit/transforms.hpp>

#endif // TAQDIT_TAQDIT_HPP_
