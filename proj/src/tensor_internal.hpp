// Copyright 2026 The ulga Authors.
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Helpers shared by the op implementations. Not installed.

#pragma once

#include <initializer_list>
#include <vector>

#include "ulga/tensor.hpp"

namespace ulga {

/// Build an op result, validating finiteness and wiring operands as parents
/// when any of them requires a gradient. The caller attaches backward_fn.
Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   std::initializer_list<const Tensor*> inputs);
Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   const std::vector<Tensor>& inputs);

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b, const char* what);
void require_defined(const char* op, const Tensor& t);

/// View an axis split as [outer, n, inner].
struct AxisView {
    std::size_t outer = 1, n = 1, inner = 1;
};
AxisView axis_view(const Shape& shape, std::size_t axis, const char* op);

}  // namespace ulga
