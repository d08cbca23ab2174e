#pragma once

#include "bks/autograd.hpp"

namespace bks {

// [m×k] · [k×n] → [m×n]
Var matmul(const Var& a, const Var& b);

// Elementwise; shapes must match.
Var add(const Var& a, const Var& b);

// Adds a length-n row vector to every row of an [m×n] matrix.
Var add_row(const Var& x, const Var& row);

Var relu(const Var& a);

Var scale(const Var& a, double factor);

// Mean of squared differences over all elements, as a scalar.
Var mse_loss(const Var& pred, const Var& target);

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b);
// a^T · b and a · b^T without materialising the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);

} // namespace kernels
} // namespace bks
