// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#ifndef CPRGCN_TENSOR_HPP
#define CPRGCN_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cprgcn {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class UnsupportedConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class InvalidLabelError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class ContractViolation : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class DegenerateInputError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string shape_string(const Shape& s);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool track = false;
  std::int64_t id = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

std::int64_t next_node_id();

}  // namespace detail

/// Dense n-dimensional array of 64-bit reals with optional reverse-mode
/// gradient tracking. Copies share the underlying node (value semantics on
/// the handle, reference semantics on storage, like most tape engines).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool track = false);
  static Tensor full(Shape shape, double value, bool track = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool track = false);
  static Tensor scalar(double value, bool track = false);
  /// Uniform values in [-bound, bound].
  static Tensor uniform(Shape shape, double bound, std::mt19937_64& rng,
                        bool track = true);

  bool defined() const { return static_cast<bool>(n); }
  const Shape& shape() const { return n->shape; }
  std::size_t size() const { return n->values.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::vector<double>& values() { return n->values; }
  const std::vector<double>& values() const { return n->values; }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;

  bool tracked() const { return n->track; }
  std::int64_t id() const { return n->id; }
  double item() const;
  void zero_grad();

  std::shared_ptr<detail::TensorNode> n;
};

// --- elementwise and linear-algebra ops ---------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// b must match a's shape, or be a length-cols(a) vector broadcast per row.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
/// Gathers rows, possibly from different tensors, into a new matrix.
Tensor stack_rows(const std::vector<std::pair<Tensor, std::size_t>>& rows);

// --- network ops ---------------------------------------------------------

/// Same-padded 3x3x3 cross-correlation. input: C_in x D x H x W,
/// kernels: C_out x C_in x 3 x 3 x 3, bias: C_out.
Tensor conv3d(const Tensor& input, const Tensor& kernels, const Tensor& bias);

/// Non-overlapping 2x2x2 max pooling; gradient goes to the first argmax in
/// scan order.
Tensor maxpool3d(const Tensor& input);

struct LstmCellParams {
  Tensor w_x;  // d x 4k, gate order [i, f, g, o]
  Tensor w_h;  // k x 4k
  Tensor b;    // 4k
};

/// One LSTM step on a batch: x is B x d, h/c are B x k.
std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h_prev,
                                    const Tensor& c_prev,
                                    const LstmCellParams& p);

/// Mean over rows of -log softmax(logits)[label], row-max stabilized.
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels);

/// Reverse topological sweep from a scalar loss; gradients accumulate
/// additively across fan-out.
void backward(Tensor& loss);

}  // namespace cprgcn

#endif  // CPRGCN_TENSOR_HPP
