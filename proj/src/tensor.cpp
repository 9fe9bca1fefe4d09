// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#include "cprgcn/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cprgcn {

#if defined(__GLIBC__)
// Training churns through multi-MB activation and scratch buffers. Above
// glibc's default mmap threshold each one is a fresh mmap that the kernel
// must zero-fill, so allocation cost dwarfs the arithmetic. Raising the
// thresholds keeps those blocks on the reusable heap.
namespace {
const bool malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  return true;
}();
}  // namespace
#endif

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {

std::int64_t next_node_id() {
  thread_local std::int64_t counter = 0;
  return ++counter;
}

}  // namespace detail

namespace {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

Tensor make_leaf(Shape shape, std::vector<double> values, bool track) {
  if (shape_numel(shape) != values.size())
    throw DimensionError("tensor values do not fill shape " +
                         shape_string(shape));
  Tensor t;
  t.n = std::make_shared<detail::TensorNode>();
  t.n->shape = std::move(shape);
  t.n->values = std::move(values);
  t.n->track = track;
  t.n->id = detail::next_node_id();
  return t;
}

bool any_tracked(const std::vector<Tensor>& parents) {
  for (const auto& p : parents)
    if (p.tracked()) return true;
  return false;
}

Tensor make_op(Shape shape, std::vector<double> values,
               std::vector<Tensor> parents,
               const std::function<void(detail::TensorNode&)>& make_backprop) {
  Tensor t = make_leaf(std::move(shape), std::move(values), false);
  if (any_tracked(parents)) {
    t.n->track = true;
    for (auto& p : parents) t.n->parents.push_back(p.n);
    make_backprop(*t.n);
  }
  return t;
}

void require_rank2(const Tensor& a, const char* what) {
  if (a.shape().size() != 2)
    throw DimensionError(std::string(what) + ": expected a matrix, got " +
                         shape_string(a.shape()));
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool track) {
  std::size_t n = shape_numel(shape);
  return make_leaf(std::move(shape), std::vector<double>(n, 0.0), track);
}

Tensor Tensor::full(Shape shape, double value, bool track) {
  std::size_t n = shape_numel(shape);
  return make_leaf(std::move(shape), std::vector<double>(n, value), track);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool track) {
  return make_leaf(std::move(shape), std::move(values), track);
}

Tensor Tensor::scalar(double value, bool track) {
  return make_leaf(Shape{}, {value}, track);
}

Tensor Tensor::uniform(Shape shape, double bound, std::mt19937_64& rng,
                       bool track) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return make_leaf(std::move(shape), std::move(v), track);
}

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return shape()[1];
}

std::vector<double>& Tensor::grad() {
  n->ensure_grad();
  return n->grad;
}

const std::vector<double>& Tensor::grad() const {
  n->ensure_grad();
  return n->grad;
}

double Tensor::item() const {
  if (size() != 1)
    throw ContractViolation("item() on non-scalar tensor " +
                            shape_string(shape()));
  return n->values[0];
}

void Tensor::zero_grad() {
  n->grad.assign(n->values.size(), 0.0);
}

// --- matmul --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner extents disagree, " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), nn = b.cols();
  std::vector<double> out(m * nn);
  {
    ConstMatMap ma(a.values().data(), m, k);
    ConstMatMap mb(b.values().data(), k, nn);
    MatMap mo(out.data(), m, nn);
    mo.noalias() = ma * mb;
  }
  return make_op({m, nn}, std::move(out), {a, b},
                 [a, b, m, k, nn](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [a, b, m, k, nn, np]() {
                     ConstMatMap go(np->grad.data(), m, nn);
                     if (a.tracked()) {
                       a.n->ensure_grad();
                       MatMap ga(a.n->grad.data(), m, k);
                       ConstMatMap mb(b.values().data(), k, nn);
                       ga.noalias() += go * mb.transpose();
                     }
                     if (b.tracked()) {
                       b.n->ensure_grad();
                       MatMap gb(b.n->grad.data(), k, nn);
                       ConstMatMap ma(a.values().data(), m, k);
                       gb.noalias() += ma.transpose() * go;
                     }
                   };
                 });
}

// --- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const bool broadcast =
      b.shape().size() == 1 && a.shape().size() == 2 &&
      b.shape()[0] == a.shape()[1];
  if (!broadcast && a.shape() != b.shape())
    throw DimensionError("add: shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  std::vector<double> out(a.values());
  if (broadcast) {
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b.values()[j];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
  }
  return make_op(a.shape(), std::move(out), {a, b},
                 [a, b, broadcast](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [a, b, broadcast, np]() {
                     if (a.tracked()) {
                       a.n->ensure_grad();
                       for (std::size_t i = 0; i < np->grad.size(); ++i)
                         a.n->grad[i] += np->grad[i];
                     }
                     if (b.tracked()) {
                       b.n->ensure_grad();
                       if (broadcast) {
                         const std::size_t c = b.n->values.size();
                         for (std::size_t i = 0; i < np->grad.size(); ++i)
                           b.n->grad[i % c] += np->grad[i];
                       } else {
                         for (std::size_t i = 0; i < np->grad.size(); ++i)
                           b.n->grad[i] += np->grad[i];
                       }
                     }
                   };
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return add(a, scale(b, -1.0));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] * b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [a, b](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [a, b, np]() {
                     if (a.tracked()) {
                       a.n->ensure_grad();
                       for (std::size_t i = 0; i < np->grad.size(); ++i)
                         a.n->grad[i] += np->grad[i] * b.values()[i];
                     }
                     if (b.tracked()) {
                       b.n->ensure_grad();
                       for (std::size_t i = 0; i < np->grad.size(); ++i)
                         b.n->grad[i] += np->grad[i] * a.values()[i];
                     }
                   };
                 });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  return make_op(a.shape(), std::move(out), {a},
                 [a, c](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [a, c, np]() {
                     if (!a.tracked()) return;
                     a.n->ensure_grad();
                     for (std::size_t i = 0; i < np->grad.size(); ++i)
                       a.n->grad[i] += np->grad[i] * c;
                   };
                 });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  return make_op(a.shape(), std::move(out), {a},
                 [a](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [a, np]() {
                     if (!a.tracked()) return;
                     a.n->ensure_grad();
                     for (std::size_t i = 0; i < np->grad.size(); ++i)
                       if (a.values()[i] > 0.0) a.n->grad[i] += np->grad[i];
                   };
                 });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-a.values()[i]));
  return make_op(a.shape(), std::move(out), {a},
                 [a](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [a, np]() {
                     if (!a.tracked()) return;
                     a.n->ensure_grad();
                     for (std::size_t i = 0; i < np->grad.size(); ++i) {
                       const double y = np->values[i];
                       a.n->grad[i] += np->grad[i] * y * (1.0 - y);
                     }
                   };
                 });
}

Tensor tanh_op(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values()[i]);
  return make_op(a.shape(), std::move(out), {a},
                 [a](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [a, np]() {
                     if (!a.tracked()) return;
                     a.n->ensure_grad();
                     for (std::size_t i = 0; i < np->grad.size(); ++i) {
                       const double y = np->values[i];
                       a.n->grad[i] += np->grad[i] * (1.0 - y * y);
                     }
                   };
                 });
}

Tensor sum(const Tensor& a) {
  double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  return make_op(Shape{}, {s}, {a}, [a](detail::TensorNode& node) {
    auto* np = &node;
    node.backprop = [a, np]() {
      if (!a.tracked()) return;
      a.n->ensure_grad();
      for (auto& g : a.n->grad) g += np->grad[0];
    };
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) +
                         " as " + shape_string(shape));
  std::vector<double> out(a.values());
  return make_op(std::move(shape), std::move(out), {a},
                 [a](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [a, np]() {
                     if (!a.tracked()) return;
                     a.n->ensure_grad();
                     for (std::size_t i = 0; i < np->grad.size(); ++i)
                       a.n->grad[i] += np->grad[i];
                   };
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DegenerateInputError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t ctot = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != r)
      throw DimensionError("concat_cols: row counts differ");
    ctot += p.cols();
  }
  std::vector<double> out(r * ctot);
  std::size_t coff = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.values().data() + i * c, c,
                  out.data() + i * ctot + coff);
    coff += c;
  }
  auto parts_copy = parts;
  return make_op({r, ctot}, std::move(out), parts,
                 [parts_copy, r, ctot](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [parts_copy, r, ctot, np]() {
                     std::size_t coff = 0;
                     for (const auto& p : parts_copy) {
                       const std::size_t c = p.cols();
                       if (p.tracked()) {
                         p.n->ensure_grad();
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                             p.n->grad[i * c + j] +=
                                 np->grad[i * ctot + coff + j];
                       }
                       coff += c;
                     }
                   };
                 });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DegenerateInputError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t rtot = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != c)
      throw DimensionError("concat_rows: column counts differ");
    rtot += p.rows();
  }
  std::vector<double> out;
  out.reserve(rtot * c);
  for (const auto& p : parts)
    out.insert(out.end(), p.values().begin(), p.values().end());
  auto parts_copy = parts;
  return make_op({rtot, c}, std::move(out), parts,
                 [parts_copy](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [parts_copy, np]() {
                     std::size_t off = 0;
                     for (const auto& p : parts_copy) {
                       if (p.tracked()) {
                         p.n->ensure_grad();
                         for (std::size_t i = 0; i < p.size(); ++i)
                           p.n->grad[i] += np->grad[off + i];
                       }
                       off += p.size();
                     }
                   };
                 });
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  require_rank2(a, "slice_cols");
  if (c0 >= c1 || c1 > a.cols())
    throw DimensionError("slice_cols: bad range");
  const std::size_t r = a.rows(), c = a.cols(), w = c1 - c0;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(a.values().data() + i * c + c0, w, out.data() + i * w);
  return make_op({r, w}, std::move(out), {a},
                 [a, c0, r, c, w](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [a, c0, r, c, w, np]() {
                     if (!a.tracked()) return;
                     a.n->ensure_grad();
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < w; ++j)
                         a.n->grad[i * c + c0 + j] += np->grad[i * w + j];
                   };
                 });
}

Tensor stack_rows(const std::vector<std::pair<Tensor, std::size_t>>& rows) {
  if (rows.empty()) throw DegenerateInputError("stack_rows: no inputs");
  const std::size_t c = rows[0].first.cols();
  std::vector<double> out;
  out.reserve(rows.size() * c);
  std::vector<Tensor> parents;
  for (const auto& [t, r] : rows) {
    require_rank2(t, "stack_rows");
    if (t.cols() != c) throw DimensionError("stack_rows: column mismatch");
    if (r >= t.rows()) throw DimensionError("stack_rows: row out of range");
    out.insert(out.end(), t.values().begin() + r * c,
               t.values().begin() + (r + 1) * c);
    parents.push_back(t);
  }
  auto rows_copy = rows;
  return make_op({rows.size(), c}, std::move(out), parents,
                 [rows_copy, c](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [rows_copy, c, np]() {
                     for (std::size_t i = 0; i < rows_copy.size(); ++i) {
                       const auto& [t, r] = rows_copy[i];
                       if (!t.tracked()) continue;
                       t.n->ensure_grad();
                       for (std::size_t j = 0; j < c; ++j)
                         t.n->grad[r * c + j] += np->grad[i * c + j];
                     }
                   };
                 });
}

// --- conv3d --------------------------------------------------------------

namespace {

// im2col for same-padded 3x3x3 kernels: (C_in*27) x (D*H*W).
void im2col3(const double* in, std::size_t ci, std::size_t d, std::size_t h,
             std::size_t w, std::vector<double>& col) {
  const std::size_t nvox = d * h * w;
  col.assign(ci * 27 * nvox, 0.0);
  for (std::size_t c = 0; c < ci; ++c) {
    const double* plane = in + c * nvox;
    std::size_t kidx = 0;
    for (int kd = -1; kd <= 1; ++kd)
      for (int kh = -1; kh <= 1; ++kh)
        for (int kw = -1; kw <= 1; ++kw, ++kidx) {
          double* dst = col.data() + (c * 27 + kidx) * nvox;
          for (std::size_t z = 0; z < d; ++z) {
            const long sz = static_cast<long>(z) + kd;
            if (sz < 0 || sz >= static_cast<long>(d)) continue;
            for (std::size_t y = 0; y < h; ++y) {
              const long sy = static_cast<long>(y) + kh;
              if (sy < 0 || sy >= static_cast<long>(h)) continue;
              const long x0 = std::max(0L, static_cast<long>(-kw));
              const long x1 =
                  std::min(static_cast<long>(w), static_cast<long>(w) - kw);
              const double* src = plane + (sz * h + sy) * w + kw;
              double* row = dst + (z * h + y) * w;
              for (long x = x0; x < x1; ++x) row[x] = src[x];
            }
          }
        }
  }
}

void col2im3(const double* col, std::size_t ci, std::size_t d, std::size_t h,
             std::size_t w, double* out) {
  const std::size_t nvox = d * h * w;
  for (std::size_t c = 0; c < ci; ++c) {
    double* plane = out + c * nvox;
    std::size_t kidx = 0;
    for (int kd = -1; kd <= 1; ++kd)
      for (int kh = -1; kh <= 1; ++kh)
        for (int kw = -1; kw <= 1; ++kw, ++kidx) {
          const double* src0 = col + (c * 27 + kidx) * nvox;
          for (std::size_t z = 0; z < d; ++z) {
            const long sz = static_cast<long>(z) + kd;
            if (sz < 0 || sz >= static_cast<long>(d)) continue;
            for (std::size_t y = 0; y < h; ++y) {
              const long sy = static_cast<long>(y) + kh;
              if (sy < 0 || sy >= static_cast<long>(h)) continue;
              const long x0 = std::max(0L, static_cast<long>(-kw));
              const long x1 =
                  std::min(static_cast<long>(w), static_cast<long>(w) - kw);
              double* dst = plane + (sz * h + sy) * w + kw;
              const double* row = src0 + (z * h + y) * w;
              for (long x = x0; x < x1; ++x) dst[x] += row[x];
            }
          }
        }
  }
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  if (input.shape().size() != 4)
    throw DimensionError("conv3d: input must be C_in x D x H x W, got " +
                         shape_string(input.shape()));
  if (kernels.shape().size() != 5)
    throw DimensionError("conv3d: kernels must be rank 5, got " +
                         shape_string(kernels.shape()));
  const std::size_t ci = input.shape()[0], d = input.shape()[1],
                    h = input.shape()[2], w = input.shape()[3];
  const std::size_t co = kernels.shape()[0];
  if (kernels.shape()[2] != 3 || kernels.shape()[3] != 3 ||
      kernels.shape()[4] != 3)
    throw UnsupportedConfigError("conv3d: only 3x3x3 kernels are supported");
  if (kernels.shape()[1] != ci)
    throw DimensionError("conv3d: kernel in-channels " +
                         std::to_string(kernels.shape()[1]) +
                         " do not match input channels " + std::to_string(ci));
  if (bias.shape() != Shape{co})
    throw DimensionError("conv3d: bias shape mismatch");
  if (d < 3 || h < 3 || w < 3)
    throw DimensionError("conv3d: spatial extents must be >= 3");

  const std::size_t nvox = d * h * w, krows = ci * 27;
  std::vector<double> out(co * nvox);
  {
    // The im2col buffer is scratch only: retaining it on the tape would cost
    // ~10 MB per 24^3 cube, so the backward pass rebuilds it instead. The
    // thread_local keeps one reusable allocation per thread.
    thread_local std::vector<double> col;
    im2col3(input.values().data(), ci, d, h, w, col);
    ConstMatMap mk(kernels.values().data(), co, krows);
    ConstMatMap mc(col.data(), krows, nvox);
    MatMap mo(out.data(), co, nvox);
    mo.noalias() = mk * mc;
    for (std::size_t c = 0; c < co; ++c)
      mo.row(c).array() += bias.values()[c];
  }
  return make_op(
      {co, d, h, w}, std::move(out), {input, kernels, bias},
      [input, kernels, bias, ci, d, h, w, co, nvox,
       krows](detail::TensorNode& node) {
        auto* np = &node;
        node.backprop = [input, kernels, bias, ci, d, h, w, co, nvox,
                         krows, np]() {
          ConstMatMap go(np->grad.data(), co, nvox);
          if (kernels.tracked()) {
            kernels.n->ensure_grad();
            thread_local std::vector<double> col;
            im2col3(input.values().data(), ci, d, h, w, col);
            MatMap gk(kernels.n->grad.data(), co, krows);
            ConstMatMap mc(col.data(), krows, nvox);
            gk.noalias() += go * mc.transpose();
          }
          if (bias.tracked()) {
            bias.n->ensure_grad();
            for (std::size_t c = 0; c < co; ++c)
              bias.n->grad[c] += go.row(c).sum();
          }
          if (input.tracked()) {
            input.n->ensure_grad();
            thread_local std::vector<double> gcol;
            gcol.resize(krows * nvox);
            MatMap mgc(gcol.data(), krows, nvox);
            ConstMatMap mk(kernels.values().data(), co, krows);
            mgc.noalias() = mk.transpose() * go;
            col2im3(gcol.data(), ci, d, h, w, input.n->grad.data());
          }
        };
      });
}

Tensor maxpool3d(const Tensor& input) {
  if (input.shape().size() != 4)
    throw DimensionError("maxpool3d: input must be C x D x H x W");
  const std::size_t c = input.shape()[0], d = input.shape()[1],
                    h = input.shape()[2], w = input.shape()[3];
  if (d % 2 || h % 2 || w % 2)
    throw DimensionError("maxpool3d: spatial extents must be even, got " +
                         shape_string(input.shape()));
  const std::size_t od = d / 2, oh = h / 2, ow = w / 2;
  std::vector<double> out(c * od * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& in = input.values();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t dz = 0; dz < 2; ++dz)
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t idx =
                    ((ch * d + 2 * z + dz) * h + 2 * y + dy) * w + 2 * x + dx;
                if (in[idx] > best) {  // strict: first occurrence wins ties
                  best = in[idx];
                  best_idx = idx;
                }
              }
          const std::size_t oidx = ((ch * od + z) * oh + y) * ow + x;
          out[oidx] = best;
          (*argmax)[oidx] = best_idx;
        }
  return make_op({c, od, oh, ow}, std::move(out), {input},
                 [input, argmax](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [input, argmax, np]() {
                     if (!input.tracked()) return;
                     input.n->ensure_grad();
                     for (std::size_t i = 0; i < np->grad.size(); ++i)
                       input.n->grad[(*argmax)[i]] += np->grad[i];
                   };
                 });
}

// --- lstm cell -----------------------------------------------------------

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h_prev,
                                    const Tensor& c_prev,
                                    const LstmCellParams& p) {
  const std::size_t dd = x.cols(), k = h_prev.cols();
  if (p.w_x.rows() != dd || p.w_x.cols() != 4 * k || p.w_h.rows() != k ||
      p.w_h.cols() != 4 * k || p.b.shape() != Shape{4 * k} ||
      c_prev.shape() != h_prev.shape() || x.rows() != h_prev.rows())
    throw DimensionError("lstm_cell: inconsistent parameter shapes");
  Tensor pre = add(add(matmul(x, p.w_x), matmul(h_prev, p.w_h)), p.b);
  Tensor ig = sigmoid(slice_cols(pre, 0, k));
  Tensor fg = sigmoid(slice_cols(pre, k, 2 * k));
  Tensor gg = tanh_op(slice_cols(pre, 2 * k, 3 * k));
  Tensor og = sigmoid(slice_cols(pre, 3 * k, 4 * k));
  Tensor c = add(mul(fg, c_prev), mul(ig, gg));
  Tensor h = mul(og, tanh_op(c));
  return {h, c};
}

// --- softmax cross entropy -----------------------------------------------

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels) {
  require_rank2(logits, "softmax_cross_entropy");
  const std::size_t r = logits.rows(), c = logits.cols();
  if (labels.size() != r)
    throw ContractViolation("softmax_cross_entropy: " +
                            std::to_string(labels.size()) + " labels for " +
                            std::to_string(r) + " rows");
  for (int lbl : labels)
    if (lbl < 0 || static_cast<std::size_t>(lbl) >= c)
      throw InvalidLabelError("label " + std::to_string(lbl) +
                              " out of range [0, " + std::to_string(c) + ")");
  auto probs = std::make_shared<std::vector<double>>(r * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = logits.values().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    const double lse = mx + std::log(denom);
    loss += lse - row[labels[i]];
    for (std::size_t j = 0; j < c; ++j)
      (*probs)[i * c + j] = std::exp(row[j] - lse);
  }
  loss /= static_cast<double>(r);
  auto labels_copy = labels;
  return make_op(Shape{}, {loss}, {logits},
                 [logits, probs, labels_copy, r, c](detail::TensorNode& node) {
                   auto* np = &node;
                   node.backprop = [logits, probs, labels_copy, r, c, np]() {
                     if (!logits.tracked()) return;
                     logits.n->ensure_grad();
                     const double g = np->grad[0] / static_cast<double>(r);
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < c; ++j) {
                         double p = (*probs)[i * c + j];
                         if (static_cast<std::size_t>(labels_copy[i]) == j)
                           p -= 1.0;
                         logits.n->grad[i * c + j] += g * p;
                       }
                   };
                 });
}

// --- backward -------------------------------------------------------------

void backward(Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractViolation("backward: loss must be a scalar tensor");
  if (!loss.tracked())
    throw ContractViolation("backward: loss is not on an active tape");

  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  std::vector<detail::TensorNode*> stack{loss.n.get()};
  seen.insert(loss.n.get());
  while (!stack.empty()) {
    auto* node = stack.back();
    stack.pop_back();
    order.push_back(node);
    for (auto& p : node->parents)
      if (p->track && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](auto* a, auto* b) { return a->id > b->id; });
  for (auto* node : order) node->ensure_grad();
  loss.n->grad[0] = 1.0;
  for (auto* node : order)
    if (node->backprop) node->backprop();
}

}  // namespace cprgcn
