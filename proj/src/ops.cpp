// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "memprobe/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "memprobe/error.hpp"

namespace memprobe {
namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;
template <typename S>
using Strided = Eigen::Map<RowMat<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using ConstStrided = Eigen::Map<const RowMat<S>, 0, Eigen::OuterStride<>>;

template <typename S>
ConstMatMap<S> cmat(const BasicTensor<S>& t) {
  return ConstMatMap<S>(t.data().data(), t.rows(), t.cols());
}

template <typename S>
MatMap<S> mat(BasicTensor<S>& t) {
  return MatMap<S>(t.data().data(), t.rows(), t.cols());
}

template <typename S>
MatMap<S> gmat(BasicTensor<S>& t) {
  return MatMap<S>(t.grad_buffer().data(), t.rows(), t.cols());
}

template <typename S>
ConstMatMap<S> cgmat(const BasicTensor<S>& t) {
  return ConstMatMap<S>(t.grad().data(), t.rows(), t.cols());
}

/// Tape to record on, if any input needs a gradient.
template <typename S, typename... Ts>
BasicTape<S>* recording(const Ts&... inputs) {
  auto* tape = active_tape<S>();
  if (tape == nullptr) return nullptr;
  return (inputs.requires_grad() || ...) ? tape : nullptr;
}

template <typename S>
void require_rank2(const BasicTensor<S>& t, const char* op) {
  if (!t.defined() || t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         (t.defined() ? shape_str(t.shape()) : std::string("null")));
  }
}

template <typename S>
void require_same_shape(const BasicTensor<S>& a, const BasicTensor<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

/// Adds delta into t's gradient, or copies it when t has none yet.
template <typename S>
void accumulate(BasicTensor<S>& t, std::span<const S> delta) {
  if (!t.has_grad()) {
    auto g = t.fresh_grad();
    std::copy(delta.begin(), delta.end(), g.begin());
    return;
  }
  auto g = t.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

/// g[i] (+)= delta(i) over t's gradient.
template <typename S, typename F>
void accumulate_with(BasicTensor<S>& t, F delta) {
  const auto n = static_cast<std::size_t>(t.numel());
  if (!t.has_grad()) {
    auto g = t.fresh_grad();
    for (std::size_t i = 0; i < n; ++i) g[i] = delta(i);
    return;
  }
  auto g = t.grad();
  for (std::size_t i = 0; i < n; ++i) g[i] += delta(i);
}

/// Matrix-expression version of accumulate.
template <typename S, typename Expr>
void accumulate_mat(BasicTensor<S>& t, const Expr& expr) {
  if (!t.has_grad()) {
    MatMap<S>(t.fresh_grad().data(), t.rows(), t.cols()).noalias() = expr;
  } else {
    MatMap<S>(t.grad().data(), t.rows(), t.cols()).noalias() += expr;
  }
}

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using VecMap = Eigen::Map<Vec<S>>;
template <typename S>
using ConstVecMap = Eigen::Map<const Vec<S>>;
template <typename S>
using ArrMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstArrMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

}  // namespace

template <typename S>
BasicTensor<S> matmul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  auto out = a.dim(1) > 0 ? BasicTensor<S>::uninitialized({a.dim(0), b.dim(1)})
                          : BasicTensor<S>::zeros({a.dim(0), b.dim(1)});
  if (a.dim(1) > 0) mat(out).noalias() = cmat(a) * cmat(b);
  if (auto* tape = recording<S>(a, b)) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out]() mutable {
      if (!out.has_grad()) return;
      auto dy = cgmat(out);
      if (a.requires_grad()) accumulate_mat(a, dy * cmat(b).transpose());
      if (b.requires_grad()) accumulate_mat(b, cmat(a).transpose() * dy);
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> matmul_nt(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: inner dimensions disagree for " + shape_str(a.shape()) +
                         " and transposed " + shape_str(b.shape()));
  }
  auto out = a.dim(1) > 0 ? BasicTensor<S>::uninitialized({a.dim(0), b.dim(0)})
                          : BasicTensor<S>::zeros({a.dim(0), b.dim(0)});
  if (a.dim(1) > 0) mat(out).noalias() = cmat(a) * cmat(b).transpose();
  if (auto* tape = recording<S>(a, b)) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out]() mutable {
      if (!out.has_grad()) return;
      auto dy = cgmat(out);
      if (a.requires_grad()) accumulate_mat(a, dy * cmat(b));
      if (b.requires_grad()) accumulate_mat(b, dy.transpose() * cmat(a));
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> add(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  require_same_shape(a, b, "add");
  auto out = BasicTensor<S>::uninitialized(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (auto* tape = recording<S>(a, b)) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out]() mutable {
      if (!out.has_grad()) return;
      std::span<const S> dy = out.grad();
      if (a.requires_grad()) accumulate(a, dy);
      if (b.requires_grad()) accumulate(b, dy);
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> mul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  require_same_shape(a, b, "mul");
  auto out = BasicTensor<S>::uninitialized(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (auto* tape = recording<S>(a, b)) {
    out.set_requires_grad(true);
    tape->record([a = a, b = b, out]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      auto x = a.data();
      auto y = b.data();
      if (a.requires_grad()) accumulate_with(a, [&](std::size_t i) { return dy[i] * y[i]; });
      if (b.requires_grad()) accumulate_with(b, [&](std::size_t i) { return dy[i] * x[i]; });
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> scale(const BasicTensor<S>& a, S factor) {
  auto out = BasicTensor<S>::uninitialized(a.shape());
  auto x = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (auto* tape = recording<S>(a)) {
    out.set_requires_grad(true);
    tape->record([a = a, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      accumulate_with(a, [&](std::size_t i) { return dy[i] * factor; });
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> sum(const BasicTensor<S>& a) {
  S total = 0;
  for (S v : a.data()) total += v;
  auto out = BasicTensor<S>::scalar(total);
  if (auto* tape = recording<S>(a)) {
    out.set_requires_grad(true);
    tape->record([a = a, out]() mutable {
      if (!out.has_grad()) return;
      const S dy = out.grad()[0];
      for (S& g : a.grad_buffer()) g += dy;
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> softmax_rows(const BasicTensor<S>& x) {
  if (x.cols() < 1) throw DimensionError("softmax_rows: last dimension must be >= 1");
  auto out = BasicTensor<S>::uninitialized(x.shape());
  const std::int64_t rows = x.rows();
  const std::int64_t n = x.cols();
  auto in = x.data();
  auto o = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xr = in.data() + r * n;
    S* yr = o.data() + r * n;
    const S mx = *std::max_element(xr, xr + n);
    S total = 0;
    for (std::int64_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    for (std::int64_t j = 0; j < n; ++j) yr[j] /= total;
  }
  if (auto* tape = recording<S>(x)) {
    out.set_requires_grad(true);
    tape->record([x = x, out, rows, n]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      auto y = out.data();
      auto g = x.grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r) {
        S dot = 0;
        for (std::int64_t j = 0; j < n; ++j) dot += dy[r * n + j] * y[r * n + j];
        for (std::int64_t j = 0; j < n; ++j) {
          g[r * n + j] += y[r * n + j] * (dy[r * n + j] - dot);
        }
      }
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> layer_norm(const BasicTensor<S>& x, const BasicTensor<S>& gamma,
                          const BasicTensor<S>& beta, S eps) {
  const std::int64_t d = x.cols();
  if (d < 1) throw DimensionError("layer_norm: feature dimension must be >= 1");
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                         shape_str(beta.shape()) + " do not match width " + std::to_string(d));
  }
  const std::int64_t rows = x.rows();
  auto out = BasicTensor<S>::uninitialized(x.shape());
  Buffer<S> xhat(static_cast<std::size_t>(rows * d));
  Buffer<S> rstd(static_cast<std::size_t>(rows));
  auto in = x.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  auto o = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xr = in.data() + r * d;
    double mean = 0;
    for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const S rs = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    rstd[r] = rs;
    for (std::int64_t j = 0; j < d; ++j) {
      const S h = static_cast<S>(xr[j] - mean) * rs;
      xhat[r * d + j] = h;
      o[r * d + j] = h * gm[j] + bt[j];
    }
  }
  if (auto* tape = recording<S>(x, gamma, beta)) {
    out.set_requires_grad(true);
    tape->record([x = x, gamma = gamma, beta = beta, out, xhat = std::move(xhat), rstd = std::move(rstd), rows, d]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      auto gm = gamma.data();
      if (gamma.requires_grad()) {
        auto g = gamma.grad_buffer();
        for (std::int64_t r = 0; r < rows; ++r) {
          for (std::int64_t j = 0; j < d; ++j) g[j] += dy[r * d + j] * xhat[r * d + j];
        }
      }
      if (beta.requires_grad()) {
        auto g = beta.grad_buffer();
        for (std::int64_t r = 0; r < rows; ++r) {
          for (std::int64_t j = 0; j < d; ++j) g[j] += dy[r * d + j];
        }
      }
      if (x.requires_grad()) {
        const bool fresh = !x.has_grad();
        auto g = fresh ? x.fresh_grad() : x.grad();
        const S inv_d = S(1) / static_cast<S>(d);
        for (std::int64_t r = 0; r < rows; ++r) {
          S mean_dh = 0;
          S mean_dh_h = 0;
          for (std::int64_t j = 0; j < d; ++j) {
            const S dh = dy[r * d + j] * gm[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + j];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::int64_t j = 0; j < d; ++j) {
            const S dh = dy[r * d + j] * gm[j];
            const S delta = rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
            g[r * d + j] = fresh ? delta : g[r * d + j] + delta;
          }
        }
      }
    });
  }
  return out;
}

namespace {

template <typename S>
constexpr S kGeluC = S(0.7978845608028654);  // sqrt(2/pi)
template <typename S>
constexpr S kGeluA = S(0.044715);

}  // namespace

template <typename S>
BasicTensor<S> gelu(const BasicTensor<S>& x) {
  const auto n = static_cast<Eigen::Index>(x.numel());
  auto out = BasicTensor<S>::uninitialized(x.shape());
  ConstArrMap<S> in(x.data().data(), n);
  // tanh values are kept for the backward pass.
  Eigen::Array<S, Eigen::Dynamic, 1> t = (kGeluC<S> * (in + kGeluA<S> * in.cube())).tanh();
  ArrMap<S>(out.data().data(), n) = S(0.5) * in * (S(1) + t);
  if (auto* tape = recording<S>(x)) {
    out.set_requires_grad(true);
    tape->record([x = x, out, t = std::move(t), n]() mutable {
      if (!out.has_grad()) return;
      ConstArrMap<S> in(x.data().data(), n);
      ConstArrMap<S> dy(out.grad().data(), n);
      auto delta = dy * (S(0.5) * (S(1) + t) + S(0.5) * in * (S(1) - t.square()) * kGeluC<S> *
                                                   (S(1) + S(3) * kGeluA<S> * in.square()));
      if (x.has_grad()) {
        ArrMap<S>(x.grad().data(), n) += delta;
      } else {
        ArrMap<S>(x.fresh_grad().data(), n) = delta;
      }
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> silu(const BasicTensor<S>& x) {
  const auto n = static_cast<Eigen::Index>(x.numel());
  auto out = BasicTensor<S>::uninitialized(x.shape());
  ConstArrMap<S> in(x.data().data(), n);
  Eigen::Array<S, Eigen::Dynamic, 1> sig = S(1) / (S(1) + (-in).exp());
  ArrMap<S>(out.data().data(), n) = in * sig;
  if (auto* tape = recording<S>(x)) {
    out.set_requires_grad(true);
    tape->record([x = x, out, sig = std::move(sig), n]() mutable {
      if (!out.has_grad()) return;
      ConstArrMap<S> in(x.data().data(), n);
      ConstArrMap<S> dy(out.grad().data(), n);
      auto delta = dy * sig * (S(1) + in * (S(1) - sig));
      if (x.has_grad()) {
        ArrMap<S>(x.grad().data(), n) += delta;
      } else {
        ArrMap<S>(x.fresh_grad().data(), n) = delta;
      }
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> embedding(const BasicTensor<S>& table, std::span<const TokenId> ids) {
  require_rank2(table, "embedding");
  const std::int64_t vocab = table.dim(0);
  const std::int64_t d = table.dim(1);
  for (TokenId id : ids) {
    if (id < 0 || id >= vocab) {
      throw IndexError("embedding: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  const auto n = static_cast<std::int64_t>(ids.size());
  auto out = BasicTensor<S>::uninitialized({n, d});
  auto src = table.data();
  auto o = out.data();
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(src.data() + ids[i] * d, d, o.data() + i * d);
  }
  if (auto* tape = recording<S>(table)) {
    out.set_requires_grad(true);
    tape->record([table = table, out, ids = std::vector<TokenId>(ids.begin(), ids.end()), d]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      auto g = table.grad_buffer();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        S* row = g.data() + ids[i] * d;
        const S* dr = dy.data() + static_cast<std::int64_t>(i) * d;
        for (std::int64_t j = 0; j < d; ++j) row[j] += dr[j];
      }
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> add_positional(const BasicTensor<S>& x, const BasicTensor<S>& table,
                              std::int64_t seq_len) {
  require_rank2(table, "add_positional");
  const std::int64_t d = x.cols();
  const std::int64_t rows = x.rows();
  if (table.dim(1) != d) {
    throw DimensionError("add_positional: table " + shape_str(table.shape()) +
                         " does not match width " + std::to_string(d));
  }
  if (seq_len < 1 || seq_len > table.dim(0) || rows % seq_len != 0) {
    throw DimensionError("add_positional: sequence length " + std::to_string(seq_len) +
                         " incompatible with " + std::to_string(rows) + " rows and " +
                         std::to_string(table.dim(0)) + " positions");
  }
  auto out = BasicTensor<S>::uninitialized(x.shape());
  auto in = x.data();
  auto pos = table.data();
  auto o = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t t = r % seq_len;
    for (std::int64_t j = 0; j < d; ++j) o[r * d + j] = in[r * d + j] + pos[t * d + j];
  }
  if (auto* tape = recording<S>(x, table)) {
    out.set_requires_grad(true);
    tape->record([x = x, table = table, out, seq_len, rows, d]() mutable {
      if (!out.has_grad()) return;
      std::span<const S> dy = out.grad();
      if (x.requires_grad()) accumulate(x, dy);
      if (table.requires_grad()) {
        auto g = table.grad_buffer();
        for (std::int64_t r = 0; r < rows; ++r) {
          const std::int64_t t = r % seq_len;
          for (std::int64_t j = 0; j < d; ++j) g[t * d + j] += dy[r * d + j];
        }
      }
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> concat_rows(std::span<const BasicTensor<S>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::int64_t d = parts.front().cols();
  std::int64_t rows = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.cols() != d) {
      throw DimensionError("concat_rows: width mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    rows += p.rows();
    any_grad = any_grad || p.requires_grad();
  }
  auto out = BasicTensor<S>::uninitialized({rows, d});
  auto o = out.data();
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), o.begin() + offset);
    offset += p.numel();
  }
  auto* tape = active_tape<S>();
  if (tape != nullptr && any_grad) {
    out.set_requires_grad(true);
    tape->record([parts = std::vector<BasicTensor<S>>(parts.begin(), parts.end()), out]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      std::int64_t offset = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) accumulate<S>(p, dy.subspan(offset, p.numel()));
        offset += p.numel();
      }
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> concat_cols(std::span<const BasicTensor<S>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::int64_t rows = parts.front().rows();
  std::int64_t cols = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    cols += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  auto out = BasicTensor<S>::uninitialized({rows, cols});
  auto o = out.data();
  std::int64_t col0 = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.cols();
    auto src = p.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      std::copy_n(src.data() + r * w, w, o.data() + r * cols + col0);
    }
    col0 += w;
  }
  auto* tape = active_tape<S>();
  if (tape != nullptr && any_grad) {
    out.set_requires_grad(true);
    tape->record([parts = std::vector<BasicTensor<S>>(parts.begin(), parts.end()), out, rows, cols]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      std::int64_t col0 = 0;
      for (auto& p : parts) {
        const std::int64_t w = p.cols();
        if (p.requires_grad()) {
          auto g = p.grad_buffer();
          for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t j = 0; j < w; ++j) g[r * w + j] += dy[r * cols + col0 + j];
          }
        }
        col0 += w;
      }
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> slice_rows(const BasicTensor<S>& x, std::int64_t begin, std::int64_t count) {
  const std::int64_t d = x.cols();
  if (begin < 0 || count < 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_str(x.shape()));
  }
  auto out = BasicTensor<S>::uninitialized({count, d});
  auto src = x.data().subspan(begin * d, count * d);
  std::copy(src.begin(), src.end(), out.data().begin());
  if (auto* tape = recording<S>(x)) {
    out.set_requires_grad(true);
    tape->record([x = x, out, begin, d]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      if (!x.has_grad() && begin == 0 && static_cast<std::int64_t>(dy.size()) == x.numel()) {
        accumulate<S>(x, dy);
        return;
      }
      auto g = x.grad_buffer().subspan(begin * d, dy.size());
      for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> slice_cols(const BasicTensor<S>& x, std::int64_t begin, std::int64_t count) {
  const std::int64_t rows = x.rows();
  const std::int64_t cols = x.cols();
  if (begin < 0 || count < 0 || begin + count > cols) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_str(x.shape()));
  }
  auto out = BasicTensor<S>::uninitialized({rows, count});
  auto src = x.data();
  auto o = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy_n(src.data() + r * cols + begin, count, o.data() + r * count);
  }
  if (auto* tape = recording<S>(x)) {
    out.set_requires_grad(true);
    tape->record([x = x, out, begin, count, rows, cols]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      auto g = x.grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < count; ++j) g[r * cols + begin + j] += dy[r * count + j];
      }
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> attention(const BasicTensor<S>& q, const BasicTensor<S>& k,
                         const BasicTensor<S>& v, std::int64_t batch, std::int64_t heads,
                         bool causal) {
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  require_rank2(q, "attention");
  const std::int64_t rows = q.dim(0);
  const std::int64_t d = q.dim(1);
  if (batch < 1 || rows % batch != 0) {
    throw DimensionError("attention: " + std::to_string(rows) + " rows do not split into " +
                         std::to_string(batch) + " sequences");
  }
  if (heads < 1 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::int64_t T = rows / batch;
  const std::int64_t hd = d / heads;
  const S scale_factor = S(1) / std::sqrt(static_cast<S>(hd));
  auto out = BasicTensor<S>::uninitialized(q.shape());
  // Row-normalised probabilities per (sequence, head); entries above the
  // diagonal stay zero under the causal mask.
  Buffer<S> probs(static_cast<std::size_t>(batch * heads * T * T), S(0));

  const S* qd = q.data().data();
  const S* kd = k.data().data();
  const S* vd = v.data().data();
  S* od = out.data().data();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t h = 0; h < heads; ++h) {
      const std::int64_t base = b * T * d + h * hd;
      S* P = probs.data() + (b * heads + h) * T * T;
      for (std::int64_t i = 0; i < T; ++i) {
        const std::int64_t limit = causal ? i + 1 : T;
        ConstVecMap<S> qi(qd + base + i * d, hd);
        S* pi = P + i * T;
        S mx = -std::numeric_limits<S>::infinity();
        for (std::int64_t j = 0; j < limit; ++j) {
          pi[j] = qi.dot(ConstVecMap<S>(kd + base + j * d, hd)) * scale_factor;
          mx = std::max(mx, pi[j]);
        }
        S total = 0;
        for (std::int64_t j = 0; j < limit; ++j) {
          pi[j] = std::exp(pi[j] - mx);
          total += pi[j];
        }
        const S inv = S(1) / total;
        VecMap<S> oi(od + base + i * d, hd);
        oi.setZero();
        for (std::int64_t j = 0; j < limit; ++j) {
          pi[j] *= inv;
          oi.noalias() += pi[j] * ConstVecMap<S>(vd + base + j * d, hd);
        }
      }
    }
  }

  if (auto* tape = recording<S>(q, k, v)) {
    out.set_requires_grad(true);
    tape->record([q = q, k = k, v = v, out, probs = std::move(probs), batch, heads, T, d, hd,
                  scale_factor, causal]() mutable {
      if (!out.has_grad()) return;
      const S* qd = q.data().data();
      const S* kd = k.data().data();
      const S* vd = v.data().data();
      const S* dod = out.grad().data();
      S* gq = q.requires_grad() ? q.grad_buffer().data() : nullptr;
      S* gk = k.requires_grad() ? k.grad_buffer().data() : nullptr;
      S* gv = v.requires_grad() ? v.grad_buffer().data() : nullptr;
      Buffer<S> ds(static_cast<std::size_t>(T));
      for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t h = 0; h < heads; ++h) {
          const std::int64_t base = b * T * d + h * hd;
          const S* P = probs.data() + (b * heads + h) * T * T;
          for (std::int64_t i = 0; i < T; ++i) {
            const std::int64_t limit = causal ? i + 1 : T;
            const S* pi = P + i * T;
            ConstVecMap<S> doi(dod + base + i * d, hd);
            if (gv != nullptr) {
              for (std::int64_t j = 0; j < limit; ++j) {
                VecMap<S>(gv + base + j * d, hd).noalias() += pi[j] * doi;
              }
            }
            if (gq == nullptr && gk == nullptr) continue;
            S dot = 0;
            for (std::int64_t j = 0; j < limit; ++j) {
              ds[j] = doi.dot(ConstVecMap<S>(vd + base + j * d, hd));
              dot += ds[j] * pi[j];
            }
            for (std::int64_t j = 0; j < limit; ++j) ds[j] = pi[j] * (ds[j] - dot) * scale_factor;
            if (gq != nullptr) {
              VecMap<S> gqi(gq + base + i * d, hd);
              for (std::int64_t j = 0; j < limit; ++j) {
                gqi.noalias() += ds[j] * ConstVecMap<S>(kd + base + j * d, hd);
              }
            }
            if (gk != nullptr) {
              ConstVecMap<S> qi(qd + base + i * d, hd);
              for (std::int64_t j = 0; j < limit; ++j) {
                VecMap<S>(gk + base + j * d, hd).noalias() += ds[j] * qi;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename S>
BasicTensor<S> masked_cross_entropy(const BasicTensor<S>& logits, std::span<const TokenId> targets,
                                    std::span<const std::uint8_t> mask) {
  const std::int64_t rows = logits.rows();
  const std::int64_t vocab = logits.cols();
  if (static_cast<std::int64_t>(targets.size()) != rows ||
      static_cast<std::int64_t>(mask.size()) != rows) {
    throw DimensionError("masked_cross_entropy: " + std::to_string(targets.size()) +
                         " targets / " + std::to_string(mask.size()) + " mask entries for " +
                         std::to_string(rows) + " logit rows");
  }
  std::int64_t count = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    ++count;
    if (targets[r] < 0 || targets[r] >= vocab) {
      throw IndexError("masked_cross_entropy: target id " + std::to_string(targets[r]) +
                       " at row " + std::to_string(r) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  if (count == 0) throw ContractError("masked_cross_entropy: invalid mask, no position selected");

  auto x = logits.data();
  std::vector<double> lse(static_cast<std::size_t>(rows), 0.0);
  double total = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    const S* xr = x.data() + r * vocab;
    ConstArrMap<S> row(xr, vocab);
    const S mx = row.maxCoeff();
    const double acc = (row - mx).exp().template cast<double>().sum();
    lse[r] = static_cast<double>(mx) + std::log(acc);
    total += lse[r] - static_cast<double>(xr[targets[r]]);
  }
  auto out = BasicTensor<S>::scalar(static_cast<S>(total / static_cast<double>(count)));
  if (auto* tape = recording<S>(logits)) {
    out.set_requires_grad(true);
    tape->record([logits = logits, out, targets = std::vector<TokenId>(targets.begin(), targets.end()), mask = std::vector<std::uint8_t>(mask.begin(), mask.end()), lse = std::move(lse), count, rows, vocab]() mutable {
      if (!out.has_grad()) return;
      const double dy = static_cast<double>(out.grad()[0]) / static_cast<double>(count);
      auto x = logits.data();
      auto g = logits.grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        ConstArrMap<S> xr(x.data() + r * vocab, vocab);
        ArrMap<S> gr(g.data() + r * vocab, vocab);
        gr += static_cast<S>(dy) * (xr - static_cast<S>(lse[r])).exp();
        gr(targets[r]) -= static_cast<S>(dy);
      }
    });
  }
  return out;
}

#define MEMPROBE_INSTANTIATE(S)                                                                \
  template BasicTensor<S> matmul(const BasicTensor<S>&, const BasicTensor<S>&);                \
  template BasicTensor<S> matmul_nt(const BasicTensor<S>&, const BasicTensor<S>&);             \
  template BasicTensor<S> add(const BasicTensor<S>&, const BasicTensor<S>&);                   \
  template BasicTensor<S> mul(const BasicTensor<S>&, const BasicTensor<S>&);                   \
  template BasicTensor<S> scale(const BasicTensor<S>&, S);                                     \
  template BasicTensor<S> sum(const BasicTensor<S>&);                                          \
  template BasicTensor<S> softmax_rows(const BasicTensor<S>&);                                 \
  template BasicTensor<S> layer_norm(const BasicTensor<S>&, const BasicTensor<S>&,             \
                                     const BasicTensor<S>&, S);                                \
  template BasicTensor<S> gelu(const BasicTensor<S>&);                                         \
  template BasicTensor<S> silu(const BasicTensor<S>&);                                         \
  template BasicTensor<S> embedding(const BasicTensor<S>&, std::span<const TokenId>);          \
  template BasicTensor<S> add_positional(const BasicTensor<S>&, const BasicTensor<S>&,         \
                                         std::int64_t);                                        \
  template BasicTensor<S> concat_rows(std::span<const BasicTensor<S>>);                        \
  template BasicTensor<S> concat_cols(std::span<const BasicTensor<S>>);                        \
  template BasicTensor<S> slice_rows(const BasicTensor<S>&, std::int64_t, std::int64_t);       \
  template BasicTensor<S> slice_cols(const BasicTensor<S>&, std::int64_t, std::int64_t);       \
  template BasicTensor<S> attention(const BasicTensor<S>&, const BasicTensor<S>&,              \
                                    const BasicTensor<S>&, std::int64_t, std::int64_t, bool);  \
  template BasicTensor<S> masked_cross_entropy(const BasicTensor<S>&, std::span<const TokenId>, \
                                               std::span<const std::uint8_t>);

MEMPROBE_INSTANTIATE(float)
MEMPROBE_INSTANTIATE(double)

#undef MEMPROBE_INSTANTIATE

}  // namespace memprobe
