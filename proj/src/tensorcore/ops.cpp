// SPDX-License-Identifier: Apache-2.0
#include "ppt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ppt {

namespace {

thread_local ScopedBranchTrace* t_branch_trace = nullptr;

using detail::Node;
using GradSlots = std::span<std::vector<float>*>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                              shape_str(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& why) {
  throw std::invalid_argument(std::string(op) + ": invalid shape " + shape_str(a) + " (" + why +
                              ")");
}

std::size_t normalize_axis(const char* op, const Shape& shape, int axis) {
  const int r = static_cast<int>(shape.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) shape_error(op, shape, "axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(a);
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= s[i];
  return n;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

std::vector<float> transposed(const float* src, std::size_t rows, std::size_t cols) {
  std::vector<float> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const char* op, BinaryKind kind, const Tensor& a, const Tensor& b) {
  if (!is_suffix(b.shape(), a.shape())) shape_error(op, a.shape(), b.shape());
  const std::size_t n = a.numel();
  const std::size_t inner = b.numel();
  std::vector<float> out(n);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t base = 0; base < n; base += inner) {
    for (std::size_t j = 0; j < inner; ++j) {
      const float x = av[base + j];
      const float y = bv[j];
      out[base + j] = kind == BinaryKind::kAdd ? x + y : kind == BinaryKind::kSub ? x - y : x * y;
    }
  }
  return Tensor::make_result(
      a.shape(), std::move(out), {a, b},
      [kind, n, inner](const Node& self, std::span<const float> g, GradSlots gin) {
        const auto& av = self.inputs[0]->data;
        const auto& bv = self.inputs[1]->data;
        if (gin[0]) {
          auto& ga = *gin[0];
          for (std::size_t i = 0; i < n; ++i) {
            ga[i] += kind == BinaryKind::kMul ? g[i] * bv[i % inner] : g[i];
          }
        }
        if (gin[1]) {
          auto& gb = *gin[1];
          for (std::size_t base = 0; base < n; base += inner) {
            for (std::size_t j = 0; j < inner; ++j) {
              const float gi = g[base + j];
              gb[j] += kind == BinaryKind::kAdd   ? gi
                       : kind == BinaryKind::kSub ? -gi
                                                  : gi * av[base + j];
            }
          }
        }
      });
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& a, Fwd fwd, Bwd bwd) {
  const auto av = a.data();
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a},
                             [bwd](const Node& self, std::span<const float> g, GradSlots gin) {
                               auto& ga = *gin[0];
                               const auto& x = self.inputs[0]->data;
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 ga[i] += g[i] * bwd(x[i], self.data[i]);
                               }
                             });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t n = b.dim(-1);
  if (b.dim(-2) != k) shape_error("matmul", a.shape(), b.shape());
  const bool shared_rhs = b.rank() == 2;
  if (!shared_rhs) {
    if (b.rank() != a.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      shape_error("matmul", a.shape(), b.shape());
    }
  }
  const std::size_t batch = prod(a.shape(), 0, a.rank() - 2);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<float> out(batch * m * n, 0.0f);
  if (shared_rhs) {
    kernels::gemm_accumulate(a.data().data(), b.data().data(), out.data(), batch * m, k, n);
  } else {
    for (std::size_t t = 0; t < batch; ++t) {
      kernels::gemm_accumulate(a.data().data() + t * m * k, b.data().data() + t * k * n,
                               out.data() + t * m * n, m, k, n);
    }
  }
  return Tensor::make_result(
      std::move(out_shape), std::move(out), {a, b},
      [shared_rhs, batch, m, k, n](const Node& self, std::span<const float> g, GradSlots gin) {
        const float* av = self.inputs[0]->data.data();
        const float* bv = self.inputs[1]->data.data();
        if (shared_rhs) {
          if (gin[0]) {
            const auto bt = transposed(bv, k, n);
            kernels::gemm_accumulate(g.data(), bt.data(), gin[0]->data(), batch * m, n, k);
          }
          if (gin[1]) {
            const auto at = transposed(av, batch * m, k);
            kernels::gemm_accumulate(at.data(), g.data(), gin[1]->data(), k, batch * m, n);
          }
          return;
        }
        for (std::size_t t = 0; t < batch; ++t) {
          const float* gt = g.data() + t * m * n;
          if (gin[0]) {
            const auto bt = transposed(bv + t * k * n, k, n);
            kernels::gemm_accumulate(gt, bt.data(), gin[0]->data() + t * m * k, m, n, k);
          }
          if (gin[1]) {
            const auto at = transposed(av + t * m * k, m, k);
            kernels::gemm_accumulate(at.data(), gt, gin[1]->data() + t * k * n, k, m, n);
          }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinaryKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinaryKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinaryKind::kMul, a, b); }

Tensor scale(const Tensor& a, float factor) {
  return unary(
      a, [factor](float x) { return x * factor; }, [factor](float, float) { return factor; });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  const Shape& first = parts.front().shape();
  const std::size_t ax = normalize_axis("concat", first, axis);
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<std::size_t> inner_sizes;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_error("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != first[i]) shape_error("concat", first, s);
    }
    out_shape[ax] += s[ax];
    inner_sizes.push_back(prod(s, ax, s.size()));
  }
  const std::size_t outer = prod(first, 0, ax);
  std::size_t out_inner = 0;
  for (auto s : inner_sizes) out_inner += s;
  std::vector<float> out(outer * out_inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = o * out_inner;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const auto src = parts[p].data().subspan(o * inner_sizes[p], inner_sizes[p]);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += inner_sizes[p];
    }
  }
  return Tensor::make_result(
      std::move(out_shape), std::move(out), parts,
      [outer, out_inner, inner_sizes](const Node&, std::span<const float> g, GradSlots gin) {
        for (std::size_t o = 0; o < outer; ++o) {
          std::size_t offset = o * out_inner;
          for (std::size_t p = 0; p < inner_sizes.size(); ++p) {
            if (gin[p]) {
              float* dst = gin[p]->data() + o * inner_sizes[p];
              for (std::size_t j = 0; j < inner_sizes[p]; ++j) dst[j] += g[offset + j];
            }
            offset += inner_sizes[p];
          }
        }
      });
}

Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis("slice", a.shape(), axis);
  if (length == 0 || start + length > a.shape()[ax]) {
    shape_error("slice", a.shape(),
                "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                    ") on axis " + std::to_string(ax));
  }
  const std::size_t outer = prod(a.shape(), 0, ax);
  const std::size_t inner = prod(a.shape(), ax + 1, a.rank());
  const std::size_t src_stride = a.shape()[ax] * inner;
  const std::size_t dst_stride = length * inner;
  Shape out_shape = a.shape();
  out_shape[ax] = length;
  std::vector<float> out(outer * dst_stride);
  const auto av = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const auto src = av.subspan(o * src_stride + start * inner, dst_stride);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(o * dst_stride));
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {a},
                             [outer, inner, start, src_stride, dst_stride](
                                 const Node&, std::span<const float> g, GradSlots gin) {
                               float* ga = gin[0]->data();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 float* dst = ga + o * src_stride + start * inner;
                                 const float* src = g.data() + o * dst_stride;
                                 for (std::size_t j = 0; j < dst_stride; ++j) dst[j] += src[j];
                               }
                             });
}

Tensor transpose_last2(const Tensor& a) {
  if (a.rank() < 2) shape_error("transpose_last2", a.shape(), "rank < 2");
  const std::size_t rows = a.dim(-2);
  const std::size_t cols = a.dim(-1);
  const std::size_t batch = a.numel() / std::max<std::size_t>(rows * cols, 1);
  Shape out_shape = a.shape();
  std::swap(out_shape[a.rank() - 2], out_shape[a.rank() - 1]);
  std::vector<float> out(a.numel());
  const float* av = a.data().data();
  for (std::size_t t = 0; t < batch; ++t) {
    const float* src = av + t * rows * cols;
    float* dst = out.data() + t * rows * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
    }
  }
  return Tensor::make_result(
      std::move(out_shape), std::move(out), {a},
      [batch, rows, cols](const Node&, std::span<const float> g, GradSlots gin) {
        float* ga = gin[0]->data();
        for (std::size_t t = 0; t < batch; ++t) {
          const float* src = g.data() + t * rows * cols;
          float* dst = ga + t * rows * cols;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) dst[r * cols + c] += src[c * rows + r];
          }
        }
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  std::vector<float> out(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a},
                             [](const Node&, std::span<const float> g, GradSlots gin) {
                               auto& ga = *gin[0];
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                             });
}

Tensor relu(const Tensor& a) {
  if (ScopedBranchTrace::active()) {
    const auto x = a.data();
    for (std::size_t i = 0; i < x.size(); i += 64) {
      std::uint64_t bits = 0;
      for (std::size_t j = i; j < std::min(x.size(), i + 64); ++j) bits |= std::uint64_t(x[j] > 0.0f) << (j - i);
      ScopedBranchTrace::record(bits);
    }
  }
  return unary(
      a, [](float x) { return x > 0.0f ? x : 0.0f; },
      [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

Tensor sqrt(const Tensor& a) {
  for (float x : a.data()) {
    if (x < 0.0f) throw std::invalid_argument("sqrt: negative operand");
  }
  return unary(
      a, [](float x) { return std::sqrt(x); },
      [](float, float y) { return y > 0.0f ? 0.5f / y : 0.0f; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Tensor softmax_last(const Tensor& a, const Tensor& mask) {
  if (a.rank() < 1 || a.dim(-1) == 0) shape_error("softmax_last", a.shape(), "empty last axis");
  if (mask.defined()) {
    if (!is_suffix(mask.shape(), a.shape()) || mask.rank() < 1) {
      shape_error("softmax_last", a.shape(), mask.shape());
    }
  }
  const std::size_t len = a.dim(-1);
  const std::size_t rows = a.numel() / len;
  const std::size_t mask_n = mask.defined() ? mask.numel() : 0;
  const auto av = a.data();
  std::vector<float> out(a.numel());
  std::vector<float> logits(len);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * len;
    float mx = -INFINITY;
    for (std::size_t j = 0; j < len; ++j) {
      float v = av[base + j];
      if (mask_n) v += mask.data()[(base + j) % mask_n];
      logits[j] = v;
      mx = std::max(mx, v);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      const float e = std::exp(logits[j] - mx);
      out[base + j] = e;
      total += e;
    }
    const float inv = static_cast<float>(1.0 / total);
    for (std::size_t j = 0; j < len; ++j) out[base + j] *= inv;
  }
  std::vector<Tensor> inputs{a};
  return Tensor::make_result(
      a.shape(), std::move(out), std::move(inputs),
      [rows, len](const Node& self, std::span<const float> g, GradSlots gin) {
        float* ga = gin[0]->data();
        const auto& y = self.data;
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * len;
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j) dot += static_cast<double>(g[base + j]) * y[base + j];
          const float d = static_cast<float>(dot);
          for (std::size_t j = 0; j < len; ++j) ga[base + j] += y[base + j] * (g[base + j] - d);
        }
      });
}

Tensor layernorm_last(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (x.rank() < 1 || x.dim(-1) == 0) shape_error("layernorm_last", x.shape(), "empty last axis");
  const std::size_t d = x.dim(-1);
  if (gain.shape() != Shape{d}) shape_error("layernorm_last", x.shape(), gain.shape());
  if (bias.shape() != Shape{d}) shape_error("layernorm_last", x.shape(), bias.shape());
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<float> out(x.numel());
  std::vector<float> stats(2 * rows);  // mean, rstd per row
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xv.data() + r * d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += row[j];
    const double mu = s / static_cast<double>(d);
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += (row[j] - mu) * (row[j] - mu);
    const double var = ss / static_cast<double>(d);
    const float rstd = static_cast<float>(1.0 / std::sqrt(var + eps));
    const float muf = static_cast<float>(mu);
    stats[2 * r] = muf;
    stats[2 * r + 1] = rstd;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (row[j] - muf) * rstd * gv[j] + bv[j];
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, d, stats = std::move(stats)](const Node& self, std::span<const float> g,
                                          GradSlots gin) {
        const auto& xv = self.inputs[0]->data;
        const auto& gv = self.inputs[1]->data;
        std::vector<float> xhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const float mu = stats[2 * r];
          const float rstd = stats[2 * r + 1];
          const float* gr = g.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) xhat[j] = (xv[r * d + j] - mu) * rstd;
          if (gin[1]) {
            for (std::size_t j = 0; j < d; ++j) (*gin[1])[j] += gr[j] * xhat[j];
          }
          if (gin[2]) {
            for (std::size_t j = 0; j < d; ++j) (*gin[2])[j] += gr[j];
          }
          if (gin[0]) {
            double mean_dxhat = 0.0;
            double mean_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = static_cast<double>(gr[j]) * gv[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat[j];
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_xhat /= static_cast<double>(d);
            float* gx = gin[0]->data() + r * d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = static_cast<double>(gr[j]) * gv[j];
              gx[j] += static_cast<float>(rstd * (dxh - mean_dxhat - xhat[j] * mean_dxhat_xhat));
            }
          }
        }
      });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  if (table.rank() != 2) shape_error("gather_rows", table.shape(), "table must be rank 2");
  const std::size_t rows = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<float> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) {
      shape_error("gather_rows", table.shape(), "index " + std::to_string(idx[i]) + " out of range");
    }
    const auto src = table.data().subspan(idx[i] * d, d);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Shape out_shape{idx.size(), d};
  return Tensor::make_result(std::move(out_shape), std::move(out), {table},
                             [d, idx = std::move(idx)](const Node&, std::span<const float> g,
                                                       GradSlots gin) {
                               float* gt = gin[0]->data();
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += g[i * d + j];
                               }
                             });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (float v : a.data()) total += v;
  return Tensor::make_result({}, {static_cast<float>(total)}, {a},
                             [](const Node&, std::span<const float> g, GradSlots gin) {
                               for (auto& v : *gin[0]) v += g[0];
                             });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) shape_error("mean", a.shape(), "no elements");
  const double n = static_cast<double>(a.numel());
  double total = 0.0;
  for (float v : a.data()) total += v;
  return Tensor::make_result({}, {static_cast<float>(total / n)}, {a},
                             [n](const Node&, std::span<const float> g, GradSlots gin) {
                               const float gv = static_cast<float>(g[0] / n);
                               for (auto& v : *gin[0]) v += gv;
                             });
}

namespace {

Tensor reduce_last(const char* op, const Tensor& a, bool average) {
  if (a.rank() < 1 || a.dim(-1) == 0) shape_error(op, a.shape(), "empty last axis");
  const std::size_t len = a.dim(-1);
  const std::size_t rows = a.numel() / len;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  std::vector<float> out(rows);
  const auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < len; ++j) s += av[r * len + j];
    out[r] = static_cast<float>(average ? s / static_cast<double>(len) : s);
  }
  const float factor = average ? 1.0f / static_cast<float>(len) : 1.0f;
  return Tensor::make_result(std::move(out_shape), std::move(out), {a},
                             [rows, len, factor](const Node&, std::span<const float> g,
                                                 GradSlots gin) {
                               float* ga = gin[0]->data();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const float gv = g[r] * factor;
                                 for (std::size_t j = 0; j < len; ++j) ga[r * len + j] += gv;
                               }
                             });
}

}  // namespace

Tensor sum_last(const Tensor& a) { return reduce_last("sum_last", a, false); }
Tensor mean_last(const Tensor& a) { return reduce_last("mean_last", a, true); }

ScopedBranchTrace::ScopedBranchTrace() : previous_(t_branch_trace) { t_branch_trace = this; }
ScopedBranchTrace::~ScopedBranchTrace() { t_branch_trace = previous_; }

bool ScopedBranchTrace::active() { return t_branch_trace != nullptr; }

void ScopedBranchTrace::record(std::uint64_t outcome) {
  if (t_branch_trace == nullptr) return;
  std::uint64_t h = t_branch_trace->digest_;
  for (int i = 0; i < 8; ++i) {
    h ^= (outcome >> (8 * i)) & 0xffu;
    h *= 0x100000001b3ull;
  }
  t_branch_trace->digest_ = h;
}

}  // namespace ppt
