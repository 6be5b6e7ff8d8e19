#include "docnmt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "docnmt/errors.hpp"

namespace docnmt {

namespace {

using detail::Node;
using BackwardFn = std::function<void(Node&)>;

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> parents, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->id = detail::next_node_id();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto* p : parents) any = any || p->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto* p : parents) node->parents.push_back(p->node_ptr());
      node->backward = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_result_n(const char* op, Shape shape, std::vector<double> value,
                     std::span<const Tensor> parents, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->id = detail::next_node_id();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const auto& p : parents) node->parents.push_back(p.node_ptr());
      node->backward = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

// Gradient buffer of parent i, or nullptr when it does not take gradients.
std::vector<double>* parent_grad(Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kDimension, std::string(op) + ": shape mismatch " +
                                    to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_finite(const char* op, std::span<const double> v) {
  for (double x : v) {
    if (std::isnan(x)) fail(ErrorKind::kNumeric, std::string(op) + ": NaN input");
  }
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    fail(ErrorKind::kDimension, std::string(op) + ": axis " + std::to_string(axis) +
                                    " out of range for " + to_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result("add", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = parent_grad(self, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result("mul", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_result("scale", a.shape(), std::move(out), {&a}, [factor](Node& self) {
    auto& g = *parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + value;
  return make_result("add_scalar", a.shape(), std::move(out), {&a}, [](Node& self) {
    auto& g = *parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  if (x.rank() == 0 || bias.rank() != 1 || bias.dim(0) != x.shape().back()) {
    fail(ErrorKind::kDimension, "add_rowwise: cannot add bias " + to_string(bias.shape()) +
                                    " to rows of " + to_string(x.shape()));
  }
  const std::size_t d = bias.size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % d];
  return make_result("add_rowwise", x.shape(), std::move(out), {&x, &bias},
                     [d](Node& self) {
                       if (auto* g = parent_grad(self, 0)) {
                         for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                       }
                       if (auto* g = parent_grad(self, 1)) {
                         for (std::size_t i = 0; i < self.grad.size(); ++i) {
                           (*g)[i % d] += self.grad[i];
                         }
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    fail(ErrorKind::kDimension, "matmul: incompatible shapes " + to_string(a.shape()) +
                                    " and " + to_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MatrixMap(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  return make_result("matmul", {a.dim(0), b.dim(1)}, std::move(out), {&a, &b},
                     [m, k, n](Node& self) {
                       ConstMatrixMap dc(self.grad.data(), m, n);
                       if (auto* g = parent_grad(self, 0)) {
                         ConstMatrixMap bm(self.parents[1]->value.data(), k, n);
                         MatrixMap(g->data(), m, k).noalias() += dc * bm.transpose();
                       }
                       if (auto* g = parent_grad(self, 1)) {
                         ConstMatrixMap am(self.parents[0]->value.data(), m, k);
                         MatrixMap(g->data(), k, n).noalias() += am.transpose() * dc;
                       }
                     });
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const auto bad = [&] {
    fail(ErrorKind::kDimension, "batched_matmul: incompatible shapes " +
                                    to_string(a.shape()) + " and " + to_string(b.shape()) +
                                    (transpose_b ? " (b transposed)" : ""));
  };
  if (a.rank() < 3 || a.rank() != b.rank()) bad();
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (a.dim(i) != b.dim(i)) bad();
  }
  const std::size_t m = a.dim(r - 2), k = a.dim(r - 1);
  const std::size_t bk = transpose_b ? b.dim(r - 1) : b.dim(r - 2);
  const std::size_t n = transpose_b ? b.dim(r - 2) : b.dim(r - 1);
  if (bk != k) bad();
  const std::size_t batches = a.size() / (m * k);

  Shape shape(a.shape().begin(), a.shape().end() - 2);
  shape.push_back(m);
  shape.push_back(n);
  std::vector<double> out(batches * m * n);
  const auto em = static_cast<Eigen::Index>(m), ek = static_cast<Eigen::Index>(k),
             en = static_cast<Eigen::Index>(n);
  for (std::size_t i = 0; i < batches; ++i) {
    ConstMatrixMap am(a.data().data() + i * m * k, em, ek);
    MatrixMap cm(out.data() + i * m * n, em, en);
    if (transpose_b) {
      cm.noalias() = am * ConstMatrixMap(b.data().data() + i * n * k, en, ek).transpose();
    } else {
      cm.noalias() = am * ConstMatrixMap(b.data().data() + i * k * n, ek, en);
    }
  }
  return make_result(
      "batched_matmul", std::move(shape), std::move(out), {&a, &b},
      [=](Node& self) {
        const double* av = self.parents[0]->value.data();
        const double* bv = self.parents[1]->value.data();
        auto* ga = parent_grad(self, 0);
        auto* gb = parent_grad(self, 1);
        for (std::size_t i = 0; i < batches; ++i) {
          ConstMatrixMap dc(self.grad.data() + i * m * n, em, en);
          if (transpose_b) {
            ConstMatrixMap bm(bv + i * n * k, en, ek);
            if (ga) MatrixMap(ga->data() + i * m * k, em, ek).noalias() += dc * bm;
            if (gb) {
              ConstMatrixMap am(av + i * m * k, em, ek);
              MatrixMap(gb->data() + i * n * k, en, ek).noalias() += dc.transpose() * am;
            }
          } else {
            ConstMatrixMap bm(bv + i * k * n, ek, en);
            if (ga) MatrixMap(ga->data() + i * m * k, em, ek).noalias() += dc * bm.transpose();
            if (gb) {
              ConstMatrixMap am(av + i * m * k, em, ek);
              MatrixMap(gb->data() + i * k * n, ek, en).noalias() += am.transpose() * dc;
            }
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() == 2) return add_rowwise(matmul(x, w), b);
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  const auto rows = x.size() / x.shape().back();
  auto flat = reshape(x, {rows, x.shape().back()});
  return reshape(add_rowwise(matmul(flat, w), b), std::move(out_shape));
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) fail(ErrorKind::kDimension, "transpose: expected rank 2, got " + to_string(a.shape()));
  return permute(a, {1, 0});
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const std::size_t r = a.rank();
  std::vector<bool> used(r, false);
  if (axes.size() != r) fail(ErrorKind::kDimension, "permute: wrong number of axes for " + to_string(a.shape()));
  for (auto ax : axes) {
    if (ax >= r || used[ax]) fail(ErrorKind::kDimension, "permute: invalid axis list");
    used[ax] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * a.dim(i);
  Shape out_shape(r);
  std::vector<std::size_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = a.dim(axes[i]);
    src_strides[i] = in_strides[axes[i]];
  }
  // Map output linear index -> input linear index.
  const std::size_t total = a.size();
  std::vector<std::size_t> gather(total);
  std::vector<std::size_t> counter(r, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < total; ++i) {
    gather[i] = src;
    for (std::size_t d = r; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        src += src_strides[d];
        break;
      }
      src -= src_strides[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = a[gather[i]];
  return make_result("permute", std::move(out_shape), std::move(out), {&a},
                     [gather = std::move(gather)](Node& self) {
                       auto& g = *parent_grad(self, 0);
                       for (std::size_t i = 0; i < gather.size(); ++i) g[gather[i]] += self.grad[i];
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    fail(ErrorKind::kDimension, "reshape: cannot view " + to_string(a.shape()) + " as " +
                                    to_string(shape));
  }
  return make_result("reshape", std::move(shape), std::vector<double>(a.data().begin(), a.data().end()),
                     {&a}, [](Node& self) {
                       auto& g = *parent_grad(self, 0);
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorKind::kDimension, "concat: no inputs");
  const auto& first = parts.front().shape();
  if (axis >= first.size()) fail(ErrorKind::kDimension, "concat: axis out of range for " + to_string(first));
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      fail(ErrorKind::kDimension, "concat: shape " + to_string(s) + " incompatible with " +
                                      to_string(first) + " along axis " + std::to_string(axis));
    }
    shape[axis] += s[axis];
  }
  const auto split = split_axis(shape, axis, "concat");
  std::vector<std::size_t> extents;
  std::vector<double> out(numel(shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t e = p.dim(axis);
    extents.push_back(e);
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(p.data().data() + o * e * split.inner, e * split.inner,
                  out.data() + (o * split.extent + offset) * split.inner);
    }
    offset += e;
  }
  return make_result_n("concat", std::move(shape), std::move(out), parts,
                       [split, extents = std::move(extents)](Node& self) {
                         std::size_t off = 0;
                         for (std::size_t k = 0; k < extents.size(); ++k) {
                           const std::size_t e = extents[k];
                           if (auto* g = parent_grad(self, k)) {
                             for (std::size_t o = 0; o < split.outer; ++o) {
                               const double* src = self.grad.data() + (o * split.extent + off) * split.inner;
                               double* dst = g->data() + o * e * split.inner;
                               for (std::size_t i = 0; i < e * split.inner; ++i) dst[i] += src[i];
                             }
                           }
                           off += e;
                         }
                       });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto split = split_axis(a.shape(), axis, "slice");
  if (length == 0 || start + length > split.extent) {
    fail(ErrorKind::kDimension, "slice: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + length) + ") outside " +
                                    to_string(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = length;
  std::vector<double> out(numel(shape));
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(a.data().data() + (o * split.extent + start) * split.inner, length * split.inner,
                out.data() + o * length * split.inner);
  }
  return make_result("slice", std::move(shape), std::move(out), {&a},
                     [split, start, length](Node& self) {
                       auto& g = *parent_grad(self, 0);
                       for (std::size_t o = 0; o < split.outer; ++o) {
                         const double* src = self.grad.data() + o * length * split.inner;
                         double* dst = g.data() + (o * split.extent + start) * split.inner;
                         for (std::size_t i = 0; i < length * split.inner; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  const auto split = split_axis(x.shape(), axis, "mean");
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(split.outer * split.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(split.extent);
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t j = 0; j < split.extent; ++j) {
      const double* row = x.data().data() + (o * split.extent + j) * split.inner;
      for (std::size_t i = 0; i < split.inner; ++i) out[o * split.inner + i] += row[i];
    }
  }
  for (auto& v : out) v *= inv;
  return make_result("mean", std::move(shape), std::move(out), {&x}, [split, inv](Node& self) {
    auto& g = *parent_grad(self, 0);
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t j = 0; j < split.extent; ++j) {
        double* row = g.data() + (o * split.extent + j) * split.inner;
        for (std::size_t i = 0; i < split.inner; ++i) row[i] += self.grad[o * split.inner + i] * inv;
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  const double total = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  return make_result("sum", {}, {total}, {&x}, [](Node& self) {
    auto& g = *parent_grad(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return make_result("relu", x.shape(), std::move(out), {&x}, [](Node& self) {
    auto& g = *parent_grad(self, 0);
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return make_result("sigmoid", x.shape(), std::move(out), {&x}, [](Node& self) {
    auto& g = *parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return make_result("tanh", x.shape(), std::move(out), {&x}, [](Node& self) {
    auto& g = *parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_finite("softmax", x.data());
  const auto s = split_axis(x.shape(), axis, "softmax");
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.extent; ++j) hi = std::max(hi, x[base + j * s.inner]);
      if (!std::isfinite(hi)) fail(ErrorKind::kNumeric, "softmax: slice has no finite entry");
      double z = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const double e = std::exp(x[base + j * s.inner] - hi);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.extent; ++j) out[base + j * s.inner] /= z;
    }
  }
  return make_result("softmax", x.shape(), std::move(out), {&x}, [s](Node& self) {
    auto& g = *parent_grad(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) {
          dot += self.grad[base + j * s.inner] * self.value[base + j * s.inner];
        }
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t at = base + j * s.inner;
          g[at] += self.value[at] * (self.grad[at] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  require_finite("log_softmax", x.data());
  const auto s = split_axis(x.shape(), axis, "log_softmax");
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.extent; ++j) hi = std::max(hi, x[base + j * s.inner]);
      if (!std::isfinite(hi)) fail(ErrorKind::kNumeric, "log_softmax: slice has no finite entry");
      double z = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) z += std::exp(x[base + j * s.inner] - hi);
      const double lse = hi + std::log(z);
      for (std::size_t j = 0; j < s.extent; ++j) out[base + j * s.inner] = x[base + j * s.inner] - lse;
    }
  }
  return make_result("log_softmax", x.shape(), std::move(out), {&x}, [s](Node& self) {
    auto& g = *parent_grad(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double total = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) total += self.grad[base + j * s.inner];
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t at = base + j * s.inner;
          g[at] += self.grad[at] - std::exp(self.value[at]) * total;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) fail(ErrorKind::kDimension, "layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (d < 2 || gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    fail(ErrorKind::kDimension, "layer_norm: input " + to_string(x.shape()) + " with gain " +
                                    to_string(gain.shape()) + " and bias " + to_string(bias.shape()));
  }
  const std::size_t rows = x.size() / d;
  std::vector<double> normalized(x.size());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      const double xh = (row[i] - mu) * inv_std[r];
      normalized[r * d + i] = xh;
      out[r * d + i] = gain[i] * xh + bias[i];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
      [d, rows, normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
        const auto& gv = self.parents[1]->value;
        auto* gx = parent_grad(self, 0);
        auto* gg = parent_grad(self, 1);
        auto* gb = parent_grad(self, 2);
        std::vector<double> dxh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = self.grad.data() + r * d;
          const double* xh = normalized.data() + r * d;
          if (gg) for (std::size_t i = 0; i < d; ++i) (*gg)[i] += dy[i] * xh[i];
          if (gb) for (std::size_t i = 0; i < d; ++i) (*gb)[i] += dy[i];
          if (!gx) continue;
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            dxh[i] = dy[i] * gv[i];
            mean_dxh += dxh[i];
            mean_dxh_xh += dxh[i] * xh[i];
          }
          mean_dxh /= static_cast<double>(d);
          mean_dxh_xh /= static_cast<double>(d);
          for (std::size_t i = 0; i < d; ++i) {
            (*gx)[r * d + i] += inv_std[r] * (dxh[i] - mean_dxh - xh[i] * mean_dxh_xh);
          }
        }
      });
}

Tensor dropout(const Tensor& x, double p, bool train, Rng& rng) {
  if (p < 0.0 || p >= 1.0) fail(ErrorKind::kConfig, "dropout: p must lie in [0, 1)");
  if (!train || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() >= p ? keep_scale : 0.0;
    out[i] = x[i] * mask[i];
  }
  return make_result("dropout", x.shape(), std::move(out), {&x},
                     [mask = std::move(mask)](Node& self) {
                       auto& g = *parent_grad(self, 0);
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
                     });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) fail(ErrorKind::kDimension, "embedding_lookup: table must be rank 2");
  if (ids.empty()) fail(ErrorKind::kDimension, "embedding_lookup: no ids");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int> rows(ids.begin(), ids.end());
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
      fail(ErrorKind::kDimension, "embedding_lookup: id " + std::to_string(rows[i]) +
                                      " outside table of " + std::to_string(vocab) + " rows");
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(rows[i]) * d, d, out.data() + i * d);
  }
  Shape shape{rows.size(), d};
  return make_result("embedding_lookup", std::move(shape), std::move(out), {&table},
                     [d, rows = std::move(rows)](Node& self) {
                       auto& g = *parent_grad(self, 0);
                       for (std::size_t i = 0; i < rows.size(); ++i) {
                         double* dst = g.data() + static_cast<std::size_t>(rows[i]) * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[i * d + j];
                       }
                     });
}

AttentionMask AttentionMask::padding(std::span<const std::size_t> key_lengths,
                                     std::size_t queries, std::size_t keys) {
  AttentionMask m{key_lengths.size(), queries, keys, {}};
  m.keep.assign(m.batch * queries * keys, 0);
  for (std::size_t b = 0; b < m.batch; ++b) {
    for (std::size_t q = 0; q < queries; ++q) {
      for (std::size_t k = 0; k < std::min(keys, key_lengths[b]); ++k) {
        m.keep[(b * queries + q) * keys + k] = 1;
      }
    }
  }
  return m;
}

AttentionMask AttentionMask::causal(std::span<const std::size_t> key_lengths, std::size_t length) {
  auto m = padding(key_lengths, length, length);
  for (std::size_t b = 0; b < m.batch; ++b) {
    for (std::size_t q = 0; q < length; ++q) {
      for (std::size_t k = q + 1; k < length; ++k) m.keep[(b * length + q) * length + k] = 0;
      // A padded query still attends to itself so its row stays finite.
      if (q >= key_lengths[b]) m.keep[(b * length + q) * length + q] = 1;
    }
  }
  return m;
}

Tensor masked_fill(const Tensor& scores, const AttentionMask& mask) {
  if (scores.rank() != 4 || scores.dim(0) != mask.batch || scores.dim(2) != mask.queries ||
      scores.dim(3) != mask.keys) {
    fail(ErrorKind::kDimension, "masked_fill: scores " + to_string(scores.shape()) +
                                    " do not match mask [" + std::to_string(mask.batch) + "x*x" +
                                    std::to_string(mask.queries) + "x" + std::to_string(mask.keys) + "]");
  }
  const std::size_t heads = scores.dim(1);
  const std::size_t plane = mask.queries * mask.keys;
  std::vector<double> out(scores.data().begin(), scores.data().end());
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < mask.batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* dst = out.data() + (b * heads + h) * plane;
      const std::uint8_t* keep = mask.keep.data() + b * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (!keep[i]) dst[i] = neg_inf;
      }
    }
  }
  return make_result("masked_fill", scores.shape(), std::move(out), {&scores},
                     [mask, heads, plane](Node& self) {
                       auto& g = *parent_grad(self, 0);
                       for (std::size_t b = 0; b < mask.batch; ++b) {
                         for (std::size_t h = 0; h < heads; ++h) {
                           const std::size_t base = (b * heads + h) * plane;
                           const std::uint8_t* keep = mask.keep.data() + b * plane;
                           for (std::size_t i = 0; i < plane; ++i) {
                             if (keep[i]) g[base + i] += self.grad[base + i];
                           }
                         }
                       }
                     });
}

Tensor cross_entropy_label_smoothed(const Tensor& logits, std::span<const int> targets,
                                    double label_smoothing, int pad_id) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    fail(ErrorKind::kDimension, "cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                                    std::to_string(targets.size()) + " targets");
  }
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    fail(ErrorKind::kConfig, "cross_entropy: label smoothing must lie in [0, 1)");
  }
  require_finite("cross_entropy", logits.data());
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  const double off = label_smoothing / static_cast<double>(v);
  const double on = 1.0 - label_smoothing + off;
  std::vector<double> probs(logits.size());
  std::vector<int> tgt(targets.begin(), targets.end());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (tgt[r] == pad_id) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= v) {
      fail(ErrorKind::kDimension, "cross_entropy: target id " + std::to_string(tgt[r]) +
                                      " outside " + std::to_string(v) + " classes");
    }
    const double* row = logits.data().data() + r * v;
    const double hi = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - hi);
    const double lse = hi + std::log(z);
    double loss = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double logp = row[j] - lse;
      probs[r * v + j] = std::exp(logp);
      loss -= (static_cast<int>(j) == tgt[r] ? on : off) * logp;
    }
    total += loss;
    ++count;
  }
  if (count == 0) fail(ErrorKind::kContract, "cross_entropy: every target is padding");
  const double inv = 1.0 / static_cast<double>(count);
  return make_result("cross_entropy", {}, {total * inv}, {&logits},
                     [n, v, on, off, inv, pad_id, tgt = std::move(tgt),
                      probs = std::move(probs)](Node& self) {
                       auto& g = *parent_grad(self, 0);
                       const double scale = self.grad[0] * inv;
                       for (std::size_t r = 0; r < n; ++r) {
                         if (tgt[r] == pad_id) continue;
                         for (std::size_t j = 0; j < v; ++j) {
                           const double q = static_cast<int>(j) == tgt[r] ? on : off;
                           g[r * v + j] += scale * (probs[r * v + j] - q);
                         }
                       }
                     });
}

}  // namespace docnmt
