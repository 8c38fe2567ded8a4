#include "fusecap/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "fusecap/errors.hpp"

namespace fusecap::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

enum class Trans { No, Yes };

// c (m x n) += op(a) · op(b), op(a) being m x k and op(b) k x n.
void gemm_add(const double* a, Trans ta, const double* b, Trans tb, double* c, std::size_t m,
              std::size_t k, std::size_t n) {
  Eigen::Map<RowMat> out(c, m, n);
  if (ta == Trans::No && tb == Trans::No) out.noalias() += ConstMap(a, m, k) * ConstMap(b, k, n);
  else if (ta == Trans::No) out.noalias() += ConstMap(a, m, k) * ConstMap(b, n, k).transpose();
  else out.noalias() += ConstMap(a, k, m).transpose() * ConstMap(b, k, n);
}

// Reductions stay in plain loops: Eigen's vectorised reductions peel by buffer
// address, which made identical runs differ in the last bit.
void add_bias(double* y, const double* b, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] += b[j];
  }
}

void add_column_sums(double* g, const double* dy, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) g[j] += dy[r * cols + j];
  }
}

using Backward = std::function<void(detail::Node&)>;

thread_local bool g_recording = true;

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   Backward backward) {
  Tensor out(std::move(shape), std::move(values));
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  needs = needs && g_recording;
  if (needs) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const auto& t : inputs) node.parents.push_back(t.node());
    node.backward = std::move(backward);
  }
  return out;
}

detail::Node& parent(detail::Node& self, std::size_t i) { return *self.parents[i]; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s;
  out.back() = last;
  return out;
}

template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D derivative_from_output) {
  auto in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(x.shape(), std::move(out), {x}, [derivative_from_output](detail::Node& self) {
    auto& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * derivative_from_output(p.values[i], self.values[i]);
    }
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }
bool recording() { return g_recording; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  gemm_add(a.values().data(), Trans::No, b.values().data(), Trans::No, out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    const double* dc = self.grad.data();
    if (pa.requires_grad) {
      gemm_add(dc, Trans::No, pb.values.data(), Trans::Yes, pa.ensure_grad().data(), m, n, k);
    }
    if (pb.requires_grad) {
      gemm_add(pa.values.data(), Trans::Yes, dc, Trans::No, pb.ensure_grad().data(), k, m, n);
    }
  });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2 || x.rank() > 2 || x.cols() != w.shape()[0] || b.size() != w.shape()[1] ||
      b.rank() != 1) {
    throw DimensionError("affine: x " + shape_string(x.shape()) + ", W " +
                         shape_string(w.shape()) + ", b " + shape_string(b.shape()) +
                         " do not conform");
  }
  const auto rows = x.rows(), din = w.shape()[0], dout = w.shape()[1];
  std::vector<double> out(rows * dout, 0.0);
  gemm_add(x.values().data(), Trans::No, w.values().data(), Trans::No, out.data(), rows, din,
           dout);
  add_bias(out.data(), b.values().data(), rows, dout);
  Shape shape = x.rank() == 1 ? Shape{dout} : Shape{rows, dout};
  return make_result(std::move(shape), std::move(out), {x, w, b},
                     [rows, din, dout](detail::Node& self) {
                       auto& px = parent(self, 0);
                       auto& pw = parent(self, 1);
                       auto& pb = parent(self, 2);
                       const double* dy = self.grad.data();
                       if (px.requires_grad) {
                         gemm_add(dy, Trans::No, pw.values.data(), Trans::Yes,
                                  px.ensure_grad().data(), rows, dout, din);
                       }
                       if (pw.requires_grad) {
                         gemm_add(px.values.data(), Trans::Yes, dy, Trans::No,
                                  pw.ensure_grad().data(), din, rows, dout);
                       }
                       if (pb.requires_grad) {
                         add_column_sums(pb.ensure_grad().data(), dy, rows, dout);
                       }
                     });
}

Tensor lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const Tensor& w,
                 const Tensor& b) {
  const std::size_t H = h.cols();
  if (x.rank() != 2 || h.rank() != 2 || c.shape() != h.shape() || x.rows() != h.rows() ||
      w.rank() != 2 || w.shape()[0] != x.cols() + H || w.shape()[1] != 4 * H || b.rank() != 1 ||
      b.size() != 4 * H) {
    throw DimensionError("lstm_cell: x " + shape_string(x.shape()) + ", h " +
                         shape_string(h.shape()) + ", c " + shape_string(c.shape()) + ", W " +
                         shape_string(w.shape()) + ", b " + shape_string(b.shape()) +
                         " do not conform");
  }
  const std::size_t B = x.rows(), D = x.cols();
  const double* wv = w.values().data();
  // Gate pre-activations z = x·W_x + h·W_h + b, W_x the first D rows of W.
  RowMat z = RowMat::Zero(B, 4 * H);
  gemm_add(x.values().data(), Trans::No, wv, Trans::No, z.data(), B, D, 4 * H);
  gemm_add(h.values().data(), Trans::No, wv + D * 4 * H, Trans::No, z.data(), B, H, 4 * H);
  add_bias(z.data(), b.values().data(), B, 4 * H);

  // Per row: i f g o tanh(c') activations, kept for the backward pass.
  auto acts = std::make_shared<std::vector<double>>(B * 5 * H);
  std::vector<double> out(B * 2 * H);
  auto cv = c.values();
  for (std::size_t r = 0; r < B; ++r) {
    const double* zr = z.data() + r * 4 * H;
    double* a = acts->data() + r * 5 * H;
    double* hr = out.data() + r * 2 * H;
    double* cr = hr + H;
    for (std::size_t j = 0; j < H; ++j) {
      const double ig = stable_sigmoid(zr[j]);
      const double fg = stable_sigmoid(zr[H + j]);
      const double gg = std::tanh(zr[2 * H + j]);
      const double og = stable_sigmoid(zr[3 * H + j]);
      const double cn = fg * cv[r * H + j] + ig * gg;
      const double tc = std::tanh(cn);
      a[j] = ig;
      a[H + j] = fg;
      a[2 * H + j] = gg;
      a[3 * H + j] = og;
      a[4 * H + j] = tc;
      cr[j] = cn;
      hr[j] = og * tc;
    }
  }
  return make_result({B, 2 * H}, std::move(out), {x, h, c, w, b},
                     [B, D, H, acts](detail::Node& self) {
    auto& px = parent(self, 0);
    auto& ph = parent(self, 1);
    auto& pc = parent(self, 2);
    auto& pw = parent(self, 3);
    auto& pb = parent(self, 4);
    RowMat dz(B, 4 * H);
    for (std::size_t r = 0; r < B; ++r) {
      const double* a = acts->data() + r * 5 * H;
      const double* dh = self.grad.data() + r * 2 * H;
      const double* dc = dh + H;
      const double* cprev = pc.values.data() + r * H;
      double* d = dz.data() + r * 4 * H;
      for (std::size_t j = 0; j < H; ++j) {
        const double ig = a[j], fg = a[H + j], gg = a[2 * H + j], og = a[3 * H + j],
                     tc = a[4 * H + j];
        const double dct = dc[j] + dh[j] * og * (1.0 - tc * tc);
        d[j] = dct * gg * ig * (1.0 - ig);
        d[H + j] = dct * cprev[j] * fg * (1.0 - fg);
        d[2 * H + j] = dct * ig * (1.0 - gg * gg);
        d[3 * H + j] = dh[j] * tc * og * (1.0 - og);
      }
      if (pc.requires_grad) {
        auto& g = pc.ensure_grad();
        for (std::size_t j = 0; j < H; ++j) {
          const double og = a[3 * H + j], tc = a[4 * H + j];
          g[r * H + j] += (dc[j] + dh[j] * og * (1.0 - tc * tc)) * a[H + j];
        }
      }
    }
    const double* wv = pw.values.data();
    const double* d = dz.data();
    if (px.requires_grad) {
      gemm_add(d, Trans::No, wv, Trans::Yes, px.ensure_grad().data(), B, 4 * H, D);
    }
    if (ph.requires_grad) {
      gemm_add(d, Trans::No, wv + D * 4 * H, Trans::Yes, ph.ensure_grad().data(), B, 4 * H, H);
    }
    if (pw.requires_grad) {
      double* gw = pw.ensure_grad().data();
      gemm_add(px.values.data(), Trans::Yes, d, Trans::No, gw, D, B, 4 * H);
      gemm_add(ph.values.data(), Trans::Yes, d, Trans::No, gw + D * 4 * H, H, B, 4 * H);
    }
    if (pb.requires_grad) add_column_sums(pb.ensure_grad().data(), d, B, 4 * H);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = parent(self, k);
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result({1}, {s}, {x}, [](detail::Node& self) {
    auto& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw DimensionError("concat_last: non-conforming shapes " + shape_string(sa) + " and " +
                         shape_string(sb));
  }
  const auto rows = a.rows(), ca = a.cols(), cb = b.cols();
  std::vector<double> out(rows * (ca + cb));
  auto av = a.values(), bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + r * ca, ca, out.begin() + r * (ca + cb));
    std::copy_n(bv.begin() + r * cb, cb, out.begin() + r * (ca + cb) + ca);
  }
  return make_result(with_last(sa, ca + cb), std::move(out), {a, b},
                     [rows, ca, cb](detail::Node& self) {
                       auto& pa = parent(self, 0);
                       auto& pb = parent(self, 1);
                       const auto w = ca + cb;
                       if (pa.requires_grad) {
                         auto& g = pa.ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < ca; ++j) g[r * ca + j] += self.grad[r * w + j];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < cb; ++j)
                             g[r * cb + j] += self.grad[r * w + ca + j];
                       }
                     });
}

Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t len) {
  const auto cols = x.cols();
  if (len == 0 || begin + len > cols) {
    throw DimensionError("slice_last: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + len) + ") out of last dim of " +
                         shape_string(x.shape()));
  }
  const auto rows = x.rows();
  std::vector<double> out(rows * len);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.begin() + r * cols + begin, len, out.begin() + r * len);
  }
  return make_result(with_last(x.shape(), len), std::move(out), {x},
                     [rows, cols, begin, len](detail::Node& self) {
                       auto& p = parent(self, 0);
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < len; ++j)
                           g[r * cols + begin + j] += self.grad[r * len + j];
                     });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.values[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.values[i];
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor glu(const Tensor& x) {
  const auto cols = x.cols();
  if (cols % 2 != 0) {
    throw DimensionError("glu: last dimension must be even, got " + shape_string(x.shape()));
  }
  const auto half = cols / 2, rows = x.rows();
  auto xv = x.values();
  std::vector<double> out(rows * half);
  std::vector<double> gate(rows * half);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < half; ++j) {
      gate[r * half + j] = stable_sigmoid(xv[r * cols + half + j]);
      out[r * half + j] = xv[r * cols + j] * gate[r * half + j];
    }
  }
  return make_result(with_last(x.shape(), half), std::move(out), {x},
                     [rows, half, cols, gate = std::move(gate)](detail::Node& self) {
                       auto& p = parent(self, 0);
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < half; ++j) {
                           const double s = gate[r * half + j];
                           const double dy = self.grad[r * half + j];
                           g[r * cols + j] += dy * s;
                           g[r * cols + half + j] += dy * p.values[r * cols + j] * s * (1.0 - s);
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto xv = x.values();
  std::vector<double> mask(xv.size());
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  return make_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](detail::Node& self) {
    auto& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2");
  if (ids.empty()) throw DimensionError("embedding: no ids");
  const auto vocab = table.shape()[0], dim = table.shape()[1];
  std::vector<double> out(ids.size() * dim);
  auto tv = table.values();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw IndexError("embedding: token id " + std::to_string(ids[r]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(tv.begin() + ids[r] * dim, dim, out.begin() + r * dim);
  }
  std::vector<TokenId> idx(ids.begin(), ids.end());
  return make_result({ids.size(), dim}, std::move(out), {table},
                     [dim, idx = std::move(idx)](detail::Node& self) {
                       auto& p = parent(self, 0);
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t j = 0; j < dim; ++j) g[idx[r] * dim + j] += self.grad[r * dim + j];
                     });
}

Tensor pick_rows(std::span<const Tensor> sources, std::span<const std::size_t> which) {
  if (sources.empty()) throw DimensionError("pick_rows: no sources");
  const auto& shape = sources[0].shape();
  for (const auto& s : sources) {
    if (s.shape() != shape) throw DimensionError("pick_rows: sources differ in shape");
  }
  const auto rows = sources[0].rows(), cols = sources[0].cols();
  if (which.size() != rows) throw DimensionError("pick_rows: one selector per row required");
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (which[r] >= sources.size()) throw IndexError("pick_rows: selector out of range");
    auto v = sources[which[r]].values();
    std::copy_n(v.begin() + r * cols, cols, out.begin() + r * cols);
  }
  Tensor result(shape, std::move(out));
  bool needs = false;
  for (const auto& s : sources) needs = needs || s.requires_grad();
  needs = needs && g_recording;
  if (needs) {
    auto& node = *result.node();
    node.requires_grad = true;
    for (const auto& s : sources) node.parents.push_back(s.node());
    std::vector<std::size_t> sel(which.begin(), which.end());
    node.backward = [cols, sel = std::move(sel)](detail::Node& self) {
      for (std::size_t r = 0; r < sel.size(); ++r) {
        auto& p = *self.parents[sel[r]];
        if (!p.requires_grad) continue;
        auto& g = p.ensure_grad();
        for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += self.grad[r * cols + j];
      }
    };
  }
  return result;
}

std::vector<double> log_softmax(std::span<const double> row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : row) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
  return out;
}

std::vector<double> softmax_rows(const Tensor& logits) {
  const auto rows = logits.rows(), cols = logits.cols();
  auto v = logits.values();
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto ls = log_softmax(v.subspan(r * cols, cols));
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = std::exp(ls[j]);
  }
  return out;
}

Tensor softmax_xent(const Tensor& logits, std::span<const TokenId> targets) {
  const auto rows = logits.rows(), vocab = logits.cols();
  if (vocab < 2) throw DimensionError("softmax_xent: need at least 2 classes");
  if (targets.size() != rows) {
    throw DimensionError("softmax_xent: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  auto lv = logits.values();
  std::vector<double> probs(rows * vocab, 0.0);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const TokenId t = targets[r];
    if (t == kIgnoreTarget) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexError("softmax_xent: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
    auto ls = log_softmax(lv.subspan(r * vocab, vocab));
    loss -= ls[t];
    for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] = std::exp(ls[j]);
  }
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  return make_result({1}, {loss}, {logits},
                     [vocab, tgt = std::move(tgt), probs = std::move(probs)](detail::Node& self) {
                       auto& p = parent(self, 0);
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       const double up = self.grad[0];
                       for (std::size_t r = 0; r < tgt.size(); ++r) {
                         if (tgt[r] == kIgnoreTarget) continue;
                         for (std::size_t j = 0; j < vocab; ++j) g[r * vocab + j] += up * probs[r * vocab + j];
                         g[r * vocab + tgt[r]] -= up;
                       }
                     });
}

Tensor softmax_xent(const Tensor& logits, TokenId target) {
  if (logits.rows() != 1) throw DimensionError("softmax_xent: expected a single row of logits");
  const TokenId t[1] = {target};
  return softmax_xent(logits, std::span<const TokenId>(t, 1));
}

}  // namespace fusecap::nn
