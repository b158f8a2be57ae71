#include "sfi/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "sfi/errors.hpp"

namespace sfi::nn {

std::uint64_t FlopCounter::total() const {
  std::uint64_t n = 0;
  for (std::uint64_t f : flops) n += f;
  return n;
}

std::uint64_t FlopCounter::interactor() const {
  return of(OpKind::kSimilarity) + of(OpKind::kConv3d) + of(OpKind::kMaxPool3d);
}

namespace {

std::atomic<std::uint64_t> next_graph_id{1};

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) + ", got " +
                         to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

}  // namespace

Graph::Graph(bool record) : record_(record), id_(next_graph_id.fetch_add(1)) {}

void Graph::note_margin(double margin) { min_margin_ = std::min(min_margin_, std::abs(margin)); }

bool Graph::track(std::initializer_list<const Tensor*> inputs) const {
  if (!record_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void Graph::attach(Tensor& out, std::function<void()> rule) {
  out.impl()->requires_grad = true;
  out.impl()->graph_id = id_;
  tape_.push_back(std::move(rule));
}

Tensor Graph::embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "embedding", "table");
  if (ids.empty()) throw DimensionError("embedding: empty id sequence");
  const std::size_t vocab = table.dim(0);
  const std::size_t width = table.dim(1);
  Tensor out({ids.size(), width});
  auto src = table.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width,
                dst.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  check_finite(out, "embedding");
  if (track({&table})) {
    std::vector<std::int32_t> rows(ids.begin(), ids.end());
    attach(out, [table, out, rows = std::move(rows), width]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gt = table.mutable_grad();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t d = 0; d < width; ++d) gt[rows[i] * width + d] += g[i * width + d];
      }
    });
  }
  return out;
}

Tensor Graph::dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  std::vector<double> factor(x.size());
  for (double& f : factor) f = keep(rng) ? scale : 0.0;
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < factor.size(); ++i) dst[i] = src[i] * factor[i];
  flops_.add(OpKind::kDropout, x.size());
  if (track({&x})) {
    attach(out, [x, out, factor = std::move(factor)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < factor.size(); ++i) gx[i] += g[i] * factor[i];
    });
  }
  return out;
}

Tensor Graph::conv1d_dilated(const Tensor& seq, const Tensor& kernel, const Tensor& bias, std::size_t dilation) {
  require_rank(seq, 2, "conv1d_dilated", "seq");
  require_rank(kernel, 3, "conv1d_dilated", "kernel");
  if (dilation < 1) throw DimensionError("conv1d_dilated: dilation must be >= 1");
  const std::size_t taps = kernel.dim(0);
  if (taps % 2 == 0) throw DimensionError("conv1d_dilated: kernel needs an odd tap count (2w+1)");
  const std::size_t len = seq.dim(0);
  const std::size_t in_dim = seq.dim(1);
  const std::size_t filters = kernel.dim(2);
  if (kernel.dim(1) != in_dim) {
    throw DimensionError("conv1d_dilated: kernel input width " + std::to_string(kernel.dim(1)) +
                         " does not match sequence width " + std::to_string(in_dim));
  }
  if (bias.size() != filters) throw DimensionError("conv1d_dilated: bias length must equal filter count");
  const auto half = static_cast<long>(taps / 2);
  const auto step = static_cast<long>(dilation);
  const auto n = static_cast<long>(len);

  Tensor out({len, filters});
  auto x = seq.data();
  auto k = kernel.data();
  auto b = bias.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < len; ++i) {
    double* acc = &y[i * filters];
    std::copy(b.begin(), b.end(), acc);
    for (std::size_t t = 0; t < taps; ++t) {
      const long j = static_cast<long>(i) + (static_cast<long>(t) - half) * step;
      if (j < 0 || j >= n) continue;
      const double* row = &x[static_cast<std::size_t>(j) * in_dim];
      for (std::size_t c = 0; c < in_dim; ++c) {
        const double s = row[c];
        const double* krow = &k[(t * in_dim + c) * filters];
        for (std::size_t o = 0; o < filters; ++o) acc[o] += s * krow[o];
      }
    }
  }
  for (double& v : y) {
    note_margin(v);
    if (v < 0.0) v = 0.0;
  }
  flops_.add(OpKind::kConv1d, 2ull * len * taps * in_dim * filters);
  check_finite(out, "conv1d_dilated");

  if (track({&seq, &kernel, &bias})) {
    attach(out, [seq, kernel, bias, out, len, in_dim, filters, taps, half, step, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      std::vector<double> gp(g.size());
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = y[i] > 0.0 ? g[i] : 0.0;
      auto x = seq.data();
      auto k = kernel.data();
      std::span<double> gx, gk, gb;
      if (seq.requires_grad()) gx = seq.mutable_grad();
      if (kernel.requires_grad()) gk = kernel.mutable_grad();
      if (bias.requires_grad()) gb = bias.mutable_grad();
      for (std::size_t i = 0; i < len; ++i) {
        const double* gi = &gp[i * filters];
        if (!gb.empty()) {
          for (std::size_t o = 0; o < filters; ++o) gb[o] += gi[o];
        }
        for (std::size_t t = 0; t < taps; ++t) {
          const long j = static_cast<long>(i) + (static_cast<long>(t) - half) * step;
          if (j < 0 || j >= n) continue;
          const std::size_t row = static_cast<std::size_t>(j) * in_dim;
          for (std::size_t c = 0; c < in_dim; ++c) {
            const std::size_t kbase = (t * in_dim + c) * filters;
            if (!gx.empty()) {
              double acc = 0.0;
              for (std::size_t o = 0; o < filters; ++o) acc += k[kbase + o] * gi[o];
              gx[row + c] += acc;
            }
            if (!gk.empty()) {
              const double s = x[row + c];
              for (std::size_t o = 0; o < filters; ++o) gk[kbase + o] += s * gi[o];
            }
          }
        }
      }
    });
  }
  return out;
}

namespace {

struct Range {
  std::size_t begin;
  std::size_t end;
};

// Output positions whose tap `offset` (already shifted by -pad) lands inside [0, extent).
Range valid_range(std::size_t extent, long offset) {
  const long lo = std::max<long>(0, -offset);
  const long hi = std::min<long>(static_cast<long>(extent), static_cast<long>(extent) - offset);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

Tensor Graph::conv3d(const Tensor& cube, const Tensor& kernel, const Tensor& bias) {
  require_rank(cube, 4, "conv3d", "cube");
  require_rank(kernel, 5, "conv3d", "kernel");
  const std::size_t cin = cube.dim(0), depth = cube.dim(1), height = cube.dim(2), width = cube.dim(3);
  const std::size_t cout = kernel.dim(0);
  const std::size_t kd = kernel.dim(2), kh = kernel.dim(3), kw = kernel.dim(4);
  if (kernel.dim(1) != cin) throw DimensionError("conv3d: kernel input channels do not match cube");
  if (kd % 2 == 0 || kh % 2 == 0 || kw % 2 == 0) throw DimensionError("conv3d: kernel extents must be odd");
  if (bias.size() != cout) throw DimensionError("conv3d: bias length must equal output channels");
  const long pd = static_cast<long>(kd / 2), ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  const std::size_t plane = height * width;
  const std::size_t volume = depth * plane;

  Tensor out({cout, depth, height, width});
  auto x = cube.data();
  auto k = kernel.data();
  auto b = bias.data();
  auto y = out.mutable_data();
  for (std::size_t co = 0; co < cout; ++co) {
    std::fill_n(y.begin() + static_cast<std::ptrdiff_t>(co * volume), volume, b[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* xin = &x[ci * volume];
      double* yout = &y[co * volume];
      for (std::size_t a = 0; a < kd; ++a) {
        const long od = static_cast<long>(a) - pd;
        const Range rd = valid_range(depth, od);
        for (std::size_t bh = 0; bh < kh; ++bh) {
          const long oh = static_cast<long>(bh) - ph;
          const Range rh = valid_range(height, oh);
          for (std::size_t c = 0; c < kw; ++c) {
            const long ow = static_cast<long>(c) - pw;
            const Range rw = valid_range(width, ow);
            const double wv = k[(((co * cin + ci) * kd + a) * kh + bh) * kw + c];
            for (std::size_t d = rd.begin; d < rd.end; ++d) {
              for (std::size_t h = rh.begin; h < rh.end; ++h) {
                const double* src = xin + (static_cast<long>(d) + od) * static_cast<long>(plane) +
                                    (static_cast<long>(h) + oh) * static_cast<long>(width) + ow;
                double* dst = yout + d * plane + h * width;
                for (std::size_t w = rw.begin; w < rw.end; ++w) dst[w] += wv * src[w];
              }
            }
          }
        }
      }
    }
  }
  for (double& v : y) {
    note_margin(v);
    if (v < 0.0) v = 0.0;
  }
  flops_.add(OpKind::kConv3d, 2ull * cout * cin * kd * kh * kw * volume);
  check_finite(out, "conv3d");

  if (track({&cube, &kernel, &bias})) {
    attach(out, [cube, kernel, bias, out, cin, cout, depth, height, width, kd, kh, kw, pd, ph, pw, plane,
                 volume]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      std::vector<double> gp(g.size());
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = y[i] > 0.0 ? g[i] : 0.0;
      auto x = cube.data();
      auto k = kernel.data();
      std::span<double> gx, gk, gb;
      if (cube.requires_grad()) gx = cube.mutable_grad();
      if (kernel.requires_grad()) gk = kernel.mutable_grad();
      if (bias.requires_grad()) gb = bias.mutable_grad();
      for (std::size_t co = 0; co < cout; ++co) {
        const double* gout = &gp[co * volume];
        if (!gb.empty()) {
          double acc = 0.0;
          for (std::size_t i = 0; i < volume; ++i) acc += gout[i];
          gb[co] += acc;
        }
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* xin = &x[ci * volume];
          double* gin = gx.empty() ? nullptr : &gx[ci * volume];
          for (std::size_t a = 0; a < kd; ++a) {
            const long od = static_cast<long>(a) - pd;
            const Range rd = valid_range(depth, od);
            for (std::size_t bh = 0; bh < kh; ++bh) {
              const long oh = static_cast<long>(bh) - ph;
              const Range rh = valid_range(height, oh);
              for (std::size_t c = 0; c < kw; ++c) {
                const long ow = static_cast<long>(c) - pw;
                const Range rw = valid_range(width, ow);
                const std::size_t kidx = (((co * cin + ci) * kd + a) * kh + bh) * kw + c;
                const double wv = k[kidx];
                double acc = 0.0;
                for (std::size_t d = rd.begin; d < rd.end; ++d) {
                  for (std::size_t h = rh.begin; h < rh.end; ++h) {
                    const long shift = (static_cast<long>(d) + od) * static_cast<long>(plane) +
                                       (static_cast<long>(h) + oh) * static_cast<long>(width) + ow;
                    const double* src = xin + shift;
                    const double* go = gout + d * plane + h * width;
                    if (gin != nullptr) {
                      double* gdst = gin + shift;
                      for (std::size_t w = rw.begin; w < rw.end; ++w) gdst[w] += wv * go[w];
                    }
                    for (std::size_t w = rw.begin; w < rw.end; ++w) acc += src[w] * go[w];
                  }
                }
                if (!gk.empty()) gk[kidx] += acc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor Graph::maxpool3d(const Tensor& cube, std::array<std::size_t, 3> window, std::array<std::size_t, 3> stride) {
  require_rank(cube, 4, "maxpool3d", "cube");
  for (std::size_t i = 0; i < 3; ++i) {
    if (window[i] == 0 || stride[i] == 0) throw DimensionError("maxpool3d: window and stride must be positive");
  }
  const std::size_t channels = cube.dim(0);
  const std::array<std::size_t, 3> in{cube.dim(1), cube.dim(2), cube.dim(3)};
  std::array<std::size_t, 3> outx{};
  for (std::size_t i = 0; i < 3; ++i) outx[i] = (in[i] + stride[i] - 1) / stride[i];

  Tensor out({channels, outx[0], outx[1], outx[2]});
  std::vector<std::size_t> argmax(out.size());
  auto x = cube.data();
  auto y = out.mutable_data();
  std::size_t visited = 0;
  std::size_t o = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t base = c * in[0] * in[1] * in[2];
    for (std::size_t od = 0; od < outx[0]; ++od) {
      const std::size_t d0 = od * stride[0], d1 = std::min(in[0], d0 + window[0]);
      for (std::size_t oh = 0; oh < outx[1]; ++oh) {
        const std::size_t h0 = oh * stride[1], h1 = std::min(in[1], h0 + window[1]);
        for (std::size_t ow = 0; ow < outx[2]; ++ow, ++o) {
          const std::size_t w0 = ow * stride[2], w1 = std::min(in[2], w0 + window[2]);
          double best = -std::numeric_limits<double>::infinity();
          double runner_up = -std::numeric_limits<double>::infinity();
          std::size_t best_at = 0;
          for (std::size_t d = d0; d < d1; ++d) {
            for (std::size_t h = h0; h < h1; ++h) {
              for (std::size_t w = w0; w < w1; ++w) {
                const std::size_t idx = base + (d * in[1] + h) * in[2] + w;
                const double v = x[idx];
                ++visited;
                if (v > best) {
                  runner_up = best;
                  best = v;
                  best_at = idx;
                } else if (v > runner_up) {
                  runner_up = v;
                }
              }
            }
          }
          y[o] = best;
          argmax[o] = best_at;
          // Ties among ReLU-dead zeros carry no gradient and are not kinks.
          if (std::isfinite(runner_up) && !(best == 0.0 && runner_up == 0.0)) note_margin(best - runner_up);
        }
      }
    }
  }
  flops_.add(OpKind::kMaxPool3d, visited);
  check_finite(out, "maxpool3d");

  if (track({&cube})) {
    attach(out, [cube, out, argmax = std::move(argmax)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = cube.mutable_grad();
      for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
    });
  }
  return out;
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "a");
  require_rank(b, 2, "matmul", "b");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor out({m, n});
  auto x = a.data();
  auto w = b.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double s = x[i * k + p];
      if (s == 0.0) continue;
      const double* row = &w[p * n];
      double* dst = &y[i * n];
      for (std::size_t j = 0; j < n; ++j) dst[j] += s * row[j];
    }
  }
  flops_.add(OpKind::kMatmul, 2ull * m * k * n);
  check_finite(out, "matmul");
  if (track({&a, &b})) {
    attach(out, [a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        auto w = b.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * w[p * n + j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        auto x = a.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double s = x[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += s * g[i * n + j];
          }
        }
      }
    });
  }
  return out;
}

Tensor Graph::transpose(const Tensor& a) {
  require_rank(a, 2, "transpose", "a");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  auto x = a.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
  }
  if (track({&a})) {
    attach(out, [a, out, m, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
      }
    });
  }
  return out;
}

Tensor Graph::reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (track({&x})) {
    attach(out, [x, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor Graph::softmax(const Tensor& x, const Mask& mask) {
  if (x.rank() == 0) throw DimensionError("softmax: needs at least one axis");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  if (!mask.empty()) {
    if (mask.size() != n) throw DimensionError("softmax: mask length must equal the last extent");
    if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
      throw DegenerateInputError("softmax: every entry is masked");
    }
  }
  const auto keep = [&mask](std::size_t j) { return mask.empty() || mask[j] != 0; };
  Tensor out(x.shape());
  auto in = x.data();
  auto y = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = &in[r * n];
    double* dst = &y[r * n];
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (keep(j)) top = std::max(top, src[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] = keep(j) ? std::exp(src[j] - top) : 0.0;
      total += dst[j];
    }
    for (std::size_t j = 0; j < n; ++j) dst[j] /= total;
  }
  flops_.add(OpKind::kSoftmax, 4ull * x.size());
  check_finite(out, "softmax");
  if (track({&x})) {
    attach(out, [x, out, n, rows]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      auto gx = x.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double inner = 0.0;
        for (std::size_t j = 0; j < n; ++j) inner += y[r * n + j] * g[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - inner);
      }
    });
  }
  return out;
}

Tensor Graph::stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  const Shape& inner = parts[0].shape();
  for (const Tensor& p : parts) require_same_shape(parts[0], p, "stack");
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  const std::size_t chunk = parts[0].size();
  std::vector<double> data;
  data.reserve(chunk * parts.size());
  for (const Tensor& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  Tensor out(std::move(shape), std::move(data));
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (record_ && any) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    attach(out, [inputs = std::move(inputs), out, chunk]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        auto gi = inputs[i].mutable_grad();
        for (std::size_t j = 0; j < chunk; ++j) gi[j] += g[i * chunk + j];
      }
    });
  }
  return out;
}

Tensor Graph::concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  std::vector<double> data;
  for (const Tensor& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  const std::size_t total = data.size();
  Tensor out(Shape{total}, std::move(data));
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (record_ && any) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    attach(out, [inputs = std::move(inputs), out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::size_t offset = 0;
      for (Tensor& in : inputs) {
        if (in.requires_grad()) {
          auto gi = in.mutable_grad();
          for (std::size_t j = 0; j < gi.size(); ++j) gi[j] += g[offset + j];
        }
        offset += in.size();
      }
    });
  }
  return out;
}

Tensor Graph::select(const Tensor& x, std::size_t index) {
  if (x.rank() < 1) throw DimensionError("select: scalar input");
  if (index >= x.dim(0)) throw IndexError("select: index out of range");
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t chunk = numel(shape);
  auto src = x.data().subspan(index * chunk, chunk);
  Tensor out(std::move(shape), std::vector<double>(src.begin(), src.end()));
  if (track({&x})) {
    attach(out, [x, out, index, chunk]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t j = 0; j < chunk; ++j) gx[index * chunk + j] += g[j];
    });
  }
  return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto x = a.data();
  auto w = b.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + w[i];
  flops_.add(OpKind::kElementwise, y.size());
  check_finite(out, "add");
  if (track({&a, &b})) {
    attach(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto gt = t->mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    });
  }
  return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto x = a.data();
  auto w = b.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * w[i];
  flops_.add(OpKind::kElementwise, y.size());
  check_finite(out, "mul");
  if (track({&a, &b})) {
    attach(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        auto w = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * w[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

Tensor Graph::add_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() == 0 || b.size() != x.shape().back()) {
    throw DimensionError("add_bias: bias length must equal the last extent of " + to_string(x.shape()));
  }
  const std::size_t n = b.size();
  Tensor out(x.shape());
  auto in = x.data();
  auto bias = b.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = in[i] + bias[i % n];
  flops_.add(OpKind::kElementwise, y.size());
  check_finite(out, "add_bias");
  if (track({&x, &b})) {
    attach(out, [x, b, out, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
      }
    });
  }
  return out;
}

Tensor Graph::scale_rows(const Tensor& x, const Tensor& w) {
  if (x.rank() == 0 || w.size() != x.dim(0)) {
    throw DimensionError("scale_rows: need one weight per leading slice of " + to_string(x.shape()));
  }
  const std::size_t rows = x.dim(0);
  const std::size_t chunk = x.size() / rows;
  Tensor out(x.shape());
  auto in = x.data();
  auto wt = w.data();
  auto y = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < chunk; ++j) y[r * chunk + j] = in[r * chunk + j] * wt[r];
  }
  flops_.add(OpKind::kElementwise, y.size());
  check_finite(out, "scale_rows");
  if (track({&x, &w})) {
    attach(out, [x, w, out, rows, chunk]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto in = x.data();
      auto wt = w.data();
      std::span<double> gx, gw;
      if (x.requires_grad()) gx = x.mutable_grad();
      if (w.requires_grad()) gw = w.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < chunk; ++j) {
          const std::size_t i = r * chunk + j;
          if (!gx.empty()) gx[i] += g[i] * wt[r];
          acc += g[i] * in[i];
        }
        if (!gw.empty()) gw[r] += acc;
      }
    });
  }
  return out;
}

Tensor Graph::sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::scalar(total);
  check_finite(out, "sum");
  if (track({&x})) {
    attach(out, [x, out]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      for (double& gx : x.mutable_grad()) gx += g;
    });
  }
  return out;
}

Tensor Graph::dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double total = 0.0;
  auto x = a.data();
  auto w = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i] * w[i];
  Tensor out = Tensor::scalar(total);
  flops_.add(OpKind::kElementwise, 2ull * x.size());
  check_finite(out, "dot");
  if (track({&a, &b})) {
    attach(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        auto w = b.data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * w[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        auto x = a.data();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * x[i];
      }
    });
  }
  return out;
}

Tensor Graph::cosine_rows(const Tensor& rows, const Tensor& query, const Mask& valid, double invalid_value) {
  require_rank(rows, 2, "cosine_rows", "rows");
  const std::size_t m = rows.dim(0), d = rows.dim(1);
  if (query.size() != d) throw DimensionError("cosine_rows: query length must equal row width");
  if (!valid.empty() && valid.size() != m) throw DimensionError("cosine_rows: mask length must equal row count");
  auto p = rows.data();
  auto q = query.data();
  double qn = 0.0;
  for (double v : q) qn += v * v;
  qn = std::sqrt(qn);
  std::vector<double> norms(m, 0.0);
  Tensor out(Shape{m});
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    if (!valid.empty() && valid[i] == 0) {
      y[i] = invalid_value;
      continue;
    }
    double pn = 0.0, inner = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      pn += p[i * d + j] * p[i * d + j];
      inner += p[i * d + j] * q[j];
    }
    pn = std::sqrt(pn);
    norms[i] = pn;
    y[i] = (pn == 0.0 || qn == 0.0) ? 0.0 : inner / (pn * qn);
  }
  flops_.add(OpKind::kCosine, 4ull * m * d + 2ull * d);
  check_finite(out, "cosine_rows");
  if (track({&rows, &query})) {
    attach(out, [rows, query, out, valid, norms = std::move(norms), qn, m, d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto y = out.data();
      auto p = rows.data();
      auto q = query.data();
      std::span<double> gp, gq;
      if (rows.requires_grad()) gp = rows.mutable_grad();
      if (query.requires_grad()) gq = query.mutable_grad();
      for (std::size_t i = 0; i < m; ++i) {
        if (!valid.empty() && valid[i] == 0) continue;
        const double pn = norms[i];
        if (pn == 0.0 || qn == 0.0) continue;
        const double s = y[i];
        for (std::size_t j = 0; j < d; ++j) {
          const double pij = p[i * d + j];
          if (!gp.empty()) gp[i * d + j] += g[i] * (q[j] / (pn * qn) - s * pij / (pn * pn));
          if (!gq.empty()) gq[j] += g[i] * (pij / (pn * qn) - s * q[j] / (qn * qn));
        }
      }
    });
  }
  return out;
}

Tensor Graph::gather_rows(const Tensor& x, std::span<const long> indices, double fill) {
  if (x.rank() < 1) throw DimensionError("gather_rows: scalar input");
  if (indices.empty()) throw DimensionError("gather_rows: no indices");
  const std::size_t rows = x.dim(0);
  const std::size_t chunk = x.size() / rows;
  Shape shape = x.shape();
  shape[0] = indices.size();
  Tensor out(std::move(shape));
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const long r = indices[k];
    if (r < 0) {
      std::fill_n(dst.begin() + static_cast<std::ptrdiff_t>(k * chunk), chunk, fill);
      continue;
    }
    if (static_cast<std::size_t>(r) >= rows) throw IndexError("gather_rows: index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(r) * chunk), chunk,
                dst.begin() + static_cast<std::ptrdiff_t>(k * chunk));
  }
  flops_.add(OpKind::kGather, dst.size());
  if (track({&x})) {
    std::vector<long> idx(indices.begin(), indices.end());
    attach(out, [x, out, idx = std::move(idx), chunk]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] < 0) continue;
        const std::size_t base = static_cast<std::size_t>(idx[k]) * chunk;
        for (std::size_t j = 0; j < chunk; ++j) gx[base + j] += g[k * chunk + j];
      }
    });
  }
  return out;
}

Tensor Graph::threshold_gate(const Tensor& x, double threshold) {
  Tensor out(x.shape());
  auto in = x.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = in[i] < threshold ? 0.0 : in[i];
  if (track({&x})) {
    attach(out, [x, out, threshold]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto in = x.data();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(in[i] < threshold)) gx[i] += g[i];
      }
    });
  }
  return out;
}

Tensor Graph::similarity_cube(const Tensor& selected, const Tensor& candidate) {
  require_rank(selected, 4, "similarity_cube", "selected");
  require_rank(candidate, 3, "similarity_cube", "candidate");
  const std::size_t k = selected.dim(0), levels = selected.dim(1), n = selected.dim(2), f = selected.dim(3);
  const std::size_t n2 = candidate.dim(1);
  if (candidate.dim(0) != levels || candidate.dim(2) != f) {
    throw DimensionError("similarity_cube: level count or width differs between " + to_string(selected.shape()) +
                         " and " + to_string(candidate.shape()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(f));
  Tensor out({levels, k, n, n2});
  auto t = selected.data();
  auto p = candidate.data();
  auto y = out.mutable_data();
  for (std::size_t l = 0; l < levels; ++l) {
    for (std::size_t v = 0; v < k; ++v) {
      const double* a = &t[(v * levels + l) * n * f];
      const double* b = &p[l * n2 * f];
      double* o = &y[(l * k + v) * n * n2];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n2; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < f; ++c) acc += a[i * f + c] * b[j * f + c];
          o[i * n2 + j] = acc * scale;
        }
      }
    }
  }
  flops_.add(OpKind::kSimilarity, 2ull * levels * k * n * n2 * f);
  check_finite(out, "similarity_cube");
  if (track({&selected, &candidate})) {
    attach(out, [selected, candidate, out, k, levels, n, n2, f, scale]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto t = selected.data();
      auto p = candidate.data();
      std::span<double> gt, gc;
      if (selected.requires_grad()) gt = selected.mutable_grad();
      if (candidate.requires_grad()) gc = candidate.mutable_grad();
      for (std::size_t l = 0; l < levels; ++l) {
        for (std::size_t v = 0; v < k; ++v) {
          const std::size_t abase = (v * levels + l) * n * f;
          const std::size_t bbase = l * n2 * f;
          const double* go = &g[(l * k + v) * n * n2];
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n2; ++j) {
              const double gij = go[i * n2 + j] * scale;
              if (gij == 0.0) continue;
              for (std::size_t c = 0; c < f; ++c) {
                if (!gt.empty()) gt[abase + i * f + c] += gij * p[bbase + j * f + c];
                if (!gc.empty()) gc[bbase + j * f + c] += gij * t[abase + i * f + c];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor Graph::sampled_softmax_nll(const Tensor& scores) {
  const std::size_t n = scores.size();
  if (n == 0) throw DimensionError("sampled_softmax_nll: no scores");
  auto s = scores.data();
  const double top = *std::max_element(s.begin(), s.end());
  double total = 0.0;
  for (double v : s) total += std::exp(v - top);
  const double lse = top + std::log(total);
  Tensor out = Tensor::scalar(lse - s[0]);
  flops_.add(OpKind::kLoss, 3ull * n);
  check_finite(out, "sampled_softmax_nll");
  if (track({&scores})) {
    attach(out, [scores, out, lse]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      auto s = scores.data();
      auto gs = scores.mutable_grad();
      for (std::size_t i = 0; i < s.size(); ++i) {
        gs[i] += g * (std::exp(s[i] - lse) - (i == 0 ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) throw DimensionError("backward: loss must be a scalar");
  if (!record_) throw GraphError("backward: graph was built without recording");
  if (backward_done_) throw GraphError("backward: already run on this graph");
  if (loss.graph_id() != id_) throw GraphError("backward: loss was not produced by this graph");
  backward_done_ = true;
  Tensor root = loss;
  root.mutable_grad()[0] = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

Tensor uniform_init(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape), true);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.mutable_data()) v = dist(rng);
  return t;
}

}  // namespace sfi::nn
