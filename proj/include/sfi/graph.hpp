#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "sfi/tensor.hpp"

namespace sfi::nn {

enum class OpKind : std::size_t {
  kEmbedding,
  kDropout,
  kConv1d,
  kConv3d,
  kMaxPool3d,
  kMatmul,
  kSoftmax,
  kElementwise,
  kCosine,
  kGather,
  kSimilarity,
  kLoss,
  kCount
};

/// Floating-point operation tally per op kind (a multiply-add counts as 2).
struct FlopCounter {
  std::array<std::uint64_t, static_cast<std::size_t>(OpKind::kCount)> flops{};

  void add(OpKind kind, std::uint64_t n) { flops[static_cast<std::size_t>(kind)] += n; }
  std::uint64_t of(OpKind kind) const { return flops[static_cast<std::size_t>(kind)]; }
  std::uint64_t total() const;
  // similarity cube + 3D convolution + 3D pooling
  std::uint64_t interactor() const;
};

/// Tape for reverse-mode differentiation.
///
/// Every op is a member function. When the graph is recording and any input
/// requires a gradient, the op appends its backward rule to the tape and the
/// output joins the graph. A non-recording graph evaluates the same ops with
/// no bookkeeping, which is what inference uses.
///
/// Every forward op checks its output for NaN/Inf and throws NumericError.
class Graph {
 public:
  explicit Graph(bool record = true);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  std::size_t num_ops() const { return tape_.size(); }
  const FlopCounter& flops() const { return flops_; }

  // Smallest distance to a non-differentiable point seen during forward:
  // ReLU pre-activations, max-pool runner-up gaps, and whatever callers report
  // through note_margin (top-K and threshold gaps).
  double min_margin() const { return min_margin_; }
  void note_margin(double margin);

  // Lookup of rows of `table` [V x D]; ids must be in [0, V).
  Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);
  // Inverted dropout; identity when rate == 0.
  Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

  // ReLU(SAME-padded dilated convolution). seq [N x d_in], kernel
  // [(2w+1) x d_in x f], bias [f] -> [N x f]. Tap k reads row i + (k - w) * dilation.
  Tensor conv1d_dilated(const Tensor& seq, const Tensor& kernel, const Tensor& bias, std::size_t dilation);
  // ReLU(SAME-padded 3D convolution). cube [C_in x D x H x W], kernel
  // [C_out x C_in x kd x kh x kw] with odd extents, bias [C_out].
  Tensor conv3d(const Tensor& cube, const Tensor& kernel, const Tensor& bias);
  // Max pooling with partial edge windows: output extent = ceil(extent / stride).
  // Gradient goes to the window's first maximum in flat order.
  Tensor maxpool3d(const Tensor& cube, std::array<std::size_t, 3> window, std::array<std::size_t, 3> stride);

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor reshape(const Tensor& x, Shape shape);
  // Softmax over the last axis. `mask`, when non-empty, has one flag per
  // last-axis position and applies to every row; masked outputs are exactly 0.
  Tensor softmax(const Tensor& x, const Mask& mask = {});

  Tensor stack(std::span<const Tensor> parts);
  // Concatenation of flattened inputs into a vector.
  Tensor concat(std::span<const Tensor> parts);
  // Leading-axis slice.
  Tensor select(const Tensor& x, std::size_t index);

  Tensor add(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  // x [..., n] + b [n]
  Tensor add_bias(const Tensor& x, const Tensor& b);
  // Scales every leading-axis slice x[r] by w[r].
  Tensor scale_rows(const Tensor& x, const Tensor& w);
  Tensor sum(const Tensor& x);
  Tensor dot(const Tensor& a, const Tensor& b);

  // Row-wise cosine similarity of rows [M x d] against `query` [d].
  // Rows with valid[i] == 0 get `invalid_value`; zero-norm rows get 0.
  Tensor cosine_rows(const Tensor& rows, const Tensor& query, const Mask& valid, double invalid_value);
  // Picks leading-axis slices by index; index -1 yields a slice filled with `fill`.
  Tensor gather_rows(const Tensor& x, std::span<const long> indices, double fill);
  // y = x where x >= threshold, else 0 (derivative 1 and 0 respectively).
  Tensor threshold_gate(const Tensor& x, double threshold);
  // selected [K x L x N x f], candidate [L x N' x f] ->
  // [L x K x N x N'] with entry t_i[l] . p_j[l] / sqrt(f).
  Tensor similarity_cube(const Tensor& selected, const Tensor& candidate);
  // -log softmax(scores)[0], computed with max subtraction.
  Tensor sampled_softmax_nll(const Tensor& scores);

  // Runs the tape in reverse from a scalar loss produced by this graph.
  // May be called once per graph.
  void backward(const Tensor& loss);

 private:
  bool track(std::initializer_list<const Tensor*> inputs) const;
  void attach(Tensor& out, std::function<void()> rule);

  bool record_;
  bool backward_done_ = false;
  std::uint64_t id_;
  std::vector<std::function<void()>> tape_;
  FlopCounter flops_;
  double min_margin_ = std::numeric_limits<double>::infinity();
};

// Parameter tensor with entries uniform in [-bound, bound], requiring grad.
Tensor uniform_init(Shape shape, double bound, std::mt19937_64& rng);

}  // namespace sfi::nn
