#include "sfi/interactor.hpp"

#include <algorithm>
#include <cmath>

#include "sfi/errors.hpp"

namespace sfi {

namespace {

constexpr std::size_t kCubeKernel = 3;

}  // namespace

InteractorParams init_interactor(const ModelConfig& config, std::mt19937_64& rng) {
  InteractorParams p;
  std::size_t in = config.levels();
  for (std::size_t out : config.conv3d_channels) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kCubeKernel * kCubeKernel * kCubeKernel));
    p.conv_kernels.push_back(nn::uniform_init({out, in, kCubeKernel, kCubeKernel, kCubeKernel}, bound, rng));
    p.conv_biases.emplace_back(nn::Shape{out}, true);
    in = out;
  }
  return p;
}

std::vector<nn::Shape> phi_stage_shapes(const ModelConfig& config) {
  if (config.pool == 0) throw ConfigError("pool must be positive");
  std::vector<nn::Shape> stages;
  nn::Shape s{config.levels(), config.select_k, config.title_len, config.title_len};
  stages.push_back(s);
  for (std::size_t channels : config.conv3d_channels) {
    s[0] = channels;
    stages.push_back(s);
    for (std::size_t axis = 1; axis < 4; ++axis) {
      s[axis] = (s[axis] + config.pool - 1) / config.pool;
      if (s[axis] == 0) throw ConfigError("interaction cube collapses to zero extent at " + nn::to_string(s));
    }
    stages.push_back(s);
  }
  return stages;
}

nn::Shape phi_shape(const ModelConfig& config) { return phi_stage_shapes(config).back(); }

std::size_t phi_size(const ModelConfig& config) { return nn::numel(phi_shape(config)); }

nn::Tensor similarity_matrices(nn::Graph& graph, const nn::Tensor& selected_fine, const nn::Tensor& candidate_fine) {
  return graph.similarity_cube(selected_fine, candidate_fine);
}

nn::Tensor extract_phi(nn::Graph& graph, const InteractorParams& params, const ModelConfig& config,
                       const nn::Tensor& cube) {
  const nn::Shape expected{config.levels(), config.select_k, config.title_len, config.title_len};
  if (cube.shape() != expected) {
    throw DimensionError("extract_phi: cube " + nn::to_string(cube.shape()) + ", expected " + nn::to_string(expected));
  }
  nn::Tensor x = cube;
  const std::array<std::size_t, 3> window{config.pool, config.pool, config.pool};
  for (std::size_t c = 0; c < params.conv_kernels.size(); ++c) {
    x = graph.conv3d(x, params.conv_kernels[c], params.conv_biases[c]);
    x = graph.maxpool3d(x, window, window);
  }
  return graph.reshape(x, {x.size()});
}

nn::Tensor coarse_signals(nn::Graph& graph, const nn::Tensor& history_coarse, const nn::Tensor& candidate_coarse,
                          const nn::Mask& valid) {
  if (history_coarse.rank() != 2 || candidate_coarse.size() != history_coarse.dim(1)) {
    throw DimensionError("coarse_signals: history " + nn::to_string(history_coarse.shape()) + " vs candidate " +
                         nn::to_string(candidate_coarse.shape()));
  }
  const std::size_t m = history_coarse.dim(0);
  if (!valid.empty() && valid.size() != m) throw DimensionError("coarse_signals: mask length must equal history rows");
  nn::Tensor psi = graph.reshape(
      graph.matmul(history_coarse, graph.reshape(candidate_coarse, {candidate_coarse.size(), 1})), {m});
  if (!valid.empty() && std::any_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v == 0; })) {
    nn::Tensor keep(nn::Shape{m});
    auto k = keep.mutable_data();
    for (std::size_t i = 0; i < m; ++i) k[i] = valid[i] ? 1.0 : 0.0;
    psi = graph.mul(psi, keep);
  }
  return psi;
}

}  // namespace sfi
