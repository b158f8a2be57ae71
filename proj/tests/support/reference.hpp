#pragma once

// Straight-line reimplementation of the forward pass over std::vector, used
// as an oracle. Shares no code with the tensor library beyond reading
// parameter values.

#include <algorithm>
#include <cmath>
#include <vector>

#include "sfi/model.hpp"

namespace sfi::reference {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

struct Encoded {
  std::vector<Mat> fine;  // [L][N][f]
  Vec coarse;             // [f]
};

inline Encoded encode(const EncoderParams& p, const ModelConfig& c, std::span<const std::int32_t> tokens,
                      const nn::Mask& mask) {
  const std::size_t n = tokens.size(), f = c.filters;
  Mat x(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < c.embed_dim; ++d) x[i].push_back(p.embedding.at(tokens[i] * c.embed_dim + d));
  }
  Encoded out;
  const long half = static_cast<long>(c.kernel_width / 2);
  for (std::size_t l = 0; l < c.levels(); ++l) {
    const std::size_t din = x[0].size();
    const long dil = static_cast<long>(c.dilations[l]);
    Mat y(n, Vec(f, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < f; ++o) {
        double acc = p.conv_biases[l].at(o);
        for (long k = -half; k <= half; ++k) {
          const long src = static_cast<long>(i) + k * dil;
          if (src < 0 || src >= static_cast<long>(n)) continue;
          for (std::size_t d = 0; d < din; ++d) {
            acc += x[static_cast<std::size_t>(src)][d] *
                   p.conv_kernels[l].at((static_cast<std::size_t>(k + half) * din + d) * f + o);
          }
        }
        y[i][o] = acc > 0 ? acc : 0.0;
      }
    }
    out.fine.push_back(y);
    x = y;
  }
  Mat mixed(n, Vec(f, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    Vec logits;
    for (const auto& lv : out.fine) {
      double s = 0;
      for (std::size_t o = 0; o < f; ++o) s += p.level_query.at(o) * lv[i][o];
      logits.push_back(s);
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double v : logits) z += std::exp(v - top);
    for (std::size_t l = 0; l < out.fine.size(); ++l) {
      for (std::size_t o = 0; o < f; ++o) mixed[i][o] += std::exp(logits[l] - top) / z * out.fine[l][i][o];
    }
  }
  out.coarse.assign(f, 0.0);
  if (std::none_of(mask.begin(), mask.end(), [](auto m) { return m != 0; })) return out;
  Vec logit(n, 0.0);
  double top = -1e300;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    for (std::size_t o = 0; o < f; ++o) logit[i] += p.word_query.at(o) * mixed[i][o];
    top = std::max(top, logit[i]);
  }
  double z = 0;
  Vec w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    w[i] = std::exp(logit[i] - top);
    z += w[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < f; ++o) out.coarse[o] += w[i] / z * mixed[i][o];
  }
  return out;
}

inline Vec project(const SelectorParams& p, const Vec& v) {
  const std::size_t d = p.proj_weight.dim(0), f = p.proj_weight.dim(1);
  Vec y(d);
  for (std::size_t r = 0; r < d; ++r) {
    y[r] = p.proj_bias.at(r);
    for (std::size_t c = 0; c < f; ++c) y[r] += p.proj_weight.at(r * f + c) * v[c];
  }
  return y;
}

inline double cosine(const Vec& a, const Vec& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

// cube [C][D][H][W]
using Cube = std::vector<std::vector<Mat>>;

inline Cube conv3d_relu(const Cube& x, const nn::Tensor& k, const nn::Tensor& b) {
  const std::size_t ci = x.size(), d = x[0].size(), h = x[0][0].size(), w = x[0][0][0].size();
  const std::size_t co = k.dim(0);
  Cube y(co, std::vector<Mat>(d, Mat(h, Vec(w, 0.0))));
  for (std::size_t o = 0; o < co; ++o)
    for (long z = 0; z < static_cast<long>(d); ++z)
      for (long r = 0; r < static_cast<long>(h); ++r)
        for (long s = 0; s < static_cast<long>(w); ++s) {
          double acc = b.at(o);
          for (std::size_t c = 0; c < ci; ++c)
            for (long dz = -1; dz <= 1; ++dz)
              for (long dr = -1; dr <= 1; ++dr)
                for (long ds = -1; ds <= 1; ++ds) {
                  const long zz = z + dz, rr = r + dr, ss = s + ds;
                  if (zz < 0 || rr < 0 || ss < 0 || zz >= static_cast<long>(d) || rr >= static_cast<long>(h) ||
                      ss >= static_cast<long>(w))
                    continue;
                  acc += k.at(((((o * ci + c) * 3 + static_cast<std::size_t>(dz + 1)) * 3 + static_cast<std::size_t>(dr + 1)) * 3) +
                              static_cast<std::size_t>(ds + 1)) *
                         x[c][static_cast<std::size_t>(zz)][static_cast<std::size_t>(rr)][static_cast<std::size_t>(ss)];
                }
          y[o][static_cast<std::size_t>(z)][static_cast<std::size_t>(r)][static_cast<std::size_t>(s)] = std::max(0.0, acc);
        }
  return y;
}

inline Cube maxpool(const Cube& x, std::size_t p) {
  const std::size_t c = x.size(), d = x[0].size(), h = x[0][0].size(), w = x[0][0][0].size();
  const std::size_t od = (d + p - 1) / p, oh = (h + p - 1) / p, ow = (w + p - 1) / p;
  Cube y(c, std::vector<Mat>(od, Mat(oh, Vec(ow, -1e300))));
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t z = 0; z < d; ++z)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t s = 0; s < w; ++s) {
          double& cell = y[ch][z / p][r / p][s / p];
          cell = std::max(cell, x[ch][z][r][s]);
        }
  return y;
}

// history: per slot an encoding, or nullptr for padding.
inline double score(const SfiModel& model, const std::vector<const Encoded*>& history, const Encoded& cand) {
  const ModelConfig& c = model.config();
  const ModelParams& p = model.params();
  const std::size_t m = c.max_history, k = c.select_k, f = c.filters, n = c.title_len, L = c.levels();
  std::vector<long> chosen;
  Vec weights;
  std::vector<bool> psi_valid(m, false);
  if (c.selection == SelectionMode::kLearned) {
    const Vec pc = project(p.selector, cand.coarse);
    Vec s(m, kInvalidScore);
    for (std::size_t i = 0; i < m; ++i) {
      if (history[i] != nullptr) {
        s[i] = cosine(project(p.selector, history[i]->coarse), pc);
        psi_valid[i] = true;
      }
    }
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < m; ++i) {
      if (history[i] != nullptr) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&s](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    if (order.size() > k) order.resize(k);
    std::sort(order.begin(), order.end());
    for (std::size_t i : order) {
      chosen.push_back(static_cast<long>(i));
      weights.push_back(s[i] >= c.gamma ? s[i] : 0.0);
    }
  } else {
    for (std::size_t i = 0; i < m && chosen.size() < k; ++i) {
      if (history[i] == nullptr) continue;
      chosen.push_back(static_cast<long>(i));
      weights.push_back(1.0);
      psi_valid[i] = true;
    }
  }
  Vec features;
  const bool silent = std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; });
  if (silent) {
    features.assign(model.phi_size(), 0.0);
  } else {
    Cube cube(L, std::vector<Mat>(k, Mat(n, Vec(n, 0.0))));
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t v = 0; v < chosen.size(); ++v)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0;
            for (std::size_t o = 0; o < f; ++o) {
              acc += weights[v] * history[static_cast<std::size_t>(chosen[v])]->fine[l][i][o] * cand.fine[l][j][o];
            }
            cube[l][v][i][j] = acc / std::sqrt(static_cast<double>(f));
          }
    for (std::size_t layer = 0; layer < p.interactor.conv_kernels.size(); ++layer) {
      cube = maxpool(conv3d_relu(cube, p.interactor.conv_kernels[layer], p.interactor.conv_biases[layer]), c.pool);
    }
    for (const auto& a : cube)
      for (const auto& b : a)
        for (const auto& r : b)
          for (double v : r) features.push_back(v);
  }
  for (std::size_t i = 0; i < m; ++i) {
    double dot = 0;
    if (psi_valid[i]) {
      for (std::size_t o = 0; o < f; ++o) dot += history[i]->coarse[o] * cand.coarse[o];
    }
    features.push_back(dot);
  }
  double y = p.click_bias.at(0);
  for (std::size_t i = 0; i < features.size(); ++i) y += p.click_weight.at(i) * features[i];
  return y;
}

}  // namespace sfi::reference
