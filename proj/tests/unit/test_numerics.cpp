#include <doctest.h>

#include <cmath>
#include <random>

#include "sfi/errors.hpp"
#include "sfi/graph.hpp"
#include "../support/gradcheck.hpp"

using namespace sfi;
using namespace sfi::nn;
using sfi::testing::check_gradients;
using sfi::testing::probe;
using sfi::testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

Tensor constant(Shape shape, std::vector<double> values) { return Tensor(std::move(shape), std::move(values)); }

// Direct loops, no tensor ops: SAME dilated conv followed by ReLU.
std::vector<double> conv1d_reference(const Tensor& seq, const Tensor& kernel, const Tensor& bias, long dilation) {
  const long n = static_cast<long>(seq.dim(0)), din = static_cast<long>(seq.dim(1));
  const long taps = static_cast<long>(kernel.dim(0)), f = static_cast<long>(kernel.dim(2));
  std::vector<double> out(static_cast<std::size_t>(n * f));
  for (long i = 0; i < n; ++i) {
    for (long o = 0; o < f; ++o) {
      double acc = bias.at(static_cast<std::size_t>(o));
      for (long k = 0; k < taps; ++k) {
        const long src = i + (k - taps / 2) * dilation;
        if (src < 0 || src >= n) continue;
        for (long c = 0; c < din; ++c) {
          acc += seq.at(static_cast<std::size_t>(src * din + c)) * kernel.at(static_cast<std::size_t>((k * din + c) * f + o));
        }
      }
      out[static_cast<std::size_t>(i * f + o)] = std::max(0.0, acc);
    }
  }
  return out;
}

std::vector<double> conv3d_reference(const Tensor& x, const Tensor& k, const Tensor& b) {
  const long ci = static_cast<long>(x.dim(0)), d = static_cast<long>(x.dim(1)), h = static_cast<long>(x.dim(2)),
             w = static_cast<long>(x.dim(3));
  const long co = static_cast<long>(k.dim(0));
  std::vector<double> out(static_cast<std::size_t>(co * d * h * w));
  for (long o = 0; o < co; ++o)
    for (long z = 0; z < d; ++z)
      for (long y = 0; y < h; ++y)
        for (long xx = 0; xx < w; ++xx) {
          double acc = b.at(static_cast<std::size_t>(o));
          for (long c = 0; c < ci; ++c)
            for (long dz = -1; dz <= 1; ++dz)
              for (long dy = -1; dy <= 1; ++dy)
                for (long dx = -1; dx <= 1; ++dx) {
                  const long sz = z + dz, sy = y + dy, sx = xx + dx;
                  if (sz < 0 || sz >= d || sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                  const double kv = k.at(static_cast<std::size_t>(((((o * ci + c) * 3 + dz + 1) * 3 + dy + 1) * 3) + dx + 1));
                  acc += kv * x.at(static_cast<std::size_t>(((c * d + sz) * h + sy) * w + sx));
                }
          out[static_cast<std::size_t>(((o * d + z) * h + y) * w + xx)] = std::max(0.0, acc);
        }
  return out;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and data length agree") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
    CHECK_THROWS_AS(constant({2, 2}, {1, 2, 3}), DimensionError);
  }

  TEST_CASE("handles share storage, clone copies") {
    Tensor a({2});
    Tensor b = a;
    b.mutable_data()[0] = 3.0;
    CHECK(a.at(0) == 3.0);
    Tensor c = a.clone();
    c.mutable_data()[0] = 4.0;
    CHECK(a.at(0) == 3.0);
    CHECK_THROWS_AS(a.at(5), IndexError);
  }
}

TEST_SUITE("graph ops: forward") {
  TEST_CASE("matmul examples") {
    Graph g(false);
    const Tensor eye = constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    std::mt19937_64 rng(1);
    const Tensor b = random_tensor({3, 4}, rng, -1, 1, false);
    const Tensor out = g.matmul(eye, b);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(out.at(i) == b.at(i));
    const Tensor r = g.matmul(constant({2, 2}, {1, 2, 3, 4}), constant({2, 1}, {1, 1}));
    CHECK(r.at(0) == 3.0);
    CHECK(r.at(1) == 7.0);
    CHECK_THROWS_AS(g.matmul(eye, constant({2, 1}, {1, 1})), DimensionError);
  }

  TEST_CASE("softmax examples") {
    Graph g(false);
    const Tensor u = g.softmax(constant({3}, {0, 0, 0}));
    for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const Tensor s = g.softmax(constant({2}, {5, 5}), Mask{1, 0});
    CHECK(s.at(0) == 1.0);
    CHECK(s.at(1) == 0.0);
    const Tensor t = g.softmax(constant({2}, {1, 2}));
    CHECK(std::abs(t.at(0) - 0.26894) < 1e-5);
    CHECK(std::abs(t.at(1) - 0.73106) < 1e-5);
    CHECK_THROWS_AS(g.softmax(constant({2}, {1, 2}), Mask{0, 0}), DegenerateInputError);
  }

  TEST_CASE("softmax sums to one and masked entries are exactly zero") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      const Tensor x = random_tensor({4, 7}, rng, -20, 20, false);
      Mask mask(7);
      for (auto& m : mask) m = rng() % 2;
      mask[rng() % 7] = 1;
      Graph g(false);
      const Tensor y = g.softmax(x, mask);
      for (std::size_t r = 0; r < 4; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
          total += y.at(r * 7 + j);
          if (!mask[j]) CHECK(y.at(r * 7 + j) == 0.0);
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
      }
    }
  }

  TEST_CASE("masked softmax entries receive exactly zero gradient") {
    Tensor x = constant({4}, {0.3, -1.0, 2.0, 0.5});
    x.set_requires_grad(true);
    Graph g;
    const Tensor y = g.softmax(x, Mask{1, 0, 1, 0});
    g.backward(probe(g, y));
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[3] == 0.0);
  }

  TEST_CASE("conv1d examples") {
    Graph g(false);
    const Tensor zero = g.conv1d_dilated(Tensor({5, 2}), constant({3, 2, 3}, std::vector<double>(18, 0.7)), Tensor({3}), 2);
    for (double v : zero.data()) CHECK(v == 0.0);
    const Tensor id = g.conv1d_dilated(constant({1, 1}, {2}), constant({3, 1, 1}, {0, 1, 0}), Tensor({1}), 1);
    CHECK(id.at(0) == 2.0);
    const Tensor d2 = g.conv1d_dilated(constant({4, 1}, {1, 2, 3, 4}), constant({3, 1, 1}, {1, 1, 1}), Tensor({1}), 2);
    CHECK(std::vector<double>(d2.data().begin(), d2.data().end()) == std::vector<double>{4, 6, 4, 6});
  }

  TEST_CASE("conv1d matches a direct loop and is positively homogeneous") {
    std::mt19937_64 rng(5);
    for (std::size_t dilation : {1, 2, 3}) {
      const Tensor seq = random_tensor({7, 3}, rng, -1, 1, false);
      const Tensor kernel = random_tensor({3, 3, 4}, rng, -1, 1, false);
      const Tensor bias = random_tensor({4}, rng, -1, 1, false);
      Graph g(false);
      const Tensor out = g.conv1d_dilated(seq, kernel, bias, dilation);
      const auto ref = conv1d_reference(seq, kernel, bias, static_cast<long>(dilation));
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out.at(i) == doctest::Approx(ref[i]).epsilon(1e-13));

      const Tensor zero_bias({4});
      const Tensor base = g.conv1d_dilated(seq, kernel, zero_bias, dilation);
      Tensor scaled = seq.clone();
      for (double& v : scaled.mutable_data()) v *= 2.5;
      const Tensor out2 = g.conv1d_dilated(scaled, kernel, zero_bias, dilation);
      for (std::size_t i = 0; i < base.size(); ++i) CHECK(out2.at(i) == doctest::Approx(2.5 * base.at(i)).epsilon(1e-13));
    }
  }

  TEST_CASE("conv3d examples and direct loop") {
    Graph g(false);
    const Tensor z = g.conv3d(Tensor({2, 3, 3, 3}), constant({1, 2, 3, 3, 3}, std::vector<double>(54, 0.3)), Tensor({1}));
    for (double v : z.data()) CHECK(v == 0.0);
    std::vector<double> center(27, 0.0);
    center[13] = 1.0;
    CHECK(g.conv3d(constant({1, 1, 1, 1}, {-0.4}), constant({1, 1, 3, 3, 3}, center), Tensor({1})).at(0) == 0.0);
    CHECK(g.conv3d(constant({1, 1, 1, 1}, {0.4}), constant({1, 1, 3, 3, 3}, center), Tensor({1})).at(0) == 0.4);
    const Tensor ones = g.conv3d(Tensor::full({1, 3, 3, 3}, 1.0), Tensor::full({1, 1, 3, 3, 3}, 1.0), Tensor({1}));
    CHECK(ones.at(13) == 27.0);
    CHECK(ones.at(0) == 8.0);

    std::mt19937_64 rng(9);
    const Tensor x = random_tensor({2, 4, 3, 5}, rng, -1, 1, false);
    const Tensor k = random_tensor({3, 2, 3, 3, 3}, rng, -1, 1, false);
    const Tensor b = random_tensor({3}, rng, -1, 1, false);
    const Tensor y = g.conv3d(x, k, b);
    const auto ref = conv3d_reference(x, k, b);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.at(i) == doctest::Approx(ref[i]).epsilon(1e-12));
  }

  TEST_CASE("maxpool3d examples") {
    Graph g(false);
    std::vector<double> v(27, 0.0);
    v[11] = 5.0;
    const Tensor one = g.maxpool3d(constant({1, 3, 3, 3}, v), {3, 3, 3}, {3, 3, 3});
    CHECK(one.shape() == Shape{1, 1, 1, 1});
    CHECK(one.at(0) == 5.0);
    const Tensor rem = g.maxpool3d(Tensor::full({1, 4, 3, 3}, 1.0), {3, 3, 3}, {3, 3, 3});
    CHECK(rem.shape() == Shape{1, 2, 1, 1});

    Tensor flat = Tensor::full({1, 3, 3, 3}, 2.0);
    flat.set_requires_grad(true);
    Graph rec;
    const Tensor out = rec.maxpool3d(flat, {3, 3, 3}, {3, 3, 3});
    CHECK(out.at(0) == 2.0);
    rec.backward(rec.sum(out));
    CHECK(flat.grad()[0] == 1.0);
    for (std::size_t i = 1; i < 27; ++i) CHECK(flat.grad()[i] == 0.0);
  }

  TEST_CASE("maxpool3d output extent is ceil division") {
    Graph g(false);
    for (std::size_t d = 1; d <= 8; ++d) {
      for (std::size_t s = 1; s <= 4; ++s) {
        const Tensor out = g.maxpool3d(Tensor({2, d, d + 1, 2 * d}), {s, s, s}, {s, s, s});
        CHECK(out.shape() == Shape{2, (d + s - 1) / s, (d + s) / s, (2 * d + s - 1) / s});
      }
    }
  }

  TEST_CASE("similarity cube hand example") {
    Graph g(false);
    const Tensor t = constant({1, 1, 1, 2}, {1, 2});
    const Tensor p = constant({1, 1, 2}, {3, 4});
    CHECK(g.similarity_cube(t, p).at(0) == doctest::Approx(11.0 / std::sqrt(2.0)).epsilon(1e-14));
    CHECK(std::abs(g.similarity_cube(t, p).at(0) - 7.7782) < 1e-4);
  }

  TEST_CASE("sampled softmax NLL examples") {
    Graph g(false);
    CHECK(g.sampled_softmax_nll(Tensor::full({5}, 0.3)).item() == doctest::Approx(std::log(5.0)).epsilon(1e-14));
    CHECK(std::abs(g.sampled_softmax_nll(constant({3}, {1, 0, 0})).item() - 0.5514) < 1e-4);
    CHECK(g.sampled_softmax_nll(constant({3}, {800, 0, -3})).item() < 1e-300);
    const double a = g.sampled_softmax_nll(constant({4}, {0.2, 1.5, -0.7, 0.1})).item();
    const double b = g.sampled_softmax_nll(constant({4}, {100.2, 101.5, 99.3, 100.1})).item();
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }

  TEST_CASE("cosine rows: parallel, orthogonal, opposite, invalid, zero norm") {
    Graph g(false);
    const Tensor rows = constant({5, 2}, {2, 0, 0, 3, -1, 0, 0, 0, 1, 1});
    const Tensor s = g.cosine_rows(rows, constant({2}, {1, 0}), Mask{1, 1, 1, 1, 0}, -2.0);
    CHECK(s.at(0) == 1.0);
    CHECK(s.at(1) == 0.0);
    CHECK(s.at(2) == -1.0);
    CHECK(s.at(3) == 0.0);
    CHECK(s.at(4) == -2.0);
  }

  TEST_CASE("gather rows and threshold gate") {
    Graph g(false);
    const Tensor x = constant({3, 2}, {1, 2, 3, 4, 5, 6});
    const std::vector<long> idx{2, -1, 0};
    const Tensor y = g.gather_rows(x, idx, -7.0);
    CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{5, 6, -7, -7, 1, 2});
    const std::vector<long> bad{3};
    CHECK_THROWS_AS(g.gather_rows(x, bad, 0.0), IndexError);
    const Tensor gate = g.threshold_gate(constant({3}, {0.5, 0.15, 0.25}), 0.2);
    CHECK(std::vector<double>(gate.data().begin(), gate.data().end()) == std::vector<double>{0.5, 0.0, 0.25});
  }

  TEST_CASE("embedding lookup and range check") {
    Graph g(false);
    const Tensor table = constant({3, 2}, {1, 2, 3, 4, 5, 6});
    const std::vector<std::int32_t> ids{2, 0};
    const Tensor e = g.embedding(table, ids);
    CHECK(std::vector<double>(e.data().begin(), e.data().end()) == std::vector<double>{5, 6, 1, 2});
    const std::vector<std::int32_t> bad{3};
    CHECK_THROWS_AS(g.embedding(table, bad), IndexError);
  }

  TEST_CASE("dropout is identity at rate zero and rescales kept entries") {
    std::mt19937_64 rng(11);
    Graph g(false);
    const Tensor x = Tensor::full({1000}, 1.0);
    CHECK(g.dropout(x, 0.0, rng).same_storage(x));
    const Tensor y = g.dropout(x, 0.2, rng);
    std::size_t kept = 0;
    for (double v : y.data()) {
      CHECK((v == 0.0 || v == doctest::Approx(1.25).epsilon(1e-15)));
      kept += v != 0.0;
    }
    CHECK(kept > 740);
    CHECK(kept < 860);
    CHECK_THROWS_AS(g.dropout(x, 1.0, rng), ConfigError);
  }

  TEST_CASE("non-finite values are rejected") {
    Graph g(false);
    const Tensor x = constant({2}, {1e308, 1e308});
    CHECK_THROWS_AS(g.add(x, x), NumericError);
  }
}

TEST_SUITE("graph ops: gradients") {
  TEST_CASE("sum and dot") {
    std::mt19937_64 rng(2);
    Tensor x = random_tensor({2, 3}, rng);
    Graph g;
    g.backward(g.sum(x));
    for (double v : x.grad()) CHECK(v == 1.0);
    Tensor a = random_tensor({4}, rng), b = random_tensor({4}, rng);
    Graph h;
    h.backward(h.dot(a, b));
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(a.grad()[i] == b.at(i));
      CHECK(b.grad()[i] == a.at(i));
    }
  }

  TEST_CASE("matmul gradient equals ones times b transposed") {
    std::mt19937_64 rng(4);
    Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
    Graph g;
    g.backward(g.sum(g.matmul(a, b)));
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t k = 0; k < 5; ++k) {
        const double expect = b.at(k * 3) + b.at(k * 3 + 1) + b.at(k * 3 + 2);
        CHECK(a.grad()[i * 5 + k] == doctest::Approx(expect).epsilon(1e-14));
      }
    }
    const auto rep = check_gradients({{"a", a}, {"b", b}}, [&](Graph& gr) { return probe(gr, gr.matmul(a, b)); });
    CHECK(rep.max_error < kGradTol);
  }

  TEST_CASE("elementwise and shape ops") {
    std::mt19937_64 rng(6);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), bias = random_tensor({4}, rng);
    Tensor w = random_tensor({3}, rng);
    const auto rep = check_gradients({{"a", a}, {"b", b}, {"bias", bias}, {"w", w}}, [&](Graph& g) {
      Tensor y = g.add(g.mul(a, b), g.add_bias(a, bias));
      y = g.scale_rows(y, w);
      y = g.transpose(y);
      y = g.reshape(y, {2, 6});
      const std::vector<Tensor> parts{g.select(y, 1), g.select(y, 0)};
      const Tensor st = g.stack(parts);
      const std::vector<Tensor> flat{st, w};
      return probe(g, g.concat(flat));
    });
    CHECK(rep.max_error < kGradTol);
  }

  TEST_CASE("softmax with and without mask") {
    std::mt19937_64 rng(8);
    Tensor x = random_tensor({3, 5}, rng, -2, 2);
    const auto rep = check_gradients({{"x", x}}, [&](Graph& g) {
      return g.add(probe(g, g.softmax(x)), probe(g, g.softmax(x, Mask{1, 0, 1, 1, 0}), 9));
    });
    CHECK(rep.max_error < kGradTol);
  }

  TEST_CASE("embedding and dropout") {
    std::mt19937_64 rng(10);
    Tensor table = random_tensor({6, 3}, rng);
    const std::vector<std::int32_t> ids{1, 4, 1, 0};
    const auto rep = check_gradients({{"table", table}}, [&](Graph& g) {
      std::mt19937_64 local(5);
      return probe(g, g.dropout(g.embedding(table, ids), 0.3, local));
    });
    CHECK(rep.max_error < kGradTol);
  }

  TEST_CASE("conv1d away from kinks") {
    std::mt19937_64 rng(12);
    int checked = 0;
    for (int trial = 0; trial < 50 && checked < 6; ++trial) {
      Tensor seq = random_tensor({6, 3}, rng), kernel = random_tensor({3, 3, 4}, rng), bias = random_tensor({4}, rng);
      const std::size_t dilation = 1 + static_cast<std::size_t>(trial % 3);
      const auto fn = [&](Graph& g) { return probe(g, g.conv1d_dilated(seq, kernel, bias, dilation)); };
      Graph probe_graph(false);
      fn(probe_graph);
      if (probe_graph.min_margin() < 1e-3) continue;
      const auto rep = check_gradients({{"seq", seq}, {"kernel", kernel}, {"bias", bias}}, fn);
      CHECK_MESSAGE(rep.max_error < kGradTol, rep.worst);
      ++checked;
    }
    CHECK(checked == 6);
  }

  TEST_CASE("conv3d and maxpool3d away from kinks and ties") {
    std::mt19937_64 rng(14);
    int checked = 0;
    for (int trial = 0; trial < 50 && checked < 3; ++trial) {
      Tensor x = random_tensor({2, 4, 4, 5}, rng), k = random_tensor({3, 2, 3, 3, 3}, rng), b = random_tensor({3}, rng);
      const auto fn = [&](Graph& g) { return probe(g, g.maxpool3d(g.conv3d(x, k, b), {3, 3, 3}, {3, 3, 3})); };
      Graph probe_graph(false);
      fn(probe_graph);
      if (probe_graph.min_margin() < 1e-3) continue;
      const auto rep = check_gradients({{"x", x}, {"k", k}, {"b", b}}, fn);
      CHECK_MESSAGE(rep.max_error < kGradTol, rep.worst);
      ++checked;
    }
    CHECK(checked == 3);
  }

  TEST_CASE("cosine, gather, gate, similarity cube and loss") {
    std::mt19937_64 rng(16);
    Tensor rows = random_tensor({5, 4}, rng), query = random_tensor({4}, rng);
    Tensor fine = random_tensor({5, 2, 3, 4}, rng), cand = random_tensor({2, 3, 4}, rng);
    const std::vector<long> idx{0, 3, -1};
    const auto rep = check_gradients({{"rows", rows}, {"query", query}, {"fine", fine}, {"cand", cand}}, [&](Graph& g) {
      const Tensor s = g.cosine_rows(rows, query, Mask{1, 1, 0, 1, 1}, -2.0);
      const Tensor picked = g.gather_rows(s, idx, -2.0);
      const Tensor gated = g.threshold_gate(picked, -0.95);
      const Tensor sel = g.scale_rows(g.gather_rows(fine, idx, 0.0), gated);
      const Tensor cube = g.similarity_cube(sel, cand);
      const std::vector<Tensor> parts{g.reshape(probe(g, cube), {1}), g.select(s, 1), g.select(s, 4)};
      return g.sampled_softmax_nll(g.concat(parts));
    });
    CHECK(rep.max_error < kGradTol);
  }

  TEST_CASE("leaf gradients accumulate across graphs") {
    Tensor x = constant({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    for (int i = 0; i < 3; ++i) {
      Graph g;
      g.backward(g.sum(x));
    }
    CHECK(x.grad()[0] == 3.0);
    x.zero_grad();
    CHECK(x.grad()[1] == 0.0);
  }

  TEST_CASE("backward misuse") {
    Tensor x = constant({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    Graph g;
    const Tensor y = g.sum(x);
    CHECK_THROWS_AS(g.backward(g.mul(x, x)), DimensionError);
    g.backward(y);
    CHECK_THROWS_AS(g.backward(y), GraphError);
    Graph other;
    CHECK_THROWS_AS(other.backward(y), GraphError);
    Graph off(false);
    const Tensor z = off.sum(x);
    CHECK_THROWS_AS(off.backward(z), GraphError);
    CHECK(off.num_ops() == 0);
  }
}

TEST_SUITE("flop counter") {
  TEST_CASE("interactor tally covers similarity, conv3d and pooling only") {
    Graph g(false);
    g.similarity_cube(Tensor({2, 1, 3, 4}), Tensor({1, 3, 4}));
    const auto sim = g.flops().of(OpKind::kSimilarity);
    CHECK(sim == 2ull * 1 * 2 * 3 * 3 * 4);
    g.matmul(Tensor({2, 2}), Tensor({2, 2}));
    CHECK(g.flops().interactor() == sim);
    g.conv3d(Tensor({1, 2, 3, 3}), Tensor({1, 1, 3, 3, 3}), Tensor({1}));
    g.maxpool3d(Tensor({1, 2, 3, 3}), {3, 3, 3}, {3, 3, 3});
    CHECK(g.flops().interactor() == sim + g.flops().of(OpKind::kConv3d) + g.flops().of(OpKind::kMaxPool3d));
    CHECK(g.flops().total() > g.flops().interactor());
  }
}
