#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bnn/blocks.hpp"
#include "bnn/rng.hpp"
#include "naive.hpp"

using namespace bnn;

namespace {

FloatTensor random(SplitMix64& rng, Shape dims, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(element_count(dims));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return FloatTensor(std::move(dims), std::move(v));
}

BranchConv random_conv(SplitMix64& rng, std::size_t cin, std::size_t cout) {
  BranchConv c;
  c.weights = binarize_weights(random(rng, {cout, cin, 3, 3}));
  c.bn_scale.resize(cout);
  c.bn_shift.resize(cout);
  for (auto& v : c.bn_scale) v = static_cast<float>(rng.uniform(0.5, 1.5));
  for (auto& v : c.bn_shift) v = static_cast<float>(rng.uniform(-0.2, 0.2));
  return c;
}

BranchParams random_params(SplitMix64& rng, std::size_t k, std::size_t c, std::size_t cout) {
  BranchParams p;
  for (std::size_t i = 0; i < k; ++i) {
    p.first.push_back(random_conv(rng, c, c));
    p.second.push_back(random_conv(rng, c, cout));
    p.gate_logits.push_back(static_cast<float>(rng.uniform(-2, 2)));
    p.merge_logits.push_back(static_cast<float>(rng.uniform(-2, 2)));
  }
  return p;
}

// conv(sign(x), alpha * sign(w)) followed by the folded norm, written as plain loops.
std::vector<float> ref_conv(const std::vector<float>& x, std::size_t C, std::size_t H, std::size_t W, const BranchConv& bc) {
  const auto& q = bc.weights;
  const std::size_t O = q.shadow.dim(0);
  std::vector<float> sx(x.size()), sw(q.shadow.size());
  for (std::size_t i = 0; i < x.size(); ++i) sx[i] = naive::sign(x[i]);
  for (std::size_t i = 0; i < sw.size(); ++i) sw[i] = naive::sign(q.shadow[i]);
  std::size_t OH = 0, OW = 0;
  auto acc = naive::conv(sx, C, H, W, sw, O, 3, 3, 1, 1, -1.0f, OH, OW);
  const std::size_t per = OH * OW;
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < per; ++i) {
      const float scaled = acc[o * per + i] * q.filter_scale[o];
      acc[o * per + i] = scaled * bc.bn_scale[o] + bc.bn_shift[o];
    }
  return acc;
}

std::vector<float> ref_upsample(const std::vector<float>& x, std::size_t C, std::size_t H, std::size_t W, std::size_t f) {
  std::vector<float> out(C * H * f * W * f);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H * f; ++y)
      for (std::size_t xx = 0; xx < W * f; ++xx) out[(c * H * f + y) * W * f + xx] = x[(c * H + y / f) * W + xx / f];
  return out;
}

// The whole block, one straight line at a time.
std::vector<float> ref_block(const FloatTensor& x, const BranchParams& p, std::size_t cout) {
  const std::size_t K = p.branches(), C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::vector<float> xv(x.data().begin(), x.data().end());
  std::vector<float> alpha(K), lambda(K);
  for (std::size_t i = 0; i < K; ++i) {
    alpha[i] = 1.0f / (1.0f + std::exp(-p.gate_logits[i]));
    lambda[i] = 1.0f / (1.0f + std::exp(-p.merge_logits[i]));
  }
  std::vector<std::vector<float>> ys;
  for (std::size_t i = 0; i < K; ++i) ys.push_back(ref_conv(xv, C, H, W, p.first[i]));
  std::vector<float> merged(cout * 4 * H * W, 0.0f);
  for (std::size_t i = 0; i < K; ++i) {
    std::vector<float> mixed(ys[i].size());
    for (std::size_t e = 0; e < mixed.size(); ++e) {
      float total = 0.0f;
      for (std::size_t j = 0; j < K; ++j) total += ys[j][e];
      mixed[e] = K == 1 ? ys[i][e] : alpha[i] * ys[i][e] + (1.0f - alpha[i]) * total;
    }
    const auto z = ref_conv(ref_upsample(mixed, C, H, W, 2), C, 2 * H, 2 * W, p.second[i]);
    for (std::size_t e = 0; e < z.size(); ++e) merged[e] += lambda[i] * z[e];
  }
  return merged;
}

AttentionMaps random_maps(SplitMix64& rng, std::size_t c, std::size_t m, float beta) {
  AttentionMaps maps;
  maps.channels = c;
  maps.positions = m;
  maps.spatial.resize(m * m);
  maps.channel.resize(c * c);
  for (auto& v : maps.spatial) v = static_cast<std::uint8_t>(rng.below(3) == 0);
  for (auto& v : maps.channel) v = static_cast<std::uint8_t>(rng.below(2));
  maps.beta = beta;
  return maps;
}

}  // namespace

TEST_CASE("soft gates") {
  const auto g = soft_gate(std::vector<float>{0.0f, 1.0f, -1.0f, 20.0f, -20.0f});
  CHECK(g[0] == 0.5f);
  CHECK(g[1] == doctest::Approx(0.7310586).epsilon(1e-6));
  CHECK(g[2] == doctest::Approx(0.2689414).epsilon(1e-6));
  for (float v : g) {
    CHECK(v > 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(std::fabs(g[3] - 1.0f) < 1e-7f);
  CHECK_THROWS_AS(soft_gate(std::vector<float>{std::numeric_limits<float>::infinity()}), std::invalid_argument);
}

TEST_CASE("branch_mix") {
  const std::vector<FloatTensor> ys{FloatTensor({2}, {1, 2}), FloatTensor({2}, {10, 20})};
  CHECK(branch_mix(0, ys, std::vector<float>{0.5f, 0.5f}) == FloatTensor({2}, {6, 12}));
  CHECK(branch_mix(1, ys, std::vector<float>{0.3f, 1.0f}) == ys[1]);
  CHECK(branch_mix(0, ys, std::vector<float>{0.0f, 0.3f}) == FloatTensor({2}, {11, 22}));
  CHECK(branch_mix(0, ys, std::vector<float>{0.0f, 0.3f}, true) == ys[1]);
  const std::vector<FloatTensor> one{FloatTensor({2}, {3, -4})};
  CHECK(branch_mix(0, one, std::vector<float>{0.37f}) == one[0]);
  CHECK_THROWS_AS(branch_mix(0, ys, std::vector<float>{0.5f}), ShapeError);
}

TEST_CASE("binary_branch_conv") {
  QuantizedWeights id = binarize_weights(FloatTensor({1, 1, 1, 1}, {1.0f}));
  CHECK(binary_branch_conv(FloatTensor::filled({1, 3, 3}, 0.7f), id) == FloatTensor::filled({1, 3, 3}, 1.0f));

  SplitMix64 rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t C = 1 + rng.below(4), O = 1 + rng.below(4), H = 3 + rng.below(6), W = 3 + rng.below(6);
    const auto x = random(rng, {C, H, W});
    const auto q = binarize_weights(random(rng, {O, C, 3, 3}));
    const ConvGeometry geom{1, 1, PadBit::Negative};
    const auto got = binary_branch_conv(x, q, geom);
    std::vector<float> sx(x.size()), sw(q.shadow.size());
    for (std::size_t i = 0; i < sx.size(); ++i) sx[i] = naive::sign(x[i]);
    for (std::size_t i = 0; i < sw.size(); ++i) sw[i] = naive::sign(q.shadow[i]);
    std::size_t OH = 0, OW = 0;
    const auto acc = naive::conv(sx, C, H, W, sw, O, 3, 3, 1, 1, -1.0f, OH, OW);
    bool same = true;
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < OH * OW; ++i) same = same && got[o * OH * OW + i] == acc[o * OH * OW + i] * q.filter_scale[o];
    CHECK(same);

    QuantizedWeights doubled = q;
    for (auto& s : doubled.filter_scale) s *= 2.0f;
    const auto twice = binary_branch_conv(x, doubled, geom);
    for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(twice[i] == 2.0f * got[i]);
  }
}

TEST_CASE("merge_branches") {
  SplitMix64 rng(22);
  const std::vector<FloatTensor> xs{random(rng, {2, 3}), random(rng, {2, 3}), random(rng, {2, 3})};
  CHECK(merge_branches(xs, std::vector<float>{1, 0, 0}) == xs[0]);
  const std::vector<FloatTensor> same(4, xs[1]);
  CHECK(merge_branches(same, std::vector<float>(4, 0.25f)) == xs[1]);
  const std::vector<float> lambda{0.2f, 0.7f, 0.4f};
  const auto m = merge_branches(xs, lambda);
  for (std::size_t e = 0; e < m.size(); ++e) {
    float acc = 0.0f;
    for (std::size_t j = 0; j < 3; ++j) acc += lambda[j] * xs[j][e];
    CHECK(m[e] == acc);
  }
  CHECK_THROWS_AS(merge_branches(xs, std::vector<float>{1, 0}), ShapeError);
}

TEST_CASE("multi-branch upsampling matches a straight-line reference") {
  SplitMix64 rng(23);
  for (std::size_t k : {1u, 2u, 4u}) {
    const auto p = random_params(rng, k, 3, 2);
    const auto x = random(rng, {3, 8, 8});
    const auto out = multibranch_upsample_forward(x, p, 2);
    REQUIRE(out.dims() == Shape{2, 16, 16});
    const auto ref = ref_block(x, p, 2);
    CHECK(std::equal(ref.begin(), ref.end(), out.data().begin()));
  }
}

TEST_CASE("single branch ignores its gate") {
  SplitMix64 rng(24);
  auto p = random_params(rng, 1, 2, 2);
  const auto x = random(rng, {2, 4, 4});
  const auto a = multibranch_upsample_forward(x, p, 2);
  p.gate_logits[0] = 3.5f;
  CHECK(multibranch_upsample_forward(x, p, 2) == a);
  const float lambda = soft_gate(p.merge_logits)[0];
  auto plain = p.second[0](nn_upsample(p.first[0](x), 2));
  for (auto& v : plain.data()) v = 0.0f + lambda * v;
  CHECK(a == plain);
}

TEST_CASE("branch permutation leaves the output unchanged up to summation order") {
  SplitMix64 rng(25);
  const auto p = random_params(rng, 3, 2, 2);
  const auto x = random(rng, {2, 4, 4});
  BranchParams q = p;
  const std::size_t perm[3] = {2, 0, 1};
  for (std::size_t i = 0; i < 3; ++i) {
    q.first[i] = p.first[perm[i]];
    q.second[i] = p.second[perm[i]];
    q.gate_logits[i] = p.gate_logits[perm[i]];
    q.merge_logits[i] = p.merge_logits[perm[i]];
  }
  const auto a = multibranch_upsample_forward(x, p, 2), b = multibranch_upsample_forward(x, q, 2);
  for (std::size_t e = 0; e < a.size(); ++e) CHECK(b[e] == doctest::Approx(a[e]).epsilon(1e-5));
}

TEST_CASE("attention maps") {
  // Identical rows: every position agrees with every other.
  const auto flat = FloatTensor::filled({3, 2, 2}, 0.4f);
  const auto same = attention_maps_from_projection(flat, 0.0);
  for (auto v : same.spatial) CHECK(v == 1);
  for (auto v : same.channel) CHECK(v == 1);

  SplitMix64 rng(26);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t C = 1 + rng.below(6), H = 1 + rng.below(4), W = 1 + rng.below(4), M = H * W;
    const auto x = random(rng, {C, H, W});
    const double tau = trial % 2 ? 0.0 : static_cast<double>(rng.below(3));
    const auto maps = attention_maps_from_projection(x, tau);
    for (std::size_t a = 0; a < M; ++a) {
      CHECK(maps.spatial[a * M + a] == 1);
      for (std::size_t b = 0; b < M; ++b) {
        int dot = 0;
        for (std::size_t c = 0; c < C; ++c) dot += int(naive::sign(x[c * M + a]) * naive::sign(x[c * M + b]));
        CHECK(maps.spatial[a * M + b] == (dot >= tau ? 1 : 0));
      }
    }
    for (std::size_t a = 0; a < C; ++a)
      for (std::size_t b = 0; b < C; ++b) {
        int dot = 0;
        for (std::size_t m = 0; m < M; ++m) dot += int(naive::sign(x[a * M + m]) * naive::sign(x[b * M + m]));
        CHECK(maps.channel[a * C + b] == (dot >= tau ? 1 : 0));
      }
    for (auto v : maps.spatial) CHECK(v <= 1);
  }

  const auto proj = binarize_weights(random(rng, {2, 3, 1, 1}));
  const auto a = random(rng, {3, 4, 4});
  CHECK(attention_maps(a, proj).spatial == attention_maps_from_projection(binary_branch_conv(a, proj), 0.0).spatial);
}

TEST_CASE("attention apply") {
  SplitMix64 rng(27);
  const auto x = random(rng, {3, 2, 3});
  auto maps = random_maps(rng, 3, 6, 0.0f);
  CHECK(attention_apply(maps, x) == x);

  AttentionMaps eye;
  eye.channels = 3;
  eye.positions = 6;
  eye.spatial.assign(36, 0);
  for (std::size_t i = 0; i < 6; ++i) eye.spatial[i * 6 + i] = 1;
  eye.channel.assign(9, 0);
  eye.beta = 1.0f;
  const auto doubled = attention_apply(eye, x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(doubled[i] == 2.0f * x[i]);

  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t C = 1 + rng.below(5), H = 1 + rng.below(4), W = 1 + rng.below(4), M = H * W;
    const auto v = random(rng, {C, H, W});
    const auto m = random_maps(rng, C, M, static_cast<float>(rng.uniform(-1, 1)));
    const auto out = attention_apply(m, v);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < M; ++p) {
        double sp = 0, np = 0, sc = 0, nc = 0;
        for (std::size_t b = 0; b < M; ++b) {
          sp += m.spatial[p * M + b] * double(v[c * M + b]);
          np += m.spatial[p * M + b];
        }
        for (std::size_t d = 0; d < C; ++d) {
          sc += m.channel[c * C + d] * double(v[d * M + p]);
          nc += m.channel[c * C + d];
        }
        const double ctx = (np > 0 ? sp / np : sp) + (nc > 0 ? sc / nc : sc);
        const double expect = double(v[c * M + p]) + double(m.beta) * ctx;
        CHECK(out[c * M + p] == doctest::Approx(expect).epsilon(1e-6));
      }
  }
  CHECK_THROWS_AS(attention_apply(maps, random(rng, {2, 2, 3})), ShapeError);
}

TEST_CASE("attention computed once and shared equals per-branch computation") {
  SplitMix64 rng(28);
  const auto a = random(rng, {4, 4, 4});
  const auto proj = binarize_weights(random(rng, {4, 4, 1, 1}));
  auto shared = attention_maps(a, proj);
  shared.beta = 0.75f;
  const auto p = random_params(rng, 3, 4, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto y = p.first[i](a);
    auto own = attention_maps(a, proj);
    own.beta = 0.75f;
    CHECK(attention_apply(shared, y) == attention_apply(own, y));
  }
  CHECK(multibranch_upsample_forward(a, p, 2, &shared) == multibranch_upsample_forward(a, p, 2, &shared));

  auto zero = shared;
  zero.beta = 0.0f;
  CHECK(multibranch_upsample_forward(a, p, 2, &zero) == multibranch_upsample_forward(a, p, 2));
}

TEST_CASE("K-branch accumulations stay within [-K M, K M]") {
  for (std::size_t m = 1; m <= 9; ++m) {
    const std::size_t combos = std::size_t{1} << m;
    for (std::size_t k = 1; k <= 5; ++k) {
      const std::int64_t bound = static_cast<std::int64_t>(k * m);
      std::int64_t lo = 0, hi = 0;
      // Every weight pattern against the all-ones input, replicated across k branches.
      for (std::size_t pat = 0; pat < combos; ++pat) {
        BitPlane w(Shape{m}), x(Shape{m});
        for (std::size_t i = 0; i < m; ++i) {
          w.set(i, (pat >> i) & 1u);
          x.set(i, true);
        }
        std::int64_t total = 0;
        for (std::size_t b = 0; b < k; ++b) total += xnor_popcount_dot(w, x);
        lo = std::min(lo, total);
        hi = std::max(hi, total);
        CHECK(std::llabs(total) <= bound);
      }
      CHECK(lo == -bound);
      CHECK(hi == bound);
    }
  }
}
