#include <doctest.h>

#include <cmath>
#include <cstring>

#include "bnn/quantize.hpp"
#include "bnn/rng.hpp"

using namespace bnn;

namespace {

// Surrogate slope written out directly, independent of sign_surrogate_slope.
float poly_slope(float x) {
  if (x < -1.0f || x >= 1.0f) return 0.0f;
  return x < 0.0f ? 2.0f + 2.0f * x : 2.0f - 2.0f * x;
}

}  // namespace

TEST_CASE("binarize_weights: bits and per-filter mean magnitude") {
  const auto q = binarize_weights(FloatTensor({1, 4, 1, 1}, {0.5f, -0.3f, 0.2f, -0.4f}));
  CHECK(unpack(q.bits) == FloatTensor({1, 4, 1, 1}, {1, -1, 1, -1}));
  REQUIRE(q.filters() == 1);
  CHECK(q.filter_scale[0] == doctest::Approx(0.35).epsilon(1e-7));

  const auto z = binarize_weights(FloatTensor::zeros({2, 1, 2, 2}));
  CHECK(unpack(z.bits) == FloatTensor::filled({2, 1, 2, 2}, 1.0f));
  CHECK(z.filter_scale == std::vector<float>{0.0f, 0.0f});

  CHECK_THROWS_AS(binarize_weights(FloatTensor::zeros({2, 2})), ShapeError);
}

TEST_CASE("binarize_weights is scale covariant") {
  SplitMix64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> w(3 * 2 * 3 * 3);
    for (auto& v : w) v = static_cast<float>(rng.uniform(-1, 1));
    const float c = trial % 2 ? 2.0f : static_cast<float>(rng.uniform(0.1, 10));
    std::vector<float> cw(w);
    for (auto& v : cw) v *= c;
    const auto a = binarize_weights(FloatTensor({3, 2, 3, 3}, w));
    const auto b = binarize_weights(FloatTensor({3, 2, 3, 3}, cw));
    CHECK(a.bits == b.bits);
    for (std::size_t f = 0; f < 3; ++f) CHECK(b.filter_scale[f] == doctest::Approx(c * a.filter_scale[f]).epsilon(1e-5));
    if (c == 2.0f) {
      for (std::size_t f = 0; f < 3; ++f) CHECK(b.filter_scale[f] == 2.0f * a.filter_scale[f]);
    }
  }
}

TEST_CASE("weight_grad_ste passes gradients straight through") {
  SplitMix64 rng(4);
  std::vector<float> g(50), w(50);
  for (auto& v : g) v = static_cast<float>(rng.uniform(-3, 3));
  for (auto& v : w) v = static_cast<float>(rng.uniform(-2, 2));
  const FloatTensor gt({50}, g), wt({50}, w);
  const auto out = weight_grad_ste(gt, wt);
  CHECK(std::memcmp(out.raw(), gt.raw(), 50 * sizeof(float)) == 0);
  CHECK(weight_grad_ste(FloatTensor::zeros({50}), wt) == FloatTensor::zeros({50}));

  const auto clipped = weight_grad_ste(gt, wt, true);
  for (std::size_t i = 0; i < 50; ++i) CHECK(clipped[i] == (std::fabs(w[i]) > 1.0f ? 0.0f : g[i]));
  CHECK_THROWS_AS(weight_grad_ste(gt, FloatTensor::zeros({49})), ShapeError);
}

TEST_CASE("activation_grad_poly hand values") {
  CHECK(activation_grad_poly(FloatTensor({1}, {-0.5f}), FloatTensor({1}, {1}))[0] == 1.0f);
  CHECK(activation_grad_poly(FloatTensor({1}, {0.25f}), FloatTensor({1}, {2}))[0] == 3.0f);
  CHECK(activation_grad_poly(FloatTensor({1}, {2.0f}), FloatTensor({1}, {7}))[0] == 0.0f);
  CHECK(sign_surrogate_slope(0.0f) == 2.0f);
  CHECK(sign_surrogate_slope(-1.0f) == 0.0f);
  CHECK(sign_surrogate_slope(1.0f) == 0.0f);
  CHECK_THROWS_AS(activation_grad_poly(FloatTensor::zeros({2}), FloatTensor::zeros({3})), ShapeError);
}

TEST_CASE("surrogate slope is continuous and integrates to 2") {
  const int n = 200000;
  double integral = 0.0, worst_jump = 0.0;
  double prev = sign_surrogate_slope(-1.5);
  for (int i = 1; i <= n; ++i) {
    const double x = -1.5 + 3.0 * i / n;
    const double d = sign_surrogate_slope(x);
    worst_jump = std::max(worst_jump, std::fabs(d - prev));
    prev = d;
  }
  CHECK(worst_jump < 1e-3);
  // Simpson on [-1, 0] and [0, 1], where the slope is a polynomial.
  for (double lo : {-1.0, 0.0}) {
    const double hi = lo + 1.0;
    const double hi_val = sign_surrogate_slope(hi == 1.0 ? std::nextafter(hi, lo) : hi);
    integral += (hi - lo) / 6.0 * (sign_surrogate_slope(lo) + 4.0 * sign_surrogate_slope((lo + hi) / 2) + hi_val);
  }
  CHECK(std::fabs(integral - 2.0) < 1e-6);
}

TEST_CASE("activation_grad_poly matches the piecewise oracle on random points") {
  SplitMix64 rng(77);
  std::vector<float> x(100000), g(100000);
  for (auto& v : x) v = static_cast<float>(rng.uniform(-1.5, 1.5));
  for (auto& v : g) v = static_cast<float>(rng.uniform(-2, 2));
  const auto out = activation_grad_poly(FloatTensor({x.size()}, x), FloatTensor({g.size()}, g));
  std::size_t bad = 0;
  for (std::size_t i = 0; i < x.size(); ++i) bad += out[i] != g[i] * poly_slope(x[i]);
  CHECK(bad == 0);
}

TEST_CASE("binarize_activations delegates to pack_signs") {
  const FloatTensor x({3}, {0.5f, -0.3f, 0.0f});
  CHECK(binarize_activations(x) == pack_signs(x));
}
