#include <doctest.h>

#include "bnn/btf.hpp"
#include "bnn/kernels.hpp"
#include "bnn/rng.hpp"
#include "naive.hpp"

using namespace bnn;

namespace {

std::vector<float> random_signs(SplitMix64& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = rng.below(2) ? 1.0f : -1.0f;
  return v;
}

std::vector<float> random_reals(SplitMix64& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-2.0, 2.0));
  return v;
}

}  // namespace

TEST_CASE("tensor shape checks") {
  CHECK(element_count({2, 3, 4}) == 24);
  CHECK(shape_string({2, 3}) == "[2,3]");
  CHECK_THROWS_AS(FloatTensor({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(FloatTensor({1}, {std::numeric_limits<float>::quiet_NaN()}), NonFiniteError);
  const auto t = FloatTensor({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
}

TEST_CASE("pack_signs follows sign with sign(0) = +1") {
  const auto b = pack_signs(FloatTensor({3}, {0.5f, -0.3f, 0.0f}));
  CHECK(b.get(0));
  CHECK_FALSE(b.get(1));
  CHECK(b.get(2));
  CHECK(unpack(b) == FloatTensor({3}, {1, -1, 1}));

  const auto neg = pack_signs(FloatTensor::filled({130}, -1.5f));
  for (auto w : neg.words()) CHECK(w == 0);

  CHECK(unpack(pack_signs(FloatTensor({0}, {}))).empty());
}

TEST_CASE("unpack of a random tensor equals elementwise sign") {
  SplitMix64 rng(11);
  const auto x = random_reals(rng, 1000);
  const auto u = unpack(pack_signs(x, {1000}));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(u[i] == naive::sign(x[i]));
}

TEST_CASE("pack/unpack roundtrip and canonical pad bits") {
  SplitMix64 rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(200);
    const auto v = random_signs(rng, n);
    const auto b = pack_signs(v, {n});
    REQUIRE(unpack(b).data().size() == n);
    CHECK(std::equal(v.begin(), v.end(), unpack(b).data().begin()));
    if (n % 64) CHECK((b.words().back() >> (n % 64)) == 0);
    CHECK(pack_signs(unpack(b)) == b);
  }
  CHECK_THROWS_AS(BitPlane({3}, {0xFFu}), std::invalid_argument);
}

TEST_CASE("xnor_popcount_dot") {
  const auto a = pack_signs(FloatTensor({3}, {1, -1, 1}));
  const auto b = pack_signs(FloatTensor({3}, {1, 1, -1}));
  CHECK(xnor_popcount_dot(a, b) == -1);

  SplitMix64 rng(3);
  const auto v = random_signs(rng, 64);
  std::vector<float> neg(v);
  for (auto& x : neg) x = -x;
  CHECK(xnor_popcount_dot(pack_signs(v, {64}), pack_signs(v, {64})) == 64);
  CHECK(xnor_popcount_dot(pack_signs(v, {64}), pack_signs(neg, {64})) == -64);
  CHECK_THROWS_AS(xnor_popcount_dot(a, pack_signs(v, {64})), ShapeError);

  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    const auto x = random_signs(rng, n), y = random_signs(rng, n);
    std::int64_t ref = 0;
    for (std::size_t i = 0; i < n; ++i) ref += static_cast<std::int64_t>(x[i] * y[i]);
    CHECK(xnor_popcount_dot(pack_signs(x, {n}), pack_signs(y, {n})) == ref);
  }
}

TEST_CASE("binary_conv2d hand cases") {
  const auto ones = pack_signs(FloatTensor::filled({1, 3, 3}, 1.0f));
  const auto k1 = pack_signs(FloatTensor::filled({1, 1, 1, 1}, 1.0f));
  CHECK(binary_conv2d(ones, k1, {}) == IntTensor::filled({1, 3, 3}, 1));

  const auto k3 = pack_signs(FloatTensor::filled({1, 1, 3, 3}, 1.0f));
  const auto out = binary_conv2d(ones, k3, {1, 1, PadBit::Negative});
  CHECK(out[0] == -1);  // 4 inside, 5 padding
  CHECK(out[4] == 9);
  const auto pos = binary_conv2d(ones, k3, {1, 1, PadBit::Positive});
  CHECK(pos[0] == 9);

  CHECK_THROWS_AS(binary_conv2d(ones, pack_signs(FloatTensor::filled({1, 2, 1, 1}, 1.0f)), {}), ShapeError);
  CHECK_THROWS_AS(binary_conv2d(ones, pack_signs(FloatTensor::filled({1, 1, 5, 5}, 1.0f)), {}), ShapeError);
}

TEST_CASE("binary_conv2d equals the float ±1 convolution and stays in [-M, M]") {
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t C = 1 + rng.below(8), O = 1 + rng.below(4);
    const std::size_t H = 4 + rng.below(13), W = 4 + rng.below(13);
    const std::size_t KH = 1 + rng.below(std::min<std::size_t>(5, H)), KW = 1 + rng.below(std::min<std::size_t>(5, W));
    const std::size_t stride = 1 + rng.below(2), pad = rng.below(3);
    const PadBit pb = rng.below(2) ? PadBit::Positive : PadBit::Negative;
    const auto x = random_signs(rng, C * H * W), w = random_signs(rng, O * C * KH * KW);
    std::size_t OH = 0, OW = 0;
    const auto ref = naive::conv(x, C, H, W, w, O, KH, KW, stride, pad, pb == PadBit::Positive ? 1.0f : -1.0f, OH, OW);
    const auto got = binary_conv2d(pack_signs(x, {C, H, W}), pack_signs(w, {O, C, KH, KW}), {stride, pad, pb});
    REQUIRE(got.dims() == Shape{O, OH, OW});
    const auto M = static_cast<std::int32_t>(C * KH * KW);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(static_cast<float>(got[i]) == ref[i]);
      CHECK(got[i] >= -M);
      CHECK(got[i] <= M);
    }
  }
}

TEST_CASE("nn_upsample") {
  const auto t = nn_upsample(FloatTensor({1, 2}, {1, -1}), 2);
  CHECK(t == FloatTensor({2, 4}, {1, 1, -1, -1, 1, 1, -1, -1}));
  const auto i = IntTensor({2, 2}, {1, 2, 3, 4});
  CHECK(nn_upsample(i, 1) == i);
  CHECK_THROWS_AS(nn_upsample(i, 0), std::invalid_argument);

  SplitMix64 rng(5);
  const auto v = random_signs(rng, 2 * 5 * 7);
  const auto plane = pack_signs(v, {2, 5, 7});
  const auto up = nn_upsample(plane, 3);
  REQUIRE(up.dims() == Shape{2, 15, 21});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 7; ++x) CHECK(up.get((c * 15 + 3 * y) * 21 + 3 * x) == plane.get((c * 5 + y) * 7 + x));
}

TEST_CASE("hadamard_scale") {
  const auto t = IntTensor({2, 1, 2}, {1, -2, 3, 4});
  CHECK(hadamard_scale(t, std::vector<float>{1, 1}) == FloatTensor({2, 1, 2}, {1, -2, 3, 4}));
  CHECK(hadamard_scale(t, std::vector<float>{0, 0}) == FloatTensor::zeros({2, 1, 2}));
  CHECK(hadamard_scale(t, std::vector<float>{0.5f, -2}) == FloatTensor({2, 1, 2}, {0.5f, -1, -6, -8}));
  CHECK_THROWS_AS(hadamard_scale(t, std::vector<float>{1}), ShapeError);
}

TEST_CASE("BTF1 encoding") {
  const auto f = FloatTensor({2, 2}, {1.5f, -2, 0, 3});
  const auto bytes = encode_btf(f);
  REQUIRE(bytes.size() == 4 + 1 + 1 + 8 + 16);
  CHECK(bytes[0] == 0x42);
  CHECK(bytes[3] == 0x31);
  CHECK(bytes[4] == 0);
  CHECK(bytes[5] == 2);
  CHECK(bytes[6] == 2);
  CHECK(decode_btf_float(bytes) == f);

  const auto i = IntTensor({3}, {-1, 0, 7});
  CHECK(decode_btf_int(encode_btf(i)) == i);
  const auto b = pack_signs(FloatTensor({70}, std::vector<float>(70, 1.0f)));
  const auto bb = encode_btf(b);
  CHECK(bb.size() == 4 + 1 + 1 + 4 + 16);
  CHECK(decode_btf_bits(bb) == b);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_btf(bad), FormatError);
  CHECK_THROWS_AS(decode_btf(std::span(bytes).first(10)), FormatError);
  CHECK_THROWS_AS(decode_btf_int(bytes), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_btf(trailing), FormatError);
}
