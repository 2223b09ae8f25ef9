#include <doctest.h>

#include <cmath>

#include "bnn/complexity.hpp"
#include "bnn/rng.hpp"

using namespace bnn;

namespace {

const LayerCostSpec kRef{256, 256, 3, 3, 40, 40, 80, 80, 5, 64};

// Sum of 2^i b_i with b_i = ±1 read from plane bits, computed independently of the library.
std::int64_t decode_one(const FixedPointPlanes& p, std::size_t m) {
  std::int64_t v = 0;
  for (std::size_t i = 0; i < p.bits(); ++i) v += (p.planes[i].get(m) ? 1 : -1) * (std::int64_t{1} << i);
  return v;
}

}  // namespace

TEST_CASE("primitive costs") {
  const auto c = primitive_costs(kRef);
  CHECK(c.conv == 943718400ull);
  CHECK(c.up == 409600ull);
  CHECK(c.add == 1638400ull);

  const auto unit = primitive_costs(LayerCostSpec{});
  CHECK(unit.conv == 1);
  CHECK(unit.add == 1);
  CHECK(unit.up == 1);

  auto twice = kRef;
  twice.c_in *= 2;
  const auto d = primitive_costs(twice);
  CHECK(d.conv == 2 * c.conv);
  CHECK(d.up == 2 * c.up);
  CHECK(d.add == c.add);

  auto bad = kRef;
  bad.c_in = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = kRef;
  bad.bitwise_parallelism = 48;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("upsample speedup") {
  CHECK(upsample_speedup(kRef) == doctest::Approx(11.24390243902439).epsilon(1e-12));
  // Only convolution left: the ratio approaches the bitwise parallelism.
  LayerCostSpec big{1u << 20, 1u << 20, 3, 3, 1, 1, 1, 1, 1, 64};
  CHECK(upsample_speedup(big) == doctest::Approx(64.0).epsilon(1e-4));
  double prev = std::numeric_limits<double>::infinity();
  for (std::uint64_t k = 1; k <= 16; ++k) {
    auto s = kRef;
    s.branches = k;
    const double v = upsample_speedup(s);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("attention speedup follows the formula as written") {
  const double m = 40.0 * 40.0, c = 256.0;
  const double comp = c * m * m, allo = c * c * m, add = 256.0 * 80 * 80;
  const double oracle = (comp + allo) / ((comp + 5 * allo) / 64.0 + 5 * add);
  CHECK(attention_speedup(kRef) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(attention_speedup(kRef) == doctest::Approx(28.553846153846155).epsilon(1e-12));
  CHECK(std::fabs(attention_speedup(kRef) - kStatedAttentionSpeedup) > 100.0);

  LayerCostSpec spatial{1, 1, 1, 1, 4096, 4096, 1, 1, 1, 64};
  CHECK(attention_speedup(spatial) == doctest::Approx(64.0).epsilon(1e-3));
  double prev = std::numeric_limits<double>::infinity();
  for (std::uint64_t k = 1; k <= 16; ++k) {
    auto s = kRef;
    s.branches = k;
    CHECK(attention_speedup(s) < prev);
    prev = attention_speedup(s);
  }
}

TEST_CASE("upsample speedup is invariant to scaling all pixel counts") {
  for (std::uint64_t f : {2ull, 3ull, 5ull}) {
    auto s = kRef;
    s.w_in *= f;
    s.w_out *= f;
    CHECK(upsample_speedup(s) == doctest::Approx(upsample_speedup(kRef)).epsilon(1e-12));
  }
}

TEST_CASE("fixed-point dot") {
  const std::int64_t w3[] = {3}, xm1[] = {-1};
  const auto w = fixedpoint_encode(w3, 2), x = fixedpoint_encode(xm1, 2);
  CHECK(w.planes[0].get(0));
  CHECK(w.planes[1].get(0));
  CHECK(x.planes[0].get(0));
  CHECK_FALSE(x.planes[1].get(0));
  const auto r = fixedpoint_dot(w, x);
  CHECK(r.value == -3);
  CHECK(r.ops_count == 4);

  const std::int64_t even[] = {2};
  CHECK_THROWS_AS(fixedpoint_encode(even, 2), std::invalid_argument);
  const std::int64_t big[] = {5};
  CHECK_THROWS_AS(fixedpoint_encode(big, 2), std::invalid_argument);
  const std::int64_t two[] = {1, 1};
  CHECK_THROWS_AS(fixedpoint_dot(w, fixedpoint_encode(two, 2)), ShapeError);

  SplitMix64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(64);
    std::vector<float> a(m), b(m);
    for (auto& v : a) v = rng.below(2) ? 1.0f : -1.0f;
    for (auto& v : b) v = rng.below(2) ? 1.0f : -1.0f;
    std::vector<std::int64_t> ai(m), bi(m);
    for (std::size_t i = 0; i < m; ++i) {
      ai[i] = static_cast<std::int64_t>(a[i]);
      bi[i] = static_cast<std::int64_t>(b[i]);
    }
    CHECK(fixedpoint_dot(fixedpoint_encode(ai, 1), fixedpoint_encode(bi, 1)).value ==
          xnor_popcount_dot(pack_signs(a, {m}), pack_signs(b, {m})));
  }
}

TEST_CASE("fixed-point encode/decode roundtrip") {
  for (std::size_t k = 1; k <= 5; ++k) {
    const std::int64_t top = (std::int64_t{1} << k) - 1;
    std::vector<std::int64_t> all;
    for (std::int64_t v = -top; v <= top; v += 2) all.push_back(v);
    const auto p = fixedpoint_encode(all, k);
    CHECK(fixedpoint_decode(p) == all);
    for (std::size_t m = 0; m < all.size(); ++m) CHECK(decode_one(p, m) == all[m]);
  }
}

TEST_CASE("layer costs and the storage rule") {
  LayerInfo l;
  l.name = "conv";
  l.kind = LayerKind::Conv;
  l.c_in = 16;
  l.c_out = 32;
  l.kh = l.kw = 3;
  l.h_in = l.w_in = 8;
  l.h_out = l.w_out = 8;
  l.weights = 16 * 32 * 9;
  l.copies = 4;
  l.binary = true;
  const auto b = layer_cost(l);
  CHECK(b.binary_ops == 4ull * 16 * 32 * 9 * 64);
  CHECK(b.float_ops == 0);
  CHECK(b.weight_bytes == 4 * l.weights / 8);

  l.copies = 1;
  l.binary = false;
  const auto f = layer_cost(l);
  CHECK(f.float_ops == 16ull * 32 * 9 * 64);
  CHECK(f.weight_bytes == 4 * l.weights);
  CHECK(static_cast<double>(b.weight_bytes) / static_cast<double>(f.weight_bytes) == doctest::Approx(4.0 / 32.0));
  CHECK(f.ncc == doctest::Approx(static_cast<double>(f.float_ops) / 1e9));
  CHECK(b.ncc == doctest::Approx(static_cast<double>(b.binary_ops) / 64.0 / 1e9));
}

TEST_CASE("model report sums its layer table") {
  ModelConfig cfg;
  const Model m(cfg);
  const auto r = model_report(m);
  std::uint64_t fl = 0, bi = 0, bytes = 0;
  double ncc = 0.0;
  for (const auto& l : m.layers()) {
    std::uint64_t ops = 0;
    if (l.kind == LayerKind::Conv) ops = l.copies * l.c_in * l.c_out * l.kh * l.kw * l.h_out * l.w_out;
    if (l.kind == LayerKind::Conv && l.binary) bi += ops;
    else if (l.kind == LayerKind::Conv) fl += ops;
    const auto c = layer_cost(l);
    bytes += c.weight_bytes + c.aux_bytes;
    ncc += c.ncc;
  }
  std::uint64_t conv_float = 0, conv_binary = 0;
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    if (m.layers()[i].kind != LayerKind::Conv) continue;
    conv_float += r.layers[i].float_ops;
    conv_binary += r.layers[i].binary_ops;
  }
  CHECK(conv_float == fl);
  CHECK(conv_binary == bi);
  CHECK(r.param_bytes == bytes);
  CHECK(r.ncc == doctest::Approx(ncc).epsilon(1e-9));
  CHECK(r.sigma > 1.0);

  ModelConfig plain = cfg;
  plain.binarize_encoder = plain.binarize_decoder = false;
  const Model fm(plain);
  CHECK(model_report(fm).param_bytes == 4 * fm.params().parameter_count());

  const auto text = format_report(r);
  CHECK(text.find("total") != std::string::npos);
  const auto csv = format_report_csv(r);
  CHECK(csv.rfind("layer,float_ops,binary_ops,ncc,bytes\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == r.layers.size() + 2);
}
