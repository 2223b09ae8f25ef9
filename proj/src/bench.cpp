#include "bnn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <limits>

#include "bnn/errors.hpp"
#include "bnn/kernels.hpp"
#include "bnn/rng.hpp"

namespace bnn {

namespace {

using Clock = std::chrono::steady_clock;

// Plain nested-loop cross-correlation on ±1 floats with -1 padding.
std::vector<float> scalar_conv(const std::vector<float>& x, const std::vector<float>& w, const LayerCostSpec& s) {
  const std::size_t C = s.c_in, O = s.c_out, H = s.h_in, W = s.w_in, KH = s.kh, KW = s.kw;
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(KH / 2), pw = static_cast<std::ptrdiff_t>(KW / 2);
  const std::size_t OH = conv_out_extent(H, KH, 1, KH / 2), OW = conv_out_extent(W, KW, 1, KW / 2);
  std::vector<float> out(O * OH * OW, 0.0f);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t y = 0; y < OH; ++y)
      for (std::size_t xx = 0; xx < OW; ++xx) {
        float acc = 0.0f;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t ky = 0; ky < KH; ++ky)
            for (std::size_t kx = 0; kx < KW; ++kx) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - ph;
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx + kx) - pw;
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(H) && ix < static_cast<std::ptrdiff_t>(W);
              const float v = inside ? x[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] : -1.0f;
              acc += v * w[((o * C + c) * KH + ky) * KW + kx];
            }
        out[(o * OH + y) * OW + xx] = acc;
      }
  return out;
}

}  // namespace

BenchReport bench_kernel(const LayerCostSpec& spec, std::size_t repeats, std::uint64_t seed) {
  spec.validate();
  BenchReport r;
  r.spec = spec;
  r.repeats = repeats;
  r.theoretical_sigma = upsample_speedup(spec);

  SplitMix64 rng(seed);
  std::vector<float> x(spec.c_in * spec.h_in * spec.w_in), w(spec.c_out * spec.c_in * spec.kh * spec.kw);
  for (auto& v : x) v = rng.below(2) ? 1.0f : -1.0f;
  for (auto& v : w) v = rng.below(2) ? 1.0f : -1.0f;
  const Shape xd{spec.c_in, spec.h_in, spec.w_in}, wd{spec.c_out, spec.c_in, spec.kh, spec.kw};
  const ConvGeometry geom{1, spec.kh / 2, PadBit::Negative};
  const BitPlane wb = pack_signs(w, wd);

  const IntTensor packed = binary_conv2d(pack_signs(x, xd), wb, geom);
  const std::vector<float> reference = scalar_conv(x, w, spec);
  r.identical = packed.size() == reference.size();
  for (std::size_t i = 0; r.identical && i < reference.size(); ++i) r.identical = static_cast<float>(packed[i]) == reference[i];
  if (!r.identical) throw ContractError("packed convolution disagrees with the scalar reference");

  if (repeats == 0) return r;
  double best_packed = std::numeric_limits<double>::infinity(), best_float = best_packed;
  for (std::size_t i = 0; i < repeats; ++i) {
    auto t0 = Clock::now();
    const IntTensor out = binary_conv2d(pack_signs(x, xd), wb, geom);
    auto t1 = Clock::now();
    const std::vector<float> ref = scalar_conv(x, w, spec);
    auto t2 = Clock::now();
    if (out.size() != ref.size()) throw ContractError("benchmark output size changed");
    best_packed = std::min(best_packed, std::chrono::duration<double>(t1 - t0).count());
    best_float = std::min(best_float, std::chrono::duration<double>(t2 - t1).count());
  }
  r.packed_seconds = best_packed;
  r.float_seconds = best_float;
  r.measured_ratio = best_packed > 0 ? best_float / best_packed : 0.0;
  return r;
}

std::string format_bench(const BenchReport& r) {
  const auto c = primitive_costs(r.spec);
  char buf[512];
  int n = std::snprintf(buf, sizeof buf,
                        "c_in=%llu c_out=%llu k=%llux%llu hw=%llux%llu branches=%llu\n"
                        "C_conv=%llu C_add=%llu C_up=%llu\n"
                        "identical=%s\ntheoretical_sigma=%.4f\n",
                        (unsigned long long)r.spec.c_in, (unsigned long long)r.spec.c_out, (unsigned long long)r.spec.kh,
                        (unsigned long long)r.spec.kw, (unsigned long long)r.spec.h_in, (unsigned long long)r.spec.w_in,
                        (unsigned long long)r.spec.branches, (unsigned long long)c.conv, (unsigned long long)c.add,
                        (unsigned long long)c.up, r.identical ? "true" : "false", r.theoretical_sigma);
  std::string out(buf, static_cast<std::size_t>(n));
  if (r.repeats > 0) {
    n = std::snprintf(buf, sizeof buf, "repeats=%zu\npacked_seconds=%.6f\nfloat_seconds=%.6f\nmeasured_ratio=%.3f\n", r.repeats,
                      r.packed_seconds, r.float_seconds, r.measured_ratio);
    out.append(buf, static_cast<std::size_t>(n));
  } else {
    out += "timing=omitted\n";
  }
  return out;
}

}  // namespace bnn
