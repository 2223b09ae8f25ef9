#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bnn/network.hpp"

namespace bnn {

struct LayerCostSpec {
  std::uint64_t c_in = 1, c_out = 1, kh = 1, kw = 1;
  std::uint64_t w_in = 1, h_in = 1, w_out = 1, h_out = 1;
  std::uint64_t branches = 1;
  std::uint64_t bitwise_parallelism = 64;

  void validate() const;  // throws std::invalid_argument
};

struct PrimitiveCosts {
  std::uint64_t conv = 0;  // c_in c_out kh kw w_in h_in
  std::uint64_t add = 0;   // c_out w_out h_out
  std::uint64_t up = 0;    // c_in w_in h_in
};

PrimitiveCosts primitive_costs(const LayerCostSpec& s);

// (C_up + C_conv) / (K C_up + K C_conv / P + K C_add)
double upsample_speedup(const LayerCostSpec& s);

// C_comp = c_in (h_in w_in)^2, C_allo = c_in^2 w_in h_in,
// (C_comp + C_allo) / ((C_comp + K C_allo) / P + K C_add)
double attention_speedup(const LayerCostSpec& s);

// Speedup the attention analysis states for 256 channels, 40x40 maps, K = 5.
// The formula above gives about 28.55 for the same figures.
inline constexpr double kStatedAttentionSpeedup = 137.90;

/// Planes b_i in {-1,+1}^M with value sum_i 2^i b_i, least significant plane first.
struct FixedPointPlanes {
  std::vector<BitPlane> planes;
  std::size_t bits() const { return planes.size(); }
  std::size_t length() const { return planes.empty() ? 0 : planes[0].size(); }
};

// Encodes odd integers in [-(2^K - 1), 2^K - 1]; throws std::invalid_argument otherwise.
FixedPointPlanes fixedpoint_encode(std::span<const std::int64_t> values, std::size_t bits);
std::vector<std::int64_t> fixedpoint_decode(const FixedPointPlanes& p);

struct FixedPointResult {
  std::int64_t value = 0;
  std::uint64_t ops_count = 0;  // xnor-popcount passes
};

/// sum_i sum_j 2^(i+j) xnor_popcount_dot(w_i, x_j). Throws ShapeError on plane
/// length mismatch and ContractError if the result differs from the decoded product.
FixedPointResult fixedpoint_dot(const FixedPointPlanes& w, const FixedPointPlanes& x);

struct LayerCost {
  std::string name;
  std::uint64_t float_ops = 0;
  std::uint64_t binary_ops = 0;
  std::uint64_t weight_bytes = 0;  // packed bits for binary convs, 4 per weight otherwise
  std::uint64_t aux_bytes = 0;     // biases, norm affines, gates, filter scales
  double ncc = 0.0;                // float_ops + binary_ops / P, in 1e9
};

struct CostReport {
  std::vector<LayerCost> layers;
  std::uint64_t float_ops = 0;
  std::uint64_t binary_ops = 0;
  std::uint64_t additions = 0;
  std::uint64_t param_bytes = 0;
  double ncc = 0.0;
  double sigma = 0.0;  // ops of the all-float network / normalized ops of this one
};

LayerCost layer_cost(const LayerInfo& layer, std::uint64_t parallelism = 64);
CostReport model_report(const Model& m, std::uint64_t parallelism = 64);

std::string format_report(const CostReport& r);
std::string format_report_csv(const CostReport& r);

}  // namespace bnn
