#pragma once

#include <cstdint>
#include <string>

#include "bnn/complexity.hpp"

namespace bnn {

struct BenchReport {
  LayerCostSpec spec;
  std::size_t repeats = 0;
  bool identical = false;
  double packed_seconds = 0.0;  // best of `repeats`, pack + XNOR/popcount conv
  double float_seconds = 0.0;   // best of `repeats`, scalar float conv of the same ±1 data
  double measured_ratio = 0.0;
  double theoretical_sigma = 0.0;
};

// Square input of spec.h_in, stride 1, "same" padding with -1 borders.
// Throws ContractError if the two paths disagree.
BenchReport bench_kernel(const LayerCostSpec& spec, std::size_t repeats, std::uint64_t seed = 1);

std::string format_bench(const BenchReport& r);

}  // namespace bnn
