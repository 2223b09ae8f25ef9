#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bnn/config.hpp"

namespace bnn {

struct AblationRow {
  std::string label;
  RunConfig config;
  std::vector<double> miou;  // one per seed
  double mean_miou = 0.0;
  double ncc = 0.0;          // 1e9 normalized ops
  double megabytes = 0.0;    // parameter storage
};

// Variants of `base` for table 4 (upsampling), 5 (attention) or 6 (which half
// is binarized). Each seed sets both the model and the training seed.
std::vector<AblationRow> ablation_rows(int table, const RunConfig& base);

void run_ablation(std::vector<AblationRow>& rows, std::span<const std::uint64_t> seeds, std::ostream* log);

std::string format_ablation(const std::vector<AblationRow>& rows);

}  // namespace bnn
