#include "bnn/ablation.hpp"

#include <cstdio>
#include <ostream>

#include "bnn/complexity.hpp"
#include "bnn/errors.hpp"

namespace bnn {

std::vector<AblationRow> ablation_rows(int table, const RunConfig& base) {
  std::vector<AblationRow> rows;
  auto add = [&](std::string label, auto edit) {
    AblationRow r;
    r.label = std::move(label);
    r.config = base;
    edit(r.config.model);
    rows.push_back(std::move(r));
  };
  switch (table) {
    case 4:
      add("single_branch", [](ModelConfig& m) { m.branches = 1; });
      add("independent_branches", [](ModelConfig& m) { m.branch_mixing = false; });
      add("gated_branches", [](ModelConfig&) {});
      break;
    case 5:
      add("without_attention", [](ModelConfig& m) { m.attention = false; });
      add("with_attention", [](ModelConfig& m) { m.attention = true; });
      break;
    case 6:
      add("float_enc_float_dec", [](ModelConfig& m) { m.binarize_encoder = m.binarize_decoder = false; });
      add("binary_enc_float_dec", [](ModelConfig& m) { m.binarize_encoder = true, m.binarize_decoder = false; });
      add("float_enc_binary_dec", [](ModelConfig& m) { m.binarize_encoder = false, m.binarize_decoder = true; });
      add("binary_enc_binary_dec", [](ModelConfig& m) { m.binarize_encoder = m.binarize_decoder = true; });
      break;
    default:
      throw ConfigError("ablation table must be 4, 5 or 6, got " + std::to_string(table));
  }
  for (auto& r : rows) {
    const Model m(r.config.model);
    const auto report = model_report(m);
    r.ncc = report.ncc;
    r.megabytes = static_cast<double>(report.param_bytes) / 1e6;
  }
  return rows;
}

void run_ablation(std::vector<AblationRow>& rows, std::span<const std::uint64_t> seeds, std::ostream* log) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  for (auto& r : rows) {
    r.miou.clear();
    double sum = 0.0;
    for (auto seed : seeds) {
      RunConfig c = r.config;
      c.model.seed = seed;
      c.train.seed = seed;
      if (log) *log << "# " << r.label << " seed=" << seed << std::endl;
      const auto result = train(c.train, c.model, log);
      r.miou.push_back(result.val.miou);
      sum += result.val.miou;
    }
    r.mean_miou = sum / static_cast<double>(seeds.size());
  }
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::string out = "variant,mean_miou,ncc_1e9,param_mb,per_seed\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.4f,", r.label.c_str(), r.mean_miou, r.ncc, r.megabytes);
    out += buf;
    for (std::size_t i = 0; i < r.miou.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.6f", i ? ";" : "", r.miou[i]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace bnn
