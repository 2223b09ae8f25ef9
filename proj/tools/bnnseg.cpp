#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "bnn/ablation.hpp"
#include "bnn/bench.hpp"
#include "bnn/btf.hpp"
#include "bnn/complexity.hpp"
#include "bnn/config.hpp"
#include "bnn/dataset.hpp"
#include "bnn/errors.hpp"
#include "bnn/train.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kDivergence = 4 };

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw bnn::ConfigError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw bnn::ConfigError("no seeds given");
  return out;
}

void print_eval(const bnn::EvalReport& r) {
  std::printf("miou=%.6f\nmaxf=%.6f\n", r.miou, r.maxf);
  for (std::size_t c = 0; c < r.class_iou.size(); ++c) std::printf("iou_class%zu=%.6f\n", c, r.class_iou[c]);
  std::printf("miou,maxf");
  for (std::size_t c = 0; c < r.class_iou.size(); ++c) std::printf(",iou_class%zu", c);
  std::printf("\n%.6f,%.6f", r.miou, r.maxf);
  for (double v : r.class_iou) std::printf(",%.6f", v);
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Binary segmentation network toolkit"};
  app.require_subcommand(1);

  std::uint64_t gen_seed = 7;
  std::size_t gen_n = 0, gen_size = 64;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "Write a synthetic dataset");
  gen->add_option("--seed", gen_seed)->required();
  gen->add_option("--n", gen_n)->required();
  gen->add_option("--size", gen_size)->required();
  gen->add_option("--out", gen_out)->required();

  std::string train_config, train_out;
  auto* trn = app.add_subcommand("train", "Two-stage training");
  trn->add_option("--config", train_config)->required();
  trn->add_option("--out", train_out)->required();

  std::string eval_ckpt, eval_data;
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset directory");
  evl->add_option("--ckpt", eval_ckpt)->required();
  evl->add_option("--data", eval_data)->required();

  std::uint64_t b_cin = 256, b_cout = 256, b_k = 3, b_hw = 40, b_branches = 5;
  std::size_t b_repeats = 3;
  auto* bch = app.add_subcommand("bench", "Packed binary convolution against a scalar float convolution");
  bch->add_option("--cin", b_cin);
  bch->add_option("--cout", b_cout);
  bch->add_option("--k", b_k, "kernel size");
  bch->add_option("--hw", b_hw, "input height and width");
  bch->add_option("--branches", b_branches, "branch count for the theoretical speedup");
  bch->add_option("--repeats", b_repeats);

  std::string cx_config;
  auto* cpx = app.add_subcommand("complexity", "Analytic cost report for a configured model");
  cpx->add_option("--config", cx_config)->required();

  int ab_table = 4;
  std::string ab_seeds, ab_config;
  auto* abl = app.add_subcommand("ablate", "Train ablation variants over several seeds");
  abl->add_option("--table", ab_table)->required()->check(CLI::IsMember({4, 5, 6}));
  abl->add_option("--seeds", ab_seeds)->required();
  abl->add_option("--config", ab_config, "base configuration (defaults otherwise)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) {
      bnn::write_dataset(gen_out, bnn::gen_dataset(gen_seed, gen_n, gen_size));
      std::printf("wrote %zu samples to %s\n", gen_n, gen_out.c_str());
    } else if (*trn) {
      const auto cfg = bnn::load_run_config(train_config);
      auto result = bnn::train(cfg.train, cfg.model, &std::cout);
      bnn::write_file(train_out, bnn::save_checkpoint(result.model));
      std::printf("val_miou=%.6f\nval_maxf=%.6f\n", result.val.miou, result.val.maxf);
    } else if (*evl) {
      auto model = bnn::load_checkpoint(bnn::read_file(eval_ckpt));
      const auto data = bnn::read_dataset(eval_data);
      print_eval(bnn::evaluate(model, data));
    } else if (*bch) {
      bnn::LayerCostSpec spec{b_cin, b_cout, b_k, b_k, b_hw, b_hw, 2 * b_hw, 2 * b_hw, b_branches, 64};
      std::fputs(bnn::format_bench(bnn::bench_kernel(spec, b_repeats)).c_str(), stdout);
    } else if (*cpx) {
      const auto cfg = bnn::load_run_config(cx_config);
      const bnn::Model model(cfg.model);
      const auto report = bnn::model_report(model);
      std::fputs(bnn::format_report(report).c_str(), stdout);
      std::fputs(bnn::format_report_csv(report).c_str(), stdout);
      const bnn::LayerCostSpec ref{256, 256, 3, 3, 40, 40, 80, 80, 5, 64};
      std::printf("upsample_speedup(256,256,3x3,40x40->80x80,K=5)=%.4f\n", bnn::upsample_speedup(ref));
      std::printf("attention_speedup(256,256,3x3,40x40->80x80,K=5)=%.4f (stated figure %.2f is not reproduced by the formula)\n",
                  bnn::attention_speedup(ref), bnn::kStatedAttentionSpeedup);
    } else if (*abl) {
      bnn::RunConfig base;
      if (!ab_config.empty()) base = bnn::load_run_config(ab_config);
      auto rows = bnn::ablation_rows(ab_table, base);
      bnn::run_ablation(rows, parse_seeds(ab_seeds), &std::cout);
      std::fputs(bnn::format_ablation(rows).c_str(), stdout);
    }
  } catch (const bnn::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const bnn::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const bnn::FormatError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const bnn::DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return kDivergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kOk;
}
