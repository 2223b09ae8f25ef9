#include "bnn/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "bnn/errors.hpp"

namespace bnn {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad(const ConfigEntry& e, const std::string& what) {
  throw ConfigError("line " + std::to_string(e.line) + ": " + e.key + ": " + what + " (got '" + e.value + "')");
}

std::uint64_t as_uint(const ConfigEntry& e) {
  std::uint64_t v = 0;
  const char* end = e.value.data() + e.value.size();
  const auto [p, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc() || p != end) bad(e, "expected a non-negative integer");
  return v;
}

double as_double(const ConfigEntry& e) {
  double v = 0;
  const char* end = e.value.data() + e.value.size();
  const auto [p, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v)) bad(e, "expected a finite number");
  return v;
}

bool as_bool(const ConfigEntry& e) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  bad(e, "expected true or false");
}

std::array<std::size_t, 4> as_widths(const ConfigEntry& e) {
  std::array<std::size_t, 4> w{};
  std::size_t n = 0;
  std::string_view rest = e.value;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string_view item = trim(rest.substr(0, comma));
    if (n == 4) bad(e, "expected four comma-separated widths");
    ConfigEntry one{e.key, std::string(item), e.line};
    w[n++] = as_uint(one);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
  }
  if (n != 4) bad(e, "expected four comma-separated widths");
  return w;
}

using Setter = std::function<void(const ConfigEntry&)>;

std::map<std::string, Setter> model_setters(ModelConfig& m) {
  return {
      {"height", [&](const ConfigEntry& e) { m.height = as_uint(e); }},
      {"width", [&](const ConfigEntry& e) { m.width = as_uint(e); }},
      {"classes", [&](const ConfigEntry& e) { m.classes = as_uint(e); }},
      {"branches", [&](const ConfigEntry& e) { m.branches = as_uint(e); }},
      {"widths", [&](const ConfigEntry& e) { m.widths = as_widths(e); }},
      {"residual_units", [&](const ConfigEntry& e) { m.residual_units = as_uint(e); }},
      {"binarize_encoder", [&](const ConfigEntry& e) { m.binarize_encoder = as_bool(e); }},
      {"binarize_decoder", [&](const ConfigEntry& e) { m.binarize_decoder = as_bool(e); }},
      {"attention", [&](const ConfigEntry& e) { m.attention = as_bool(e); }},
      {"attention_threshold", [&](const ConfigEntry& e) { m.attention_threshold = as_double(e); }},
      {"pad_value",
       [&](const ConfigEntry& e) {
         if (e.value == "-1") m.pad_bit = PadBit::Negative;
         else if (e.value == "+1" || e.value == "1") m.pad_bit = PadBit::Positive;
         else bad(e, "expected -1 or +1");
       }},
      {"branch_mixing", [&](const ConfigEntry& e) { m.branch_mixing = as_bool(e); }},
      {"exclude_self", [&](const ConfigEntry& e) { m.exclude_self = as_bool(e); }},
      {"remix_each_conv", [&](const ConfigEntry& e) { m.remix_each_conv = as_bool(e); }},
      {"ste_clip", [&](const ConfigEntry& e) { m.ste_clip = as_bool(e); }},
      {"model_seed", [&](const ConfigEntry& e) { m.seed = as_uint(e); }},
  };
}

std::map<std::string, Setter> train_setters(TrainConfig& t) {
  return {
      {"stage1_epochs", [&](const ConfigEntry& e) { t.stage1_epochs = as_uint(e); }},
      {"stage2_epochs", [&](const ConfigEntry& e) { t.stage2_epochs = as_uint(e); }},
      {"batch_size", [&](const ConfigEntry& e) { t.batch_size = as_uint(e); }},
      {"learning_rate", [&](const ConfigEntry& e) { t.learning_rate = as_double(e); }},
      {"stage2_learning_rate", [&](const ConfigEntry& e) { t.stage2_learning_rate = as_double(e); }},
      {"min_learning_rate_ratio", [&](const ConfigEntry& e) { t.min_learning_rate_ratio = as_double(e); }},
      {"adam_beta1", [&](const ConfigEntry& e) { t.adam_beta1 = as_double(e); }},
      {"adam_beta2", [&](const ConfigEntry& e) { t.adam_beta2 = as_double(e); }},
      {"adam_epsilon", [&](const ConfigEntry& e) { t.adam_epsilon = as_double(e); }},
      {"seed", [&](const ConfigEntry& e) { t.seed = as_uint(e); }},
      {"data_seed", [&](const ConfigEntry& e) { t.data_seed = as_uint(e); }},
      {"train_size", [&](const ConfigEntry& e) { t.train_size = as_uint(e); }},
      {"val_size", [&](const ConfigEntry& e) { t.val_size = as_uint(e); }},
      {"train_dir", [&](const ConfigEntry& e) { t.train_dir = e.value; }},
      {"val_dir", [&](const ConfigEntry& e) { t.val_dir = e.value; }},
      {"flip", [&](const ConfigEntry& e) { t.flip = as_bool(e); }},
      {"crop", [&](const ConfigEntry& e) { t.crop = as_bool(e); }},
      {"crop_pad", [&](const ConfigEntry& e) { t.crop_pad = as_uint(e); }},
  };
}

void apply_entries(const std::vector<ConfigEntry>& entries, const std::map<std::string, Setter>& setters) {
  for (const auto& e : entries) {
    const auto it = setters.find(e.key);
    if (it == setters.end()) throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
    it->second(e);
  }
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* fmt_bool(bool b) { return b ? "true" : "false"; }

}  // namespace

std::vector<ConfigEntry> parse_config_lines(std::string_view text) {
  std::vector<ConfigEntry> out;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + std::string(line) + "'");
    }
    ConfigEntry e{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no};
    if (e.key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!seen.insert(e.key).second) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + e.key + "'");
    out.push_back(std::move(e));
  }
  return out;
}

ModelConfig parse_model_config(std::string_view text) {
  ModelConfig m;
  apply_entries(parse_config_lines(text), model_setters(m));
  m.validate();
  return m;
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig r;
  auto setters = model_setters(r.model);
  setters.merge(train_setters(r.train));
  apply_entries(parse_config_lines(text), setters);
  r.model.validate();
  r.train.validate();
  return r;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string model_config_text(const ModelConfig& m) {
  std::ostringstream out;
  out << "height = " << m.height << '\n'
      << "width = " << m.width << '\n'
      << "classes = " << m.classes << '\n'
      << "branches = " << m.branches << '\n'
      << "widths = " << m.widths[0] << ',' << m.widths[1] << ',' << m.widths[2] << ',' << m.widths[3] << '\n'
      << "residual_units = " << m.residual_units << '\n'
      << "binarize_encoder = " << fmt_bool(m.binarize_encoder) << '\n'
      << "binarize_decoder = " << fmt_bool(m.binarize_decoder) << '\n'
      << "attention = " << fmt_bool(m.attention) << '\n'
      << "attention_threshold = " << fmt_double(m.attention_threshold) << '\n'
      << "pad_value = " << (m.pad_bit == PadBit::Negative ? "-1" : "+1") << '\n'
      << "branch_mixing = " << fmt_bool(m.branch_mixing) << '\n'
      << "exclude_self = " << fmt_bool(m.exclude_self) << '\n'
      << "remix_each_conv = " << fmt_bool(m.remix_each_conv) << '\n'
      << "ste_clip = " << fmt_bool(m.ste_clip) << '\n'
      << "model_seed = " << m.seed << '\n';
  return out.str();
}

std::string run_config_text(const RunConfig& r) {
  const auto& t = r.train;
  std::ostringstream out;
  out << model_config_text(r.model) << "stage1_epochs = " << t.stage1_epochs << '\n'
      << "stage2_epochs = " << t.stage2_epochs << '\n'
      << "batch_size = " << t.batch_size << '\n'
      << "learning_rate = " << fmt_double(t.learning_rate) << '\n'
      << "stage2_learning_rate = " << fmt_double(t.stage2_learning_rate) << '\n'
      << "min_learning_rate_ratio = " << fmt_double(t.min_learning_rate_ratio) << '\n'
      << "adam_beta1 = " << fmt_double(t.adam_beta1) << '\n'
      << "adam_beta2 = " << fmt_double(t.adam_beta2) << '\n'
      << "adam_epsilon = " << fmt_double(t.adam_epsilon) << '\n'
      << "seed = " << t.seed << '\n'
      << "data_seed = " << t.data_seed << '\n'
      << "train_size = " << t.train_size << '\n'
      << "val_size = " << t.val_size << '\n';
  if (!t.train_dir.empty()) out << "train_dir = " << t.train_dir << '\n';
  if (!t.val_dir.empty()) out << "val_dir = " << t.val_dir << '\n';
  out << "flip = " << fmt_bool(t.flip) << '\n'
      << "crop = " << fmt_bool(t.crop) << '\n'
      << "crop_pad = " << t.crop_pad << '\n';
  return out.str();
}

}  // namespace bnn
