#include <cstring>
#include <set>

#include "bnn/btf.hpp"
#include "bnn/config.hpp"
#include "bnn/errors.hpp"
#include "bnn/network.hpp"

namespace bnn {

namespace {

constexpr std::uint8_t kMagic[4] = {0x42, 0x4E, 0x4E, 0x43};
constexpr std::uint16_t kVersion = 1;

void entry(ByteWriter& w, const std::string& name, const FloatTensor& t) {
  if (name.size() > 0xFFFF) throw std::length_error("checkpoint entry name too long");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.str(name);
  write_btf(w, t);
}

FloatTensor vec(const std::vector<float>& v) { return FloatTensor({v.size()}, v); }

struct Parsed {
  std::vector<std::pair<std::string, FloatTensor>> entries;
  std::string config;
};

Parsed parse(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  const auto magic = in.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic");
  const auto version = in.u16();
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = in.u32();
  Parsed p;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = in.u16();
    const auto name = in.take(len);
    std::string key(name.begin(), name.end());
    auto t = read_btf(in);
    if (!std::holds_alternative<FloatTensor>(t)) throw FormatError("checkpoint entry '" + key + "' is not float");
    p.entries.emplace_back(std::move(key), std::get<FloatTensor>(std::move(t)));
  }
  const auto rest = in.take(in.remaining());
  p.config.assign(rest.begin(), rest.end());
  return p;
}

}  // namespace

std::vector<std::uint8_t> save_checkpoint(const Model& m) {
  const std::size_t count = m.params().size() + 2 * m.norm_stats().size();
  ByteWriter w;
  w.raw(kMagic);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(count));
  for (const auto& slot : m.params()) entry(w, slot.name, slot.value);
  for (const auto& [name, st] : m.norm_stats()) {
    entry(w, name + ".running_mean", vec(st.mean));
    entry(w, name + ".running_var", vec(st.var));
  }
  w.str(model_config_text(m.config()));
  return w.take();
}

void load_checkpoint_into(Model& m, std::span<const std::uint8_t> bytes) {
  Parsed p = parse(bytes);
  ModelConfig stored;
  try {
    stored = parse_model_config(p.config);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  if (!(stored == m.config())) throw ConfigError("checkpoint was saved for a different model configuration");

  std::set<std::string> filled;
  for (auto& [name, t] : p.entries) {
    if (!filled.insert(name).second) throw FormatError("duplicate checkpoint entry '" + name + "'");
    const auto suffix = [&](std::string_view s) {
      return name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (m.params().contains(name)) {
      auto& slot = m.params()[name];
      if (t.dims() != slot.value.dims()) throw FormatError("checkpoint entry '" + name + "' has the wrong shape");
      slot.value = std::move(t);
    } else if (suffix(".running_mean") || suffix(".running_var")) {
      const bool mean = suffix(".running_mean");
      const std::string layer = name.substr(0, name.rfind('.'));
      const auto it = m.norm_stats().find(layer);
      if (it == m.norm_stats().end()) throw FormatError("checkpoint has statistics for unknown layer '" + layer + "'");
      auto& dst = mean ? it->second.mean : it->second.var;
      if (t.size() != dst.size() || t.rank() != 1) throw FormatError("checkpoint entry '" + name + "' has the wrong shape");
      dst.assign(t.data().begin(), t.data().end());
    } else {
      throw FormatError("unknown checkpoint entry '" + name + "'");
    }
  }
  if (filled.size() != m.params().size() + 2 * m.norm_stats().size()) throw FormatError("checkpoint is missing entries");
}

Model load_checkpoint(std::span<const std::uint8_t> bytes) {
  Parsed p = parse(bytes);
  ModelConfig cfg;
  try {
    cfg = parse_model_config(p.config);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  Model m(cfg);
  load_checkpoint_into(m, bytes);
  return m;
}

}  // namespace bnn
