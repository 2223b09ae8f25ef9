#include "bnn/complexity.hpp"

#include <iomanip>
#include <sstream>

#include "bnn/errors.hpp"

namespace bnn {

void LayerCostSpec::validate() const {
  if (!c_in || !c_out || !kh || !kw || !w_in || !h_in || !w_out || !h_out || !branches) {
    throw std::invalid_argument("layer cost dimensions must be positive");
  }
  if (bitwise_parallelism != 32 && bitwise_parallelism != 64 && bitwise_parallelism != 128) {
    throw std::invalid_argument("bitwise parallelism must be 32, 64 or 128");
  }
}

PrimitiveCosts primitive_costs(const LayerCostSpec& s) {
  s.validate();
  return {s.c_in * s.c_out * s.kh * s.kw * s.w_in * s.h_in, s.c_out * s.w_out * s.h_out, s.c_in * s.w_in * s.h_in};
}

double upsample_speedup(const LayerCostSpec& s) {
  const auto c = primitive_costs(s);
  const double k = static_cast<double>(s.branches), p = static_cast<double>(s.bitwise_parallelism);
  const double num = static_cast<double>(c.up) + static_cast<double>(c.conv);
  const double den = k * static_cast<double>(c.up) + k * static_cast<double>(c.conv) / p + k * static_cast<double>(c.add);
  return num / den;
}

double attention_speedup(const LayerCostSpec& s) {
  const auto c = primitive_costs(s);
  const double m = static_cast<double>(s.h_in * s.w_in), cin = static_cast<double>(s.c_in);
  const double comp = cin * m * m, allo = cin * cin * m;
  const double k = static_cast<double>(s.branches), p = static_cast<double>(s.bitwise_parallelism);
  return (comp + allo) / ((comp + k * allo) / p + k * static_cast<double>(c.add));
}

FixedPointPlanes fixedpoint_encode(std::span<const std::int64_t> values, std::size_t bits) {
  if (bits == 0 || bits > 62) throw std::invalid_argument("fixed-point width must be in [1, 62]");
  const std::int64_t top = (std::int64_t{1} << bits) - 1;
  FixedPointPlanes out;
  for (std::size_t i = 0; i < bits; ++i) out.planes.emplace_back(Shape{values.size()});
  for (std::size_t m = 0; m < values.size(); ++m) {
    const std::int64_t v = values[m];
    if (v < -top || v > top || (v - top) % 2 != 0) {
      throw std::invalid_argument(std::to_string(v) + " is not representable with " + std::to_string(bits) + " sign planes");
    }
    const auto u = static_cast<std::uint64_t>((v + top) / 2);
    for (std::size_t i = 0; i < bits; ++i) out.planes[i].set(m, (u >> i) & 1u);
  }
  return out;
}

std::vector<std::int64_t> fixedpoint_decode(const FixedPointPlanes& p) {
  std::vector<std::int64_t> out(p.length(), 0);
  for (std::size_t i = 0; i < p.bits(); ++i)
    for (std::size_t m = 0; m < out.size(); ++m) out[m] += (p.planes[i].get(m) ? 1 : -1) * (std::int64_t{1} << i);
  return out;
}

FixedPointResult fixedpoint_dot(const FixedPointPlanes& w, const FixedPointPlanes& x) {
  if (w.length() != x.length()) {
    throw ShapeError("fixed-point planes differ in length: " + std::to_string(w.length()) + " vs " + std::to_string(x.length()));
  }
  FixedPointResult r;
  for (std::size_t i = 0; i < w.bits(); ++i)
    for (std::size_t j = 0; j < x.bits(); ++j) {
      r.value += (std::int64_t{1} << (i + j)) * xnor_popcount_dot(w.planes[i], x.planes[j]);
      ++r.ops_count;
    }
  const auto wd = fixedpoint_decode(w), xd = fixedpoint_decode(x);
  std::int64_t expected = 0;
  for (std::size_t m = 0; m < wd.size(); ++m) expected += wd[m] * xd[m];
  if (expected != r.value) {
    throw ContractError("bitwise fixed-point dot " + std::to_string(r.value) + " differs from integer product " +
                        std::to_string(expected));
  }
  return r;
}

LayerCost layer_cost(const LayerInfo& l, std::uint64_t parallelism) {
  LayerCost c;
  c.name = l.name;
  const std::uint64_t k = l.copies;
  switch (l.kind) {
    case LayerKind::Conv: {
      const std::uint64_t ops = k * l.c_in * l.c_out * l.kh * l.kw * l.h_out * l.w_out;
      if (l.binary) {
        c.binary_ops = ops;
        c.weight_bytes = (k * l.weights + 7) / 8;
        c.aux_bytes = 4 * k * (l.aux_params + l.c_out);
      } else {
        c.float_ops = ops;
        c.weight_bytes = 4 * k * l.weights;
        c.aux_bytes = 4 * k * l.aux_params;
      }
      break;
    }
    case LayerKind::Pool:
    case LayerKind::Residual:
    case LayerKind::Upsample:
    case LayerKind::BatchNorm:
      c.float_ops = k * l.c_in * l.h_in * l.w_in;
      break;
    case LayerKind::Merge:
      c.float_ops = k * l.c_out * l.h_out * l.w_out;
      break;
    case LayerKind::Attention: {
      const std::uint64_t m = l.h_in * l.w_in;
      c.binary_ops = l.c_in * m * m + k * l.c_in * l.c_in * m;
      c.float_ops = k * l.c_out * m;
      break;
    }
    case LayerKind::Gates:
      c.aux_bytes = 4 * k * l.aux_params;
      break;
  }
  c.ncc = (static_cast<double>(c.float_ops) + static_cast<double>(c.binary_ops) / static_cast<double>(parallelism)) / 1e9;
  return c;
}

CostReport model_report(const Model& m, std::uint64_t parallelism) {
  CostReport r;
  for (const auto& l : m.layers()) {
    auto c = layer_cost(l, parallelism);
    r.float_ops += c.float_ops;
    r.binary_ops += c.binary_ops;
    if (l.kind == LayerKind::Residual || l.kind == LayerKind::Merge) r.additions += c.float_ops;
    r.param_bytes += c.weight_bytes + c.aux_bytes;
    r.layers.push_back(std::move(c));
  }
  const double normalized = static_cast<double>(r.float_ops) + static_cast<double>(r.binary_ops) / static_cast<double>(parallelism);
  r.ncc = normalized / 1e9;
  r.sigma = normalized > 0 ? static_cast<double>(r.float_ops + r.binary_ops) / normalized : 1.0;
  return r;
}

std::string format_report(const CostReport& r) {
  std::ostringstream out;
  out << std::left << std::setw(22) << "layer" << std::right << std::setw(14) << "float_ops" << std::setw(14)
      << "binary_ops" << std::setw(14) << "ncc_1e9" << std::setw(10) << "bytes" << '\n';
  for (const auto& l : r.layers) {
    out << std::left << std::setw(22) << l.name << std::right << std::setw(14) << l.float_ops << std::setw(14)
        << l.binary_ops << std::setw(14) << std::fixed << std::setprecision(6) << l.ncc << std::setw(10)
        << (l.weight_bytes + l.aux_bytes) << '\n';
  }
  out << std::left << std::setw(22) << "total" << std::right << std::setw(14) << r.float_ops << std::setw(14) << r.binary_ops
      << std::setw(14) << std::fixed << std::setprecision(6) << r.ncc << std::setw(10) << r.param_bytes << '\n';
  out << "additions " << r.additions << '\n';
  out << "speedup_vs_float " << std::setprecision(2) << r.sigma << '\n';
  return out.str();
}

std::string format_report_csv(const CostReport& r) {
  std::ostringstream out;
  out << "layer,float_ops,binary_ops,ncc,bytes\n";
  out << std::setprecision(9);
  for (const auto& l : r.layers)
    out << l.name << ',' << l.float_ops << ',' << l.binary_ops << ',' << l.ncc << ',' << (l.weight_bytes + l.aux_bytes) << '\n';
  out << "total," << r.float_ops << ',' << r.binary_ops << ',' << r.ncc << ',' << r.param_bytes << '\n';
  return out.str();
}

}  // namespace bnn
