#include "bnn/network.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "bnn/errors.hpp"
#include "bnn/ops.hpp"
#include "bnn/rng.hpp"

namespace bnn {

namespace {

std::string cat(const std::string& a, const std::string& b) { return a + "." + b; }
std::string numbered(const char* stem, std::size_t i) { return stem + std::to_string(i); }

std::size_t decoder_out_width(const ModelConfig& c, std::size_t block) {
  return block < 3 ? c.widths[2 - block] : c.widths[0];
}

}  // namespace

void ModelConfig::validate() const {
  if (channels != 3) throw ConfigError("channels must be 3");
  if (height == 0 || width == 0 || height % 16 || width % 16) {
    throw ConfigError("height and width must be positive multiples of 16, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  if (classes < 2) throw ConfigError("classes must be at least 2");
  if (branches == 0) throw ConfigError("branches must be at least 1");
  for (auto w : widths)
    if (w == 0) throw ConfigError("widths must be positive");
  if (residual_units == 0) throw ConfigError("residual_units must be at least 1");
  if (!std::isfinite(attention_threshold)) throw ConfigError("attention_threshold must be finite");
}

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::BatchNorm: return "norm";
    case LayerKind::Residual: return "add";
    case LayerKind::Upsample: return "upsample";
    case LayerKind::Merge: return "merge";
    case LayerKind::Attention: return "attention";
    case LayerKind::Gates: return "gates";
    case LayerKind::Pool: return "pool";
  }
  return "?";
}

// Registers parameters, norm statistics and table rows. Recorder below walks
// the same structure on a tape and must stay in step with it.
struct Model::Builder {
  Model& m;
  SplitMix64 rng;

  explicit Builder(Model& model) : m(model), rng(model.cfg_.seed ^ 0x5851F42D4C957F2Dull) {}

  void conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
            std::size_t h_in, std::size_t w_in, bool binary, bool norm, bool bias = false) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
    std::vector<float> w(cout * cin * k * k);
    for (auto& v : w) v = static_cast<float>(rng.normal() * stddev);
    m.params_.add(cat(name, "w"), FloatTensor({cout, cin, k, k}, std::move(w)));
    std::size_t aux = 0;
    if (bias) {
      m.params_.add(cat(name, "b"), FloatTensor::zeros({cout}));
      aux += cout;
    }
    if (norm) {
      add_norm(cat(name, "bn"), cout);
      aux += 2 * cout;
    }
    const std::size_t pad = k / 2;
    LayerInfo row{name, LayerKind::Conv, binary, cin, cout, k, k, stride, h_in, w_in, 0, 0, 1, cout * cin * k * k, aux};
    row.h_out = conv_out_extent(h_in, k, stride, pad);
    row.w_out = conv_out_extent(w_in, k, stride, pad);
    m.layers_.push_back(row);
  }

  void add_norm(const std::string& name, std::size_t c) {
    m.params_.add(cat(name, "g"), FloatTensor::filled({c}, 1.0f));
    m.params_.add(cat(name, "b"), FloatTensor::zeros({c}));
    m.stats_.emplace(name, BatchNormStats(c));
  }

  void row(const std::string& name, LayerKind kind, std::size_t c_in, std::size_t c_out, std::size_t h_in,
           std::size_t w_in, std::size_t h_out, std::size_t w_out, std::size_t copies = 1, std::size_t aux = 0) {
    m.layers_.push_back(LayerInfo{name, kind, false, c_in, c_out, 1, 1, 1, h_in, w_in, h_out, w_out, copies, 0, aux});
  }

  void build() {
    const auto& c = m.cfg_;
    std::size_t h = c.height, w = c.width;
    conv("stem", c.channels, c.widths[0], 3, 1, h, w, false, true);
    std::size_t cin = c.widths[0];
    for (std::size_t s = 0; s < 4; ++s) {
      const std::string stage = numbered("enc", s);
      const std::size_t cout = c.widths[s];
      conv(cat(stage, "down"), cin, cout, 3, 2, h, w, c.binarize_encoder, true);
      row(cat(stage, "pool"), LayerKind::Pool, cin, cin, h, w, h / 2, w / 2);
      if (cin != cout) conv(cat(stage, "short"), cin, cout, 1, 1, h / 2, w / 2, false, true);
      h /= 2;
      w /= 2;
      row(cat(stage, "down_add"), LayerKind::Residual, cout, cout, h, w, h, w);
      for (std::size_t r = 0; r < 2 * c.residual_units; ++r) {
        const std::string name = cat(stage, numbered("res", r));
        conv(name, cout, cout, 3, 1, h, w, c.binarize_encoder, true);
        row(name + "_add", LayerKind::Residual, cout, cout, h, w, h, w);
      }
      cin = cout;
    }
    for (std::size_t b = 0; b < 4; ++b) {
      const std::string block = numbered("dec", b);
      const std::size_t C = c.widths[3 - b], cout = decoder_out_width(c, b);
      conv(cat(block, "lat"), C, C, 1, 1, h, w, c.binarize_decoder, true);
      if (b > 0) row(cat(block, "lat_add"), LayerKind::Residual, C, C, h, w, h, w);
      for (std::size_t r = 0; r < 4; ++r) {
        const std::string name = cat(block, numbered("res", r));
        conv(name, C, C, 3, 1, h, w, c.binarize_decoder, true);
        row(name + "_add", LayerKind::Residual, C, C, h, w, h, w);
      }
      const std::size_t K = c.branches;
      if (c.attention) {
        conv(cat(block, "proj"), C, C, 1, 1, h, w, c.binarize_decoder, false);
        m.params_.add(cat(block, "beta"), FloatTensor::zeros({1}));
        m.layers_.back().aux_params += 1;
        row(cat(block, "attn"), LayerKind::Attention, C, C, h, w, h, w, K);
      }
      const std::string up = cat(block, "up");
      m.params_.add(cat(up, "gate"), FloatTensor::zeros({K}));
      m.params_.add(cat(up, "merge"), FloatTensor::zeros({K}));
      row(cat(up, "gates"), LayerKind::Gates, C, C, h, w, h, w, 1, 2 * K);
      for (std::size_t i = 0; i < K; ++i) {
        conv(cat(up, numbered("br", i) + ".conv1"), C, C, 3, 1, h, w, c.binarize_decoder, true);
        m.layers_.pop_back();
      }
      LayerInfo r1{cat(up, "conv1"), LayerKind::Conv, c.binarize_decoder, C, C, 3, 3, 1, h, w, h, w, K, C * C * 9, 2 * C};
      m.layers_.push_back(r1);
      row(cat(up, "upsample"), LayerKind::Upsample, C, C, h, w, 2 * h, 2 * w, K);
      for (std::size_t i = 0; i < K; ++i) {
        conv(cat(up, numbered("br", i) + ".conv2"), C, cout, 3, 1, 2 * h, 2 * w, c.binarize_decoder, true);
        m.layers_.pop_back();
      }
      LayerInfo r2{cat(up, "conv2"), LayerKind::Conv, c.binarize_decoder, C, cout, 3, 3, 1, 2 * h, 2 * w, 2 * h, 2 * w,
                   K, cout * C * 9, 2 * cout};
      m.layers_.push_back(r2);
      row(cat(up, "merge_sum"), LayerKind::Merge, cout, cout, 2 * h, 2 * w, 2 * h, 2 * w, K);
      h *= 2;
      w *= 2;
    }
    conv("head", c.widths[0], c.classes, 1, 1, h, w, false, false, true);
  }
};

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Builder(*this).build();
}

std::string Model::describe() const {
  std::ostringstream out;
  out << std::left << std::setw(22) << "layer" << std::setw(10) << "kind" << std::setw(8) << "prec" << std::right
      << std::setw(6) << "c_in" << std::setw(6) << "c_out" << std::setw(4) << "k" << std::setw(4) << "s" << std::setw(10)
      << "in" << std::setw(10) << "out" << std::setw(4) << "x" << std::setw(10) << "weights" << std::setw(8) << "aux"
      << '\n';
  std::size_t total = 0;
  for (const auto& l : layers_) {
    const bool is_conv = l.kind == LayerKind::Conv;
    out << std::left << std::setw(22) << l.name << std::setw(10) << layer_kind_name(l.kind) << std::setw(8)
        << (is_conv ? (l.binary ? "binary" : "float") : "-") << std::right << std::setw(6) << l.c_in << std::setw(6)
        << l.c_out << std::setw(4) << (is_conv ? std::to_string(l.kh) : "-") << std::setw(4)
        << (is_conv ? std::to_string(l.stride) : "-") << std::setw(10)
        << (std::to_string(l.h_in) + "x" + std::to_string(l.w_in)) << std::setw(10)
        << (std::to_string(l.h_out) + "x" + std::to_string(l.w_out)) << std::setw(4) << l.copies << std::setw(10)
        << l.weights << std::setw(8) << l.aux_params << '\n';
    total += l.copies * (l.weights + l.aux_params);
  }
  out << "parameters " << total << '\n';
  return out.str();
}

namespace {

struct Recorder {
  Model& m;
  Tape<float>& t;
  const ForwardOptions& opt;
  Trace* trace;

  NodeRef p(const std::string& name) { return t.param(name); }

  void mark(const std::string& name, NodeRef r) {
    if (trace) trace->emplace_back(name, r);
  }

  NodeRef conv(NodeRef x, const std::string& name, std::size_t stride, bool binary) {
    const auto& wt = m.params()[cat(name, "w")].value;
    const std::size_t pad = wt.dim(2) / 2;
    if (binary && !opt.bypass_binarizers) {
      ops::BinaryConvOptions bo{stride, pad, m.config().pad_bit, m.config().ste_clip, opt.packed};
      return ops::binary_conv2d(t, x, p(cat(name, "w")), bo);
    }
    return ops::conv2d(t, ops::hardtanh(t, x), p(cat(name, "w")), ConvAttrs{stride, pad, 0.0});
  }

  NodeRef norm(NodeRef x, const std::string& name) {
    return ops::batch_norm(t, x, p(cat(name, "g")), p(cat(name, "b")), &m.norm_stats().at(name), opt.training);
  }

  NodeRef conv_bn(NodeRef x, const std::string& name, std::size_t stride, bool binary) {
    const NodeRef y = norm(conv(x, name, stride, binary), cat(name, "bn"));
    mark(name, y);
    return y;
  }

  std::shared_ptr<const std::vector<AttentionMaps>> maps_from(NodeRef projected, bool binary) {
    const auto& v = t.value(projected);
    const std::size_t n = v.dim(0), per = v.size() / n;
    auto maps = std::make_shared<std::vector<AttentionMaps>>();
    for (std::size_t i = 0; i < n; ++i) {
      FloatTensor item({v.dim(1), v.dim(2), v.dim(3)},
                       std::vector<float>(v.raw() + i * per, v.raw() + (i + 1) * per));
      maps->push_back(attention_maps_from_projection(item, m.config().attention_threshold, binary));
    }
    return maps;
  }

  NodeRef run(NodeRef x) {
    const auto& c = m.config();
    NodeRef h = ops::conv2d(t, x, p("stem.w"), ConvAttrs{1, 1, 0.0});
    h = norm(h, "stem.bn");
    mark("stem", h);
    std::size_t cin = c.widths[0];
    std::array<NodeRef, 4> enc{};
    for (std::size_t s = 0; s < 4; ++s) {
      const std::string stage = numbered("enc", s);
      const std::size_t cout = c.widths[s];
      NodeRef main = conv_bn(h, cat(stage, "down"), 2, c.binarize_encoder);
      NodeRef shortcut = ops::avg_pool2(t, h);
      if (cin != cout) {
        shortcut = ops::conv2d(t, shortcut, p(cat(stage, "short.w")), ConvAttrs{1, 0, 0.0});
        shortcut = norm(shortcut, cat(stage, "short.bn"));
      }
      h = ops::add(t, main, shortcut);
      for (std::size_t r = 0; r < 2 * c.residual_units; ++r)
        h = ops::add(t, h, conv_bn(h, cat(stage, numbered("res", r)), 1, c.binarize_encoder));
      enc[s] = h;
      mark(stage, h);
      cin = cout;
    }
    NodeRef prev{};
    for (std::size_t b = 0; b < 4; ++b) {
      const std::string block = numbered("dec", b);
      NodeRef y = conv_bn(enc[3 - b], cat(block, "lat"), 1, c.binarize_decoder);
      if (b > 0) y = ops::add(t, y, prev);
      for (std::size_t r = 0; r < 4; ++r) y = ops::add(t, y, conv_bn(y, cat(block, numbered("res", r)), 1, c.binarize_decoder));
      mark(cat(block, "body"), y);

      std::shared_ptr<const std::vector<AttentionMaps>> maps;
      NodeRef beta{};
      if (c.attention) {
        const bool binary = c.binarize_decoder && !opt.bypass_binarizers;
        maps = maps_from(conv(y, cat(block, "proj"), 1, c.binarize_decoder), binary);
        beta = p(cat(block, "beta"));
      }
      const std::string up = cat(block, "up");
      const NodeRef alpha = ops::sigmoid(t, p(cat(up, "gate")));
      const NodeRef lambda = ops::sigmoid(t, p(cat(up, "merge")));
      std::vector<NodeRef> ys;
      for (std::size_t i = 0; i < c.branches; ++i) {
        NodeRef yi = conv_bn(y, cat(up, numbered("br", i) + ".conv1"), 1, c.binarize_decoder);
        if (c.attention) yi = ops::attention(t, yi, beta, maps);
        ys.push_back(yi);
      }
      std::vector<NodeRef> zs;
      for (std::size_t i = 0; i < c.branches; ++i) {
        const NodeRef mixed = c.branch_mixing ? ops::branch_mix<float>(t, alpha, ys, i, c.exclude_self) : ys[i];
        zs.push_back(conv_bn(ops::upsample(t, mixed, 2), cat(up, numbered("br", i) + ".conv2"), 1, c.binarize_decoder));
      }
      if (c.branch_mixing && c.remix_each_conv) {
        std::vector<NodeRef> mixed;
        for (std::size_t i = 0; i < c.branches; ++i) mixed.push_back(ops::branch_mix<float>(t, alpha, zs, i, c.exclude_self));
        zs = std::move(mixed);
      }
      prev = ops::weighted_sum<float>(t, lambda, zs);
      mark(block, prev);
    }
    NodeRef logits = ops::conv2d(t, prev, p("head.w"), ConvAttrs{1, 0, 0.0});
    logits = ops::channel_bias(t, logits, p("head.b"));
    mark("head", logits);
    return logits;
  }
};

}  // namespace

NodeRef Model::forward(Tape<float>& tape, NodeRef images, const ForwardOptions& opt, Trace* trace) {
  if (tape.params() != &params_) throw ContractError("tape is not bound to this model's parameters");
  const auto& x = tape.value(images);
  if (x.rank() != 4 || x.dim(1) != cfg_.channels || x.dim(2) != cfg_.height || x.dim(3) != cfg_.width) {
    throw ShapeError("model expects [N," + std::to_string(cfg_.channels) + "," + std::to_string(cfg_.height) + "," +
                     std::to_string(cfg_.width) + "], got " + shape_string(x.dims()));
  }
  Recorder r{*this, tape, opt, trace};
  return r.run(images);
}

FloatTensor Model::infer(const FloatTensor& image, bool bypass_binarizers) {
  if (image.rank() != 3) throw ShapeError("infer expects [C,H,W], got " + shape_string(image.dims()));
  Tape<float> tape(&params_);
  const NodeRef x = tape.input(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}));
  ForwardOptions opt;
  opt.bypass_binarizers = bypass_binarizers;
  opt.packed = true;
  const NodeRef logits = forward(tape, x, opt);
  const auto& v = tape.value(logits);
  return v.reshaped({v.dim(1), v.dim(2), v.dim(3)});
}

BranchParams Model::branch_params(std::size_t block) const {
  if (block >= 4) throw std::out_of_range("decoder block index out of range");
  const std::string up = cat(numbered("dec", block), "up");
  auto make = [&](const std::string& name) {
    BranchConv bc;
    bc.weights = binarize_weights(params_[cat(name, "w")].value);
    const auto& g = params_[cat(name, "bn.g")].value;
    const auto& b = params_[cat(name, "bn.b")].value;
    const auto& st = stats_.at(cat(name, "bn"));
    for (std::size_t c = 0; c < g.size(); ++c) {
      const auto [s, sh] = ops::fold_batch_norm<float>(g[c], b[c], st.mean[c], st.var[c], st.eps);
      bc.bn_scale.push_back(s);
      bc.bn_shift.push_back(sh);
    }
    bc.geom = ConvGeometry{1, 1, cfg_.pad_bit};
    return bc;
  };
  BranchParams bp;
  for (std::size_t i = 0; i < cfg_.branches; ++i) {
    bp.first.push_back(make(cat(up, numbered("br", i) + ".conv1")));
    bp.second.push_back(make(cat(up, numbered("br", i) + ".conv2")));
  }
  const auto& gate = params_[cat(up, "gate")].value;
  const auto& merge = params_[cat(up, "merge")].value;
  bp.gate_logits.assign(gate.data().begin(), gate.data().end());
  bp.merge_logits.assign(merge.data().begin(), merge.data().end());
  bp.mixing = cfg_.branch_mixing;
  bp.exclude_self = cfg_.exclude_self;
  bp.remix_each_conv = cfg_.remix_each_conv;
  return bp;
}

}  // namespace bnn
