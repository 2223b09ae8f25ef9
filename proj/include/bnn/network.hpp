#pragma once

// Encoder-decoder segmentation network. The encoder is a stem plus four
// residual stages that each halve the resolution; the decoder is four blocks of
// residual convs, attention and a multi-branch x2 upsample, fed by lateral
// connections from the encoder. Stem and classifier stay full precision.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bnn/autodiff.hpp"
#include "bnn/blocks.hpp"

namespace bnn {

struct ModelConfig {
  std::size_t channels = 3;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t classes = 2;
  std::size_t branches = 4;
  std::array<std::size_t, 4> widths{16, 32, 64, 128};
  std::size_t residual_units = 2;  // each unit holds two residual conv modules
  bool binarize_encoder = true;
  bool binarize_decoder = true;
  bool attention = true;
  double attention_threshold = 0.0;
  PadBit pad_bit = PadBit::Negative;
  bool branch_mixing = true;  // off: branches run independently until the merge
  bool exclude_self = false;
  bool remix_each_conv = false;
  bool ste_clip = false;
  std::uint64_t seed = 1;

  // Throws ConfigError.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class LayerKind : std::uint8_t { Conv, BatchNorm, Residual, Upsample, Merge, Attention, Gates, Pool };

const char* layer_kind_name(LayerKind k);

/// One row of the architecture table. Spatial sizes are per image; `copies`
/// counts parallel branches sharing the row.
struct LayerInfo {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  bool binary = false;
  std::size_t c_in = 0, c_out = 0, kh = 1, kw = 1, stride = 1;
  std::size_t h_in = 0, w_in = 0, h_out = 0, w_out = 0;
  std::size_t copies = 1;
  std::size_t weights = 0;     // per copy, binarizable conv weights
  std::size_t aux_params = 0;  // per copy: bias, norm affine, gates, beta
};

struct ForwardOptions {
  bool training = false;
  // Replace every binarizer by its full-precision counterpart (hardtanh activations, real weights).
  bool bypass_binarizers = false;
  // Evaluate binary convolutions with the packed XNOR/popcount kernel.
  bool packed = false;
};

using Trace = std::vector<std::pair<std::string, NodeRef>>;

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore<float>& params() { return params_; }
  const ParamStore<float>& params() const { return params_; }
  std::map<std::string, BatchNormStats>& norm_stats() { return stats_; }
  const std::map<std::string, BatchNormStats>& norm_stats() const { return stats_; }
  const std::vector<LayerInfo>& layers() const { return layers_; }

  // Architecture table as aligned text.
  std::string describe() const;

  /// Logits [N, classes, H, W] for a batch [N, 3, H, W] recorded on `tape`,
  /// which must use this model's parameter store.
  NodeRef forward(Tape<float>& tape, NodeRef images, const ForwardOptions& opt, Trace* trace = nullptr);

  // Inference on one image [3,H,W] with frozen statistics; logits [classes,H,W].
  FloatTensor infer(const FloatTensor& image, bool bypass_binarizers = false);

  // Inference-folded parameters of decoder block b's upsampling module.
  BranchParams branch_params(std::size_t block) const;

 private:
  struct Builder;

  ModelConfig cfg_;
  ParamStore<float> params_;
  std::map<std::string, BatchNormStats> stats_;
  std::vector<LayerInfo> layers_;
};

// Checkpoint container "BNNC": params, norm statistics and the config text.
std::vector<std::uint8_t> save_checkpoint(const Model& m);
Model load_checkpoint(std::span<const std::uint8_t> bytes);
// Loads into an existing model; the stored config must match its config.
void load_checkpoint_into(Model& m, std::span<const std::uint8_t> bytes);

}  // namespace bnn
