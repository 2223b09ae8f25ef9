#include "bnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "bnn/errors.hpp"
#include "bnn/ops.hpp"
#include "bnn/rng.hpp"

namespace bnn {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate >= 0.0) || !(stage2_learning_rate >= 0.0)) throw ConfigError("learning rates must be >= 0");
  if (!(min_learning_rate_ratio >= 0.0 && min_learning_rate_ratio <= 1.0)) {
    throw ConfigError("min_learning_rate_ratio must be in [0, 1]");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("adam betas must be in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
  if (train_size == 0 && train_dir.empty()) throw ConfigError("train_size must be positive");
}

std::string format_epoch(const EpochLog& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "stage=%d epoch=%zu loss=%.6f val_miou=%.6f lr=%.6g", e.stage, e.epoch, e.loss, e.val_miou,
                e.learning_rate);
  return buf;
}

namespace {

// Batch of images [B,3,H,W] and labels with optional flip and shift.
struct Batch {
  FloatTensor images;
  std::vector<std::int32_t> labels;
};

Batch make_batch(const std::vector<Sample>& data, std::span<const std::size_t> idx, const TrainConfig& cfg, SplitMix64& rng) {
  const std::size_t h = data[0].image.dim(1), w = data[0].image.dim(2), b = idx.size();
  Batch out{FloatTensor::zeros({b, 3, h, w}), std::vector<std::int32_t>(b * h * w)};
  for (std::size_t n = 0; n < b; ++n) {
    const Sample& s = data[idx[n]];
    const bool flip = cfg.flip && rng.below(2) == 1;
    std::ptrdiff_t dy = 0, dx = 0;
    if (cfg.crop && cfg.crop_pad > 0) {
      const auto span = 2 * cfg.crop_pad + 1;
      dy = static_cast<std::ptrdiff_t>(rng.below(span)) - static_cast<std::ptrdiff_t>(cfg.crop_pad);
      dx = static_cast<std::ptrdiff_t>(rng.below(span)) - static_cast<std::ptrdiff_t>(cfg.crop_pad);
    }
    for (std::size_t y = 0; y < h; ++y) {
      const auto sy = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(y) + dy, 0, h - 1));
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t fx = flip ? w - 1 - x : x;
        const auto sx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(fx) + dx, 0, w - 1));
        for (std::size_t c = 0; c < 3; ++c) out.images[((n * 3 + c) * h + y) * w + x] = s.image[(c * h + sy) * w + sx];
        out.labels[(n * h + y) * w + x] = s.mask[sy * w + sx];
      }
    }
  }
  return out;
}

}  // namespace

Trainer::Trainer(Model& m, const TrainConfig& cfg)
    : m_(m), cfg_(cfg), adam_(AdamConfig{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon}) {
  cfg_.validate();
}

double Trainer::epoch(const std::vector<Sample>& data, double lr, bool bypass) {
  SplitMix64 rng = keyed_stream(cfg_.seed, epochs_done_++);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  adam_.set_learning_rate(lr);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    Batch batch = make_batch(data, std::span(order).subspan(start, end - start), cfg_, rng);
    Tape<float> tape(&m_.params());
    const NodeRef x = tape.input(std::move(batch.images));
    ForwardOptions opt;
    opt.training = true;
    opt.bypass_binarizers = bypass;
    const NodeRef logits = m_.forward(tape, x, opt);
    const NodeRef loss = ops::softmax_cross_entropy(tape, logits, std::make_shared<const std::vector<std::int32_t>>(std::move(batch.labels)));
    const double l = tape.value(loss)[0];
    if (!std::isfinite(l)) {
      throw DivergenceError("non-finite loss at batch " + std::to_string(batches) + " of epoch " + std::to_string(epochs_done_));
    }
    m_.params().zero_grad();
    tape.backward(loss);
    adam_.step(m_.params());
    total += l;
    ++batches;
  }
  return batches ? total / static_cast<double>(batches) : 0.0;
}

void Trainer::run_stage(int stage, std::size_t epochs, double lr, bool bypass, const std::vector<Sample>& train,
                        const std::vector<Sample>& val, std::vector<EpochLog>& log, std::ostream* out) {
  if (train.empty()) throw DataError("empty training set");
  adam_.reset();
  m_.params().reset_moments();
  const double floor = lr * cfg_.min_learning_rate_ratio;
  for (std::size_t e = 0; e < epochs; ++e) {
    const double phase = epochs > 1 ? static_cast<double>(e) / static_cast<double>(epochs - 1) : 0.0;
    const double rate = floor + (lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
    EpochLog entry;
    entry.stage = stage;
    entry.epoch = e + 1;
    entry.learning_rate = rate;
    try {
      entry.loss = epoch(train, rate, bypass);
      if (!val.empty()) entry.val_miou = evaluate(m_, val, bypass).miou;
    } catch (const NonFiniteError& err) {
      throw DivergenceError("stage " + std::to_string(stage) + " epoch " + std::to_string(e + 1) + ": " + err.what());
    }
    log.push_back(entry);
    if (out) *out << format_epoch(entry) << std::endl;
  }
}

EvalReport evaluate(Model& m, const std::vector<Sample>& data, bool bypass_binarizers) {
  const auto& c = m.config();
  EvalReport r;
  r.confusion = ConfusionMatrix(c.classes);
  std::vector<float> probs;
  std::vector<std::int32_t> truth;
  constexpr std::size_t kBatch = 10;
  for (std::size_t start = 0; start < data.size(); start += kBatch) {
    const std::size_t b = std::min(kBatch, data.size() - start);
    const std::size_t h = c.height, w = c.width, px = h * w;
    auto images = FloatTensor::zeros({b, 3, h, w});
    for (std::size_t n = 0; n < b; ++n) {
      const auto& img = data[start + n].image;
      if (img.dims() != Shape{3, h, w}) throw DataError("sample image " + shape_string(img.dims()) + " does not match the model");
      std::copy(img.raw(), img.raw() + img.size(), images.raw() + n * 3 * px);
    }
    Tape<float> tape(&m.params());
    ForwardOptions opt;
    opt.bypass_binarizers = bypass_binarizers;
    opt.packed = true;
    const auto& logits = tape.value(m.forward(tape, tape.input(std::move(images)), opt));
    for (std::size_t n = 0; n < b; ++n) {
      const auto& mask = data[start + n].mask;
      std::vector<std::int32_t> pred(px);
      for (std::size_t p = 0; p < px; ++p) {
        double mx = logits[(n * c.classes) * px + p];
        std::size_t arg = 0;
        for (std::size_t k = 1; k < c.classes; ++k) {
          const double v = logits[(n * c.classes + k) * px + p];
          if (v > mx) {
            mx = v;
            arg = k;
          }
        }
        double z = 0.0;
        for (std::size_t k = 0; k < c.classes; ++k) z += std::exp(logits[(n * c.classes + k) * px + p] - mx);
        // Foreground probability: everything but class 0.
        probs.push_back(static_cast<float>(1.0 - std::exp(logits[(n * c.classes) * px + p] - mx) / z));
        pred[p] = static_cast<std::int32_t>(arg);
        truth.push_back(mask[p] != 0 ? 1 : 0);
      }
      r.confusion.update(mask.data(), pred);
    }
  }
  if (data.empty()) return r;
  for (auto& p : probs) p = std::clamp(p, 0.0f, 1.0f);
  r.miou = miou(r.confusion);
  r.maxf = maxf(probs, truth);
  r.class_iou = r.confusion.class_iou();
  return r;
}

std::vector<Sample> load_or_generate(const std::string& dir, std::uint64_t seed, std::size_t n, std::size_t size,
                                     std::uint64_t first_index) {
  if (!dir.empty()) return read_dataset(dir);
  return gen_dataset(seed, n, size, first_index);
}

TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg, std::ostream* log) {
  cfg.validate();
  model_cfg.validate();
  if (model_cfg.height != model_cfg.width) throw ConfigError("synthetic data is square; height must equal width");
  const auto train_set = load_or_generate(cfg.train_dir, cfg.data_seed, cfg.train_size, model_cfg.height, 0);
  const auto val_set = load_or_generate(cfg.val_dir, cfg.data_seed, cfg.val_size, model_cfg.height, cfg.train_size);
  TrainResult result{Model(model_cfg), {}, {}};
  Trainer trainer(result.model, cfg);
  trainer.run_stage(1, cfg.stage1_epochs, cfg.learning_rate, true, train_set, val_set, result.log, log);
  trainer.run_stage(2, cfg.stage2_epochs, cfg.stage2_learning_rate, false, train_set, val_set, result.log, log);
  if (!val_set.empty()) result.val = evaluate(result.model, val_set, false);
  return result;
}

}  // namespace bnn
