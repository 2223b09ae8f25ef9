#include "bnn/metrics.hpp"

#include <algorithm>
#include <array>
#include <string>

#include "bnn/errors.hpp"

namespace bnn {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw std::invalid_argument("confusion matrix needs at least one class");
}

void ConfusionMatrix::update(std::span<const std::int32_t> truth, std::span<const std::int32_t> pred) {
  if (truth.size() != pred.size()) {
    throw ShapeError("label maps differ in size: " + std::to_string(truth.size()) + " vs " + std::to_string(pred.size()));
  }
  const auto k = static_cast<std::int32_t>(k_);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= k || pred[i] < 0 || pred[i] >= k) {
      throw DataError("label out of range at pixel " + std::to_string(i) + ": truth " + std::to_string(truth[i]) +
                      ", prediction " + std::to_string(pred[i]));
    }
  }
  for (std::size_t i = 0; i < truth.size(); ++i) ++counts_[static_cast<std::size_t>(truth[i]) * k_ + static_cast<std::size_t>(pred[i])];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("cannot merge confusion matrices of different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::vector<double> ConfusionMatrix::class_iou() const {
  std::vector<double> iou(k_, -1.0);
  for (std::size_t c = 0; c < k_; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < k_; ++j) {
      row += at(c, j);
      col += at(j, c);
    }
    const std::uint64_t uni = row + col - at(c, c);
    if (uni > 0) iou[c] = static_cast<double>(at(c, c)) / static_cast<double>(uni);
  }
  return iou;
}

double miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ContractError("mIoU of an empty confusion matrix");
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : cm.class_iou()) {
    if (v < 0) continue;
    sum += v;
    ++n;
  }
  return sum / static_cast<double>(n);
}

double maxf(std::span<const float> probs, std::span<const std::int32_t> truth) {
  if (probs.size() != truth.size()) {
    throw ShapeError("maxf: " + std::to_string(probs.size()) + " probabilities for " + std::to_string(truth.size()) + " labels");
  }
  // bucket[i] = pixels whose largest passed threshold is i/255 (bucket 0: none).
  std::array<std::uint64_t, 256> pos{}, neg{};
  std::uint64_t positives = 0;
  for (std::size_t p = 0; p < probs.size(); ++p) {
    const double v = probs[p];
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("maxf: probability outside [0,1] at pixel " + std::to_string(p));
    int i = static_cast<int>(std::clamp(v * 255.0, 0.0, 255.0));
    while (i < 255 && v >= static_cast<double>(i + 1) / 255.0) ++i;
    while (i > 0 && v < static_cast<double>(i) / 255.0) --i;
    if (truth[p] != 0) {
      ++pos[i];
      ++positives;
    } else {
      ++neg[i];
    }
  }
  double best = 0.0;
  std::uint64_t tp = 0, fp = 0;
  for (int i = 255; i >= 1; --i) {
    tp += pos[i];
    fp += neg[i];
    if (tp == 0 || positives == 0) continue;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double f = (1.0 + kFBetaSquared) * precision * recall / (kFBetaSquared * precision + recall);
    best = std::max(best, f);
  }
  return best;
}

}  // namespace bnn
