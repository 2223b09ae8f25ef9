#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace bnn {

/// counts[i * k + j]: pixels of true class i predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  // Throws DataError on labels outside [0, k) and ShapeError on length mismatch.
  void update(std::span<const std::int32_t> truth, std::span<const std::int32_t> pred);
  void merge(const ConfusionMatrix& other);

  std::size_t classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
  std::uint64_t total() const;

  // IoU per class; classes whose union is empty are reported as negative.
  std::vector<double> class_iou() const;
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

// Mean IoU over classes with a non-empty union. Throws ContractError when nothing was accumulated.
double miou(const ConfusionMatrix& cm);

inline constexpr double kFBetaSquared = 0.3;

/// Best F-measure over the thresholds i/255, i = 1..255, predicting
/// foreground where prob >= threshold. 0/0 precision or recall counts as F = 0.
double maxf(std::span<const float> probs, std::span<const std::int32_t> truth);

}  // namespace bnn
