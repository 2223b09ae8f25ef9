#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bnn/errors.hpp"
#include "bnn/metrics.hpp"
#include "bnn/rng.hpp"

using namespace bnn;

namespace {

using Labels = std::vector<std::int32_t>;

// F-measure swept over every i/255 threshold, recounted from scratch each time.
double brute_maxf(const std::vector<float>& p, const Labels& gt) {
  double best = 0.0;
  for (int i = 1; i <= 255; ++i) {
    const double th = i / 255.0;
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const bool on = p[k] >= th;
      tp += on && gt[k] == 1;
      fp += on && gt[k] == 0;
      fn += !on && gt[k] == 1;
    }
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0, rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f = prec + rec > 0 ? (1 + kFBetaSquared) * prec * rec / (kFBetaSquared * prec + rec) : 0.0;
    best = std::max(best, f);
  }
  return best;
}

}  // namespace

TEST_CASE("confusion matrix counts") {
  ConfusionMatrix cm(2);
  cm.update(Labels{0, 1, 0, 1}, Labels{0, 1, 1, 1});
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(1, 0) == 0);
  CHECK(cm.at(1, 1) == 2);
  CHECK(cm.total() == 4);

  const auto before = cm;
  cm.update(Labels{}, Labels{});
  CHECK(cm == before);

  ConfusionMatrix diag(3);
  diag.update(Labels{0, 1, 2, 2}, Labels{0, 1, 2, 2});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) CHECK(diag.at(i, j) == 0);

  CHECK_THROWS_AS(cm.update(Labels{0, 2}, Labels{0, 1}), DataError);
  CHECK_THROWS_AS(cm.update(Labels{0, -1}, Labels{0, 1}), DataError);
  CHECK_THROWS_AS(cm.update(Labels{0}, Labels{0, 1}), ShapeError);
  CHECK_THROWS_AS(cm.merge(diag), ShapeError);
}

TEST_CASE("mIoU") {
  ConfusionMatrix cm(2);
  cm.update(Labels{0, 1, 0, 1}, Labels{0, 1, 1, 1});
  const auto iou = cm.class_iou();
  CHECK(iou[0] == doctest::Approx(0.5));
  CHECK(iou[1] == doctest::Approx(2.0 / 3.0));
  CHECK(miou(cm) == doctest::Approx(0.5833333333).epsilon(1e-6));

  ConfusionMatrix perfect(2);
  perfect.update(Labels{0, 1, 1}, Labels{0, 1, 1});
  CHECK(miou(perfect) == 1.0);

  ConfusionMatrix disjoint(2);
  disjoint.update(Labels{1, 1, 0}, Labels{0, 0, 0});
  CHECK(disjoint.class_iou()[1] == 0.0);

  // Class 2 never appears: skipped from the mean.
  ConfusionMatrix absent(3);
  absent.update(Labels{0, 1}, Labels{0, 1});
  CHECK(absent.class_iou()[2] < 0.0);
  CHECK(miou(absent) == 1.0);

  CHECK_THROWS_AS(miou(ConfusionMatrix(2)), ContractError);
}

TEST_CASE("mIoU is invariant under relabeling and update order") {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 50 + rng.below(100);
    Labels gt(n), pred(n);
    for (auto& v : gt) v = static_cast<std::int32_t>(rng.below(3));
    for (auto& v : pred) v = static_cast<std::int32_t>(rng.below(3));
    const std::int32_t perm[3] = {2, 0, 1};
    Labels pg(n), pp(n);
    for (std::size_t i = 0; i < n; ++i) {
      pg[i] = perm[gt[i]];
      pp[i] = perm[pred[i]];
    }
    ConfusionMatrix a(3), b(3);
    a.update(gt, pred);
    b.update(pg, pp);
    CHECK(miou(a) == doctest::Approx(miou(b)).epsilon(1e-12));

    const std::size_t cut = n / 3;
    ConfusionMatrix first(3), second(3);
    first.update(std::span(gt).subspan(cut), std::span(pred).subspan(cut));
    first.update(std::span(gt).first(cut), std::span(pred).first(cut));
    second.update(std::span(gt).first(cut), std::span(pred).first(cut));
    ConfusionMatrix rest(3);
    rest.update(std::span(gt).subspan(cut), std::span(pred).subspan(cut));
    second.merge(rest);
    CHECK(first == a);
    CHECK(second == a);
  }
}

TEST_CASE("maxF") {
  CHECK(maxf(std::vector<float>{1, 0, 1, 0}, Labels{1, 0, 1, 0}) == doctest::Approx(1.0));
  CHECK(maxf(std::vector<float>{0, 1, 0, 1}, Labels{1, 0, 1, 0}) == 0.0);

  const std::vector<float> p{0.9f, 0.6f, 0.4f, 0.1f};
  const Labels gt{1, 1, 0, 0};
  CHECK(maxf(p, gt) == doctest::Approx(brute_maxf(p, gt)).epsilon(1e-12));
  CHECK(maxf(p, gt) == doctest::Approx(1.0));

  SplitMix64 rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<float> q(n);
    Labels g(n);
    for (auto& v : q) v = static_cast<float>(rng.uniform());
    for (auto& v : g) v = static_cast<std::int32_t>(rng.below(2));
    CHECK(maxf(q, g) == doctest::Approx(brute_maxf(q, g)).epsilon(1e-12));

    // Squaring is monotone; only pixels that stay on the same side of every grid threshold keep maxF fixed.
    std::vector<float> moved(q);
    for (auto& v : moved) {
      const float bucket = std::floor(v * 255.0f);
      const float lo = bucket / 255.0f, hi = (bucket + 1.0f) / 255.0f;
      const float t = (v - lo) / (hi - lo);
      const float nv = lo + (hi - lo) * t * t;
      v = std::clamp(nv, lo, std::nextafter(hi, 0.0f));
      if (lo <= 0.0f) v = 0.0f;
    }
    bool same_side = true;
    for (std::size_t k = 0; k < n && same_side; ++k)
      for (int i = 1; i <= 255; ++i) same_side = same_side && ((q[k] >= i / 255.0) == (moved[k] >= i / 255.0));
    if (same_side) CHECK(maxf(moved, g) == maxf(q, g));
  }

  CHECK_THROWS_AS(maxf(std::vector<float>{1.5f}, Labels{1}), std::invalid_argument);
  CHECK_THROWS_AS(maxf(std::vector<float>{0.5f}, Labels{1, 0}), ShapeError);
}
