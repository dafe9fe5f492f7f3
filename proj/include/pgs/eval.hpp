#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "pgs/geometry.hpp"
#include "pgs/pgscam.hpp"
#include "pgs/segnet.hpp"

namespace pgs {

// TP / (TP + FP + FN); empty when the class is absent from both vectors.
std::optional<double> iou(std::span<const int> pred, std::span<const int> gt, int class_id);

struct MetricsRecord {
  std::vector<std::optional<double>> per_class;
  double miou = 0.0;  // mean over defined classes
};

MetricsRecord segmentation_metrics(std::span<const int> pred, std::span<const int> gt,
                                   int class_count);

enum class DropMode { kHigh, kLow };

// Positions of the `count` highest (kHigh) or lowest (kLow) saliency values,
// ties broken toward the lower index. Returned ascending.
std::vector<std::size_t> select_drop_indices(std::span<const double> saliency, std::size_t count,
                                             DropMode mode);

struct DropStep {
  std::size_t removed_total = 0;
  std::optional<double> target_iou;
  double miou = 0.0;
};

struct DropReport {
  DropMode mode = DropMode::kHigh;
  int target_class = 0;
  std::size_t budget = 0;
  int steps = 0;
  bool recompute = true;
  bool truncated = false;  // the class (or budget) ran out before all steps finished
  std::vector<DropStep> records;                         // baseline first, then one row per step
  std::vector<std::vector<std::size_t>> removed_indices;  // per step, original cloud indices
};

// Iteratively removes the budget's worth of points ranked by the A8 upsampled
// heatmap for class_all(target_class), re-predicting after each removal and
// scoring IoU against the surviving ground truth. recompute=false keeps the
// first step's ranking for the whole run. Steps that would remove zero points
// are folded away, so at most min(steps, budget) removal rounds run.
DropReport point_drop_experiment(const PointCloud& cloud, const Checkpoint& ckpt, int target_class,
                                 DropMode mode, std::size_t budget, int steps,
                                 bool recompute = true);

struct PcaResult {
  std::vector<std::array<double, 2>> coords;          // M projections
  std::array<std::vector<double>, 2> components;      // unit k-vectors
  std::array<double, 2> explained_variance{0.0, 0.0};
  bool degenerate = false;  // zero-variance input: everything is zeros
};

// Top-2 principal components of the row-centered activation matrix via power
// iteration with deflation (tolerance 1e-10, at most 10000 iterations).
// Components are unit norm, mutually orthogonal, and sign-fixed so the
// largest-magnitude entry is positive.
PcaResult pca_embed(std::span<const double> activation, std::size_t rows, std::size_t cols);
PcaResult pca_embed(const Tensor& activation);

}  // namespace pgs
