#pragma once

#include <span>
#include <string>
#include <vector>

#include "pgs/geometry.hpp"
#include "pgs/segnet.hpp"
#include "pgs/tensor.hpp"

namespace pgs {

// Which points form the explained subset P'. Class modes resolve against
// predicted labels by default; set use_ground_truth for analysis runs.
struct SubsetSpec {
  enum class Mode { kSingle, kClassAll, kClassInstance, kAllPoints };
  Mode mode = Mode::kAllPoints;
  std::size_t point_index = 0;       // kSingle
  int class_id = 0;                  // class modes
  std::size_t instance_ordinal = 0;  // kClassInstance
  double link_radius = 0.5;          // kClassInstance clustering
  bool use_ground_truth = false;

  static SubsetSpec single(std::size_t index);
  static SubsetSpec class_all(int class_id);
  static SubsetSpec class_instance(int class_id, std::size_t ordinal, double link_radius = 0.5);
  static SubsetSpec all_points();
};

std::vector<std::size_t> select_subset(const PointCloud& cloud, std::span<const int> predictions,
                                       const SubsetSpec& spec);

// L = sum of the class-c logit over the subset, built on the logits' live
// graph so backward materializes dL/dA for every tap.
Tensor subset_objective(const Tensor& logits, std::span<const std::size_t> subset, int class_id);

enum class Sign { kPositive, kCounterfactual };
enum class Aggregation { kSum, kMean };

struct GradientInfluence {
  std::string layer;
  std::vector<double> values;  // length = tap channel count
};

// Per-channel aggregation of the tap's gradient matrix: column sums, divided
// by the tap's point count for mean mode, negated for the counterfactual
// sign. Requires that backward already ran on the objective's graph.
GradientInfluence gradient_influence(const LayerTap& tap, const Tensor& objective, Sign sign,
                                     Aggregation aggregation);

struct SaliencyMap {
  std::string layer;
  int target_class = 0;
  Sign sign = Sign::kPositive;
  std::vector<double> raw;            // M, post-ReLU activation-influence products
  std::vector<double> normalized;     // M, min-max scaled into [0,1]; all zeros when raw is constant
  std::vector<double> upsampled;      // N normalized values after 1-NN upsampling (empty until upsampled)
  std::vector<double> upsampled_raw;  // raw companions of `upsampled`, kept for exports
};

// raw_j = relu(sum_k G_k * A_jk); normalized = (raw - min) / (max - min),
// all zeros when max == min.
SaliencyMap form_heatmap(const GradientInfluence& influence, const LayerTap& tap, int target_class,
                         Sign sign);

// Every full-resolution point takes the value of its nearest tap point
// (KdTree over the tap coordinates, leaf size 40). Identical coordinate sets
// short-circuit to a copy.
SaliencyMap kdtree_upsample(const SaliencyMap& map, std::span<const Point3> tap_coords,
                            std::span<const Point3> full_coords);

struct SaliencyRequest {
  int target_class = 0;
  SubsetSpec subset;
  std::vector<std::string> layers;  // tap names, e.g. {"A5", "A8"}
  Sign sign = Sign::kPositive;
  Aggregation aggregation = Aggregation::kSum;
};

// One forward pass, one backward pass on the subset objective, then
// influence -> heatmap -> upsample per requested tap.
std::vector<SaliencyMap> explain(const PointCloud& cloud, const Checkpoint& ckpt,
                                 const SaliencyRequest& request,
                                 const SceneGeometry* geometry = nullptr);

}  // namespace pgs
