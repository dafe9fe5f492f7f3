#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace pgs {

using Point3 = std::array<double, 3>;

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// N points in meters, optional per-point features (row-major N x feature_dim)
// and integer class labels in [0, class_count).
struct PointCloud {
  std::vector<Point3> coords;
  std::vector<double> features;
  std::size_t feature_dim = 0;
  std::vector<int> labels;
  int class_count = 0;

  std::size_t size() const { return coords.size(); }
  bool has_labels() const { return !labels.empty(); }
  bool has_features() const { return feature_dim > 0; }
  void validate() const;  // throws on any broken invariant
};

// Balanced median-split axis-aligned tree over an owned copy of the points.
// Queries are exact: results match exhaustive search index for index, with
// ties in distance broken toward the lower index.
class KdTree {
 public:
  explicit KdTree(std::span<const Point3> points, std::size_t leaf_size = 40);

  std::size_t size() const { return points_.size(); }
  std::size_t leaf_size() const { return leaf_size_; }

  // k nearest indices, ascending by (distance, index); requires k <= size()
  std::vector<std::size_t> knn(const Point3& q, std::size_t k) const;
  std::size_t nearest(const Point3& q) const;
  // all indices with distance <= r, ascending by index
  std::vector<std::size_t> radius(const Point3& q, double r) const;

 private:
  struct TreeNode {
    double box_min[3], box_max[3];
    std::size_t begin = 0, end = 0;  // leaf range into order_
    int left = -1, right = -1;
  };

  int build(std::size_t begin, std::size_t end);
  double box_distance_sq(const TreeNode& n, const Point3& q) const;

  std::vector<Point3> points_;
  std::vector<std::size_t> order_;
  std::vector<TreeNode> nodes_;
  std::size_t leaf_size_;
  int root_ = -1;
};

struct SubsampleResult {
  PointCloud cloud;                  // M voxel representatives
  std::vector<std::size_t> mapping;  // original index -> representative index
};

// One representative per occupied voxel (grid anchored at the origin,
// cell index = floor(coord / voxel)). The representative sits at the
// barycenter of its members, features are averaged, and the label is the
// majority vote (lowest class id on ties). Barycenters and feature means are
// accumulated in sorted value order, so the result is bit-identical under
// any permutation of the input points, up to representative ordering (which
// follows the lowest member index).
SubsampleResult grid_subsample(const PointCloud& cloud, double voxel);

// Synthetic labeled desk-scale scene. Classes: 0 ground plane, 1 car boxes,
// 2 pole cylinders, 3 vegetation ellipsoids, 4 building walls. Point counts
// per instance are exact, so the label histogram equals instances x points.
struct SceneConfig {
  std::uint64_t seed = 1;
  double extent = 10.0;  // scene half-width; ground spans [-extent, extent]^2
  double noise_sigma = 0.02;

  int min_cars = 1, max_cars = 3;
  int min_poles = 1, max_poles = 3;
  int min_vegetation = 1, max_vegetation = 3;
  int min_buildings = 1, max_buildings = 2;

  int ground_points = 900;
  int car_points = 220;
  int pole_points = 110;
  int vegetation_points = 240;
  int building_points = 420;

  void validate() const;
};

constexpr int kSceneClassCount = 5;
extern const char* const kSceneClassNames[kSceneClassCount];

struct SceneInfo {
  std::array<int, kSceneClassCount> instance_counts{};
};

PointCloud synth_scene(const SceneConfig& config, SceneInfo* info = nullptr);

// Connected components of the subset under the "distance <= link_radius"
// relation. Clusters are ordered by their lowest member index; members are
// ascending original indices.
std::vector<std::vector<std::size_t>> euclidean_cluster(const PointCloud& cloud,
                                                        std::span<const std::size_t> indices,
                                                        double link_radius);

// Sum in ascending value order: permutation-invariant and deterministic.
double stable_sum(std::span<const double> values);
inline double stable_mean(std::span<const double> values) {
  return values.empty() ? 0.0 : stable_sum(values) / static_cast<double>(values.size());
}

}  // namespace pgs
