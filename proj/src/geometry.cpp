#include "pgs/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "pgs/common.hpp"
#include "pgs/rng.hpp"

namespace pgs {

const char* const kSceneClassNames[kSceneClassCount] = {"ground", "car", "pole", "vegetation",
                                                        "building"};

void PointCloud::validate() const {
  check(!coords.empty(), "point cloud must contain at least one point");
  for (const auto& p : coords)
    for (double v : p) check(std::isfinite(v), "point cloud coordinates must be finite");
  if (feature_dim > 0)
    check(features.size() == coords.size() * feature_dim,
          "feature rows do not match point count");
  else
    check(features.empty(), "features present but feature_dim == 0");
  if (!labels.empty()) {
    check(labels.size() == coords.size(), "label rows do not match point count");
    for (int l : labels)
      check(l >= 0 && l < class_count,
            "label " + std::to_string(l) + " outside [0, " + std::to_string(class_count) + ")");
  }
}

double stable_sum(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

// ---------------------------------------------------------------------------
// KdTree

KdTree::KdTree(std::span<const Point3> points, std::size_t leaf_size)
    : points_(points.begin(), points.end()), leaf_size_(leaf_size) {
  check(!points_.empty(), "kdtree: empty input");
  check(leaf_size_ >= 1, "kdtree: leaf_size must be positive");
  order_.resize(points_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(2 * points_.size() / leaf_size_ + 2);
  root_ = build(0, points_.size());
}

int KdTree::build(std::size_t begin, std::size_t end) {
  TreeNode node;
  for (int a = 0; a < 3; ++a) {
    node.box_min[a] = std::numeric_limits<double>::infinity();
    node.box_max[a] = -std::numeric_limits<double>::infinity();
  }
  for (std::size_t i = begin; i < end; ++i)
    for (int a = 0; a < 3; ++a) {
      node.box_min[a] = std::min(node.box_min[a], points_[order_[i]][a]);
      node.box_max[a] = std::max(node.box_max[a], points_[order_[i]][a]);
    }

  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= leaf_size_) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }

  int axis = 0;
  double spread = -1.0;
  for (int a = 0; a < 3; ++a) {
    const double s = node.box_max[a] - node.box_min[a];
    if (s > spread) {
      spread = s;
      axis = a;
    }
  }
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) {
                     if (points_[a][axis] != points_[b][axis]) return points_[a][axis] < points_[b][axis];
                     return a < b;  // deterministic layout under coordinate ties
                   });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

double KdTree::box_distance_sq(const TreeNode& n, const Point3& q) const {
  double d = 0.0;
  for (int a = 0; a < 3; ++a) {
    double e = 0.0;
    if (q[a] < n.box_min[a]) e = n.box_min[a] - q[a];
    else if (q[a] > n.box_max[a]) e = q[a] - n.box_max[a];
    d += e * e;
  }
  return d;
}

namespace {

struct Cand {
  double d2;
  std::size_t idx;
  // true when a is a better (closer, lower-index) candidate than b
  static bool better(const Cand& a, const Cand& b) {
    if (a.d2 != b.d2) return a.d2 < b.d2;
    return a.idx < b.idx;
  }
};

// less-than for a max-heap keeping the worst candidate on top
inline bool heap_less(const Cand& a, const Cand& b) { return Cand::better(a, b); }

}  // namespace

std::vector<std::size_t> KdTree::knn(const Point3& q, std::size_t k) const {
  check(k >= 1, "knn: k must be positive");
  check(k <= points_.size(), "knn: k = " + std::to_string(k) + " exceeds point count " +
                                 std::to_string(points_.size()));

  std::vector<Cand> heap;
  heap.reserve(k);

  // iterative traversal, nearer child first; strict > keeps boundary ties exact
  std::vector<int> stack{root_};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const TreeNode& n = nodes_[id];
    if (heap.size() == k && box_distance_sq(n, q) > heap.front().d2) continue;
    if (n.left < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t p = order_[i];
        const Cand c{squared_distance(points_[p], q), p};
        if (heap.size() < k) {
          heap.push_back(c);
          std::push_heap(heap.begin(), heap.end(), heap_less);
        } else if (Cand::better(c, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), heap_less);
          heap.back() = c;
          std::push_heap(heap.begin(), heap.end(), heap_less);
        }
      }
      continue;
    }
    const double dl = box_distance_sq(nodes_[n.left], q);
    const double dr = box_distance_sq(nodes_[n.right], q);
    if (dl <= dr) {  // push farther first so the nearer child is visited next
      stack.push_back(n.right);
      stack.push_back(n.left);
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }

  std::sort(heap.begin(), heap.end(), Cand::better);
  std::vector<std::size_t> out(heap.size());
  for (std::size_t i = 0; i < heap.size(); ++i) out[i] = heap[i].idx;
  return out;
}

std::size_t KdTree::nearest(const Point3& q) const { return knn(q, 1)[0]; }

std::vector<std::size_t> KdTree::radius(const Point3& q, double r) const {
  check(r >= 0.0, "radius: negative radius");
  const double r2 = r * r;
  std::vector<std::size_t> out;
  std::vector<int> stack{root_};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const TreeNode& n = nodes_[id];
    if (box_distance_sq(n, q) > r2) continue;
    if (n.left < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t p = order_[i];
        if (squared_distance(points_[p], q) <= r2) out.push_back(p);
      }
      continue;
    }
    stack.push_back(n.left);
    stack.push_back(n.right);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// grid_subsample

namespace {

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::uint64_t v : {static_cast<std::uint64_t>(k.x), static_cast<std::uint64_t>(k.y),
                            static_cast<std::uint64_t>(k.z)}) {
      h ^= v;
      h *= 0x100000001b3ull;
    }
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

SubsampleResult grid_subsample(const PointCloud& cloud, double voxel) {
  check(voxel > 0.0, "grid_subsample: voxel size must be positive");
  const std::size_t n = cloud.size();
  check(n > 0, "grid_subsample: empty cloud");

  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> slot;
  slot.reserve(n * 2);
  std::vector<std::vector<std::size_t>> members;
  SubsampleResult out;
  out.mapping.resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    const VoxelKey key{static_cast<std::int64_t>(std::floor(cloud.coords[i][0] / voxel)),
                       static_cast<std::int64_t>(std::floor(cloud.coords[i][1] / voxel)),
                       static_cast<std::int64_t>(std::floor(cloud.coords[i][2] / voxel))};
    auto [it, inserted] = slot.try_emplace(key, members.size());
    if (inserted) members.emplace_back();
    members[it->second].push_back(i);
    out.mapping[i] = it->second;
  }

  const std::size_t m = members.size();
  out.cloud.coords.resize(m);
  out.cloud.feature_dim = cloud.feature_dim;
  if (cloud.has_features()) out.cloud.features.resize(m * cloud.feature_dim);
  if (cloud.has_labels()) {
    out.cloud.labels.resize(m);
    out.cloud.class_count = cloud.class_count;
  }

  std::vector<double> column;
  for (std::size_t r = 0; r < m; ++r) {
    const auto& mem = members[r];
    for (int a = 0; a < 3; ++a) {
      column.clear();
      for (std::size_t i : mem) column.push_back(cloud.coords[i][a]);
      out.cloud.coords[r][a] = stable_mean(column);
    }
    for (std::size_t f = 0; f < cloud.feature_dim; ++f) {
      column.clear();
      for (std::size_t i : mem) column.push_back(cloud.features[i * cloud.feature_dim + f]);
      out.cloud.features[r * cloud.feature_dim + f] = stable_mean(column);
    }
    if (cloud.has_labels()) {
      std::vector<int> votes(static_cast<std::size_t>(std::max(cloud.class_count, 1)), 0);
      for (std::size_t i : mem) ++votes[static_cast<std::size_t>(cloud.labels[i])];
      int best = 0;
      for (int c = 1; c < cloud.class_count; ++c)
        if (votes[static_cast<std::size_t>(c)] > votes[static_cast<std::size_t>(best)]) best = c;
      out.cloud.labels[r] = best;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// synth_scene

namespace {

struct Placement {
  double x, y, clearance;
};

// resample until the new center keeps clearance to everything placed so far
Placement place(Rng& rng, std::vector<Placement>& placed, double lo, double hi, double clearance) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    const Placement p{rng.uniform(lo, hi), rng.uniform(lo, hi), clearance};
    bool ok = true;
    for (const auto& q : placed) {
      const double dx = p.x - q.x, dy = p.y - q.y;
      const double need = p.clearance + q.clearance;
      if (dx * dx + dy * dy < need * need) {
        ok = false;
        break;
      }
    }
    if (ok) {
      placed.push_back(p);
      return p;
    }
  }
  const Placement p{rng.uniform(lo, hi), rng.uniform(lo, hi), clearance};
  placed.push_back(p);  // crowded scene: accept the overlap
  return p;
}

void append_point(PointCloud& cloud, Rng& rng, double sigma, double x, double y, double z, int label) {
  cloud.coords.push_back({x + sigma * rng.normal(), y + sigma * rng.normal(), z + sigma * rng.normal()});
  cloud.labels.push_back(label);
}

}  // namespace

void SceneConfig::validate() const {
  check(extent > 0.0, "scene extent must be positive");
  check(noise_sigma >= 0.0, "noise sigma must be non-negative");
  const int mins[] = {min_cars, min_poles, min_vegetation, min_buildings};
  const int maxs[] = {max_cars, max_poles, max_vegetation, max_buildings};
  for (int i = 0; i < 4; ++i) {
    check(mins[i] >= 1, "instance count minimum must be at least 1");
    check(maxs[i] >= mins[i], "instance count range is empty");
  }
  const int pts[] = {ground_points, car_points, pole_points, vegetation_points, building_points};
  for (int p : pts) check(p >= 1, "per-instance point count must be positive");
}

PointCloud synth_scene(const SceneConfig& config, SceneInfo* info) {
  config.validate();
  Rng rng(config.seed);
  const double e = config.extent;

  PointCloud cloud;
  cloud.class_count = kSceneClassCount;
  SceneInfo local;
  std::vector<Placement> placed;

  // ground: z = 0 plane over the whole extent
  local.instance_counts[0] = 1;
  for (int i = 0; i < config.ground_points; ++i)
    append_point(cloud, rng, config.noise_sigma, rng.uniform(-e, e), rng.uniform(-e, e), 0.0, 0);

  // cars: 4 x 2 x 1.5 m boxes resting on the ground, axis-aligned either way
  const int n_cars = rng.uniform_int(config.min_cars, config.max_cars);
  local.instance_counts[1] = n_cars;
  for (int c = 0; c < n_cars; ++c) {
    const Placement p = place(rng, placed, -e + 3.0, e - 3.0, 2.4);
    const bool swap = rng.below(2) == 1;
    const double hx = swap ? 1.0 : 2.0, hy = swap ? 2.0 : 1.0;
    for (int i = 0; i < config.car_points; ++i)
      append_point(cloud, rng, config.noise_sigma, p.x + rng.uniform(-hx, hx),
                   p.y + rng.uniform(-hy, hy), rng.uniform(0.0, 1.5), 1);
  }

  // poles: thin vertical cylinders, radius 0.15 m, height 3-5 m
  const int n_poles = rng.uniform_int(config.min_poles, config.max_poles);
  local.instance_counts[2] = n_poles;
  for (int c = 0; c < n_poles; ++c) {
    const Placement p = place(rng, placed, -e + 1.0, e - 1.0, 1.0);
    const double h = rng.uniform(3.0, 5.0);
    const double r = 0.15;
    for (int i = 0; i < config.pole_points; ++i) {
      double dx, dy;
      do {
        dx = rng.uniform(-r, r);
        dy = rng.uniform(-r, r);
      } while (dx * dx + dy * dy > r * r);
      append_point(cloud, rng, config.noise_sigma, p.x + dx, p.y + dy, rng.uniform(0.0, h), 2);
    }
  }

  // vegetation: ellipsoid crowns floating above the ground
  const int n_veg = rng.uniform_int(config.min_vegetation, config.max_vegetation);
  local.instance_counts[3] = n_veg;
  for (int c = 0; c < n_veg; ++c) {
    const Placement p = place(rng, placed, -e + 2.0, e - 2.0, 2.0);
    const double ax = rng.uniform(1.0, 1.8), ay = rng.uniform(1.0, 1.8), az = rng.uniform(1.0, 1.6);
    const double zc = az + rng.uniform(0.4, 1.2);
    for (int i = 0; i < config.vegetation_points; ++i) {
      double u, v, w;
      do {
        u = rng.uniform(-1.0, 1.0);
        v = rng.uniform(-1.0, 1.0);
        w = rng.uniform(-1.0, 1.0);
      } while (u * u + v * v + w * w > 1.0);
      append_point(cloud, rng, config.noise_sigma, p.x + ax * u, p.y + ay * v, zc + az * w, 3);
    }
  }

  // buildings: long thin vertical walls, 5-8 m tall
  const int n_bld = rng.uniform_int(config.min_buildings, config.max_buildings);
  local.instance_counts[4] = n_bld;
  for (int c = 0; c < n_bld; ++c) {
    const Placement p = place(rng, placed, -e + 5.0, e - 5.0, 5.0);
    const bool swap = rng.below(2) == 1;
    const double len = rng.uniform(6.0, 9.0), thick = 0.3;
    const double hx = swap ? thick / 2 : len / 2, hy = swap ? len / 2 : thick / 2;
    const double h = rng.uniform(5.0, 8.0);
    for (int i = 0; i < config.building_points; ++i)
      append_point(cloud, rng, config.noise_sigma, p.x + rng.uniform(-hx, hx),
                   p.y + rng.uniform(-hy, hy), rng.uniform(0.0, h), 4);
  }

  if (info) *info = local;
  cloud.validate();
  return cloud;
}

// ---------------------------------------------------------------------------
// euclidean_cluster

std::vector<std::vector<std::size_t>> euclidean_cluster(const PointCloud& cloud,
                                                        std::span<const std::size_t> indices,
                                                        double link_radius) {
  check(link_radius > 0.0, "euclidean_cluster: link_radius must be positive");
  if (indices.empty()) return {};
  for (std::size_t i : indices)
    check(i < cloud.size(), "euclidean_cluster: index " + std::to_string(i) + " out of range");

  std::vector<Point3> pts(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) pts[i] = cloud.coords[indices[i]];
  const KdTree tree(pts);

  std::vector<std::vector<std::size_t>> clusters;
  std::vector<bool> visited(indices.size(), false);
  for (std::size_t seed = 0; seed < indices.size(); ++seed) {
    if (visited[seed]) continue;
    std::vector<std::size_t> frontier{seed};
    visited[seed] = true;
    std::vector<std::size_t> local{seed};
    while (!frontier.empty()) {
      const std::size_t cur = frontier.back();
      frontier.pop_back();
      for (std::size_t nb : tree.radius(pts[cur], link_radius)) {
        if (!visited[nb]) {
          visited[nb] = true;
          frontier.push_back(nb);
          local.push_back(nb);
        }
      }
    }
    std::vector<std::size_t> original(local.size());
    for (std::size_t i = 0; i < local.size(); ++i) original[i] = indices[local[i]];
    std::sort(original.begin(), original.end());
    clusters.push_back(std::move(original));
  }
  std::sort(clusters.begin(), clusters.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return clusters;
}

}  // namespace pgs
