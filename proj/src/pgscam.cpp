#include "pgs/pgscam.hpp"

#include <algorithm>

#include "pgs/common.hpp"

namespace pgs {

SubsetSpec SubsetSpec::single(std::size_t index) {
  SubsetSpec s;
  s.mode = Mode::kSingle;
  s.point_index = index;
  return s;
}

SubsetSpec SubsetSpec::class_all(int class_id) {
  SubsetSpec s;
  s.mode = Mode::kClassAll;
  s.class_id = class_id;
  return s;
}

SubsetSpec SubsetSpec::class_instance(int class_id, std::size_t ordinal, double link_radius) {
  SubsetSpec s;
  s.mode = Mode::kClassInstance;
  s.class_id = class_id;
  s.instance_ordinal = ordinal;
  s.link_radius = link_radius;
  return s;
}

SubsetSpec SubsetSpec::all_points() { return SubsetSpec{}; }

std::vector<std::size_t> select_subset(const PointCloud& cloud, std::span<const int> predictions,
                                       const SubsetSpec& spec) {
  const std::size_t n = cloud.size();

  if (spec.mode == SubsetSpec::Mode::kAllPoints) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  if (spec.mode == SubsetSpec::Mode::kSingle) {
    check(spec.point_index < n,
          "subset point index " + std::to_string(spec.point_index) + " out of range [0, " +
              std::to_string(n) + ")");
    return {spec.point_index};
  }

  std::span<const int> source = predictions;
  if (spec.use_ground_truth) {
    check(cloud.has_labels(), "subset resolution against ground truth requires labels");
    source = cloud.labels;
  }
  check(source.size() == n, "subset resolution needs one class id per point");

  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < n; ++i)
    if (source[i] == spec.class_id) members.push_back(i);
  check(!members.empty(),
        "subset is empty: no points of class " + std::to_string(spec.class_id));

  if (spec.mode == SubsetSpec::Mode::kClassAll) return members;

  const auto clusters = euclidean_cluster(cloud, members, spec.link_radius);
  check(spec.instance_ordinal < clusters.size(),
        "instance ordinal " + std::to_string(spec.instance_ordinal) + " out of range: class " +
            std::to_string(spec.class_id) + " has " + std::to_string(clusters.size()) +
            " instances");
  return clusters[spec.instance_ordinal];
}

Tensor subset_objective(const Tensor& logits, std::span<const std::size_t> subset, int class_id) {
  check(!subset.empty(), "subset objective needs a non-empty subset");
  Graph* g = logits.graph();
  check(g != nullptr, "subset objective needs logits on a live graph");
  const std::size_t c = logits.cols();
  check(class_id >= 0 && static_cast<std::size_t>(class_id) < c,
        "target class " + std::to_string(class_id) + " out of range [0, " + std::to_string(c) + ")");

  std::vector<double> onehot(c, 0.0);
  onehot[static_cast<std::size_t>(class_id)] = 1.0;
  const Tensor picked = g->gather_rows(logits, subset);
  const Tensor column = g->matmul(picked, g->input({c, 1}, std::move(onehot)));
  return g->sum(column);
}

GradientInfluence gradient_influence(const LayerTap& tap, const Tensor& objective, Sign sign,
                                     Aggregation aggregation) {
  check(objective.on_graph() && objective.size() == 1, "objective must be a scalar on a graph");
  check(tap.activation.graph() == objective.graph(), "tap and objective live on different graphs");
  check(objective.graph()->backward_runs() > 0,
        "gradient influence requested before backward populated the tap gradient");

  const std::size_t m = tap.activation.rows();
  const std::size_t k = tap.activation.cols();
  const auto grad = tap.activation.grad();

  GradientInfluence out;
  out.layer = tap.name;
  out.values.assign(k, 0.0);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t ch = 0; ch < k; ++ch) out.values[ch] += grad[j * k + ch];
  if (aggregation == Aggregation::kMean)
    for (double& v : out.values) v /= static_cast<double>(m);
  if (sign == Sign::kCounterfactual)
    for (double& v : out.values) v = -v;
  return out;
}

SaliencyMap form_heatmap(const GradientInfluence& influence, const LayerTap& tap, int target_class,
                         Sign sign) {
  const std::size_t m = tap.activation.rows();
  const std::size_t k = tap.activation.cols();
  check(influence.values.size() == k, "influence length " + std::to_string(influence.values.size()) +
                                          " does not match tap channel count " + std::to_string(k));

  SaliencyMap map;
  map.layer = tap.name;
  map.target_class = target_class;
  map.sign = sign;
  map.raw.resize(m);
  const auto act = tap.activation.values();
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t ch = 0; ch < k; ++ch) s += influence.values[ch] * act[j * k + ch];
    map.raw[j] = s > 0.0 ? s : 0.0;
  }

  const auto [lo_it, hi_it] = std::minmax_element(map.raw.begin(), map.raw.end());
  const double lo = *lo_it, hi = *hi_it;
  map.normalized.assign(m, 0.0);
  if (hi > lo)
    for (std::size_t j = 0; j < m; ++j) map.normalized[j] = (map.raw[j] - lo) / (hi - lo);
  return map;
}

SaliencyMap kdtree_upsample(const SaliencyMap& map, std::span<const Point3> tap_coords,
                            std::span<const Point3> full_coords) {
  check(map.normalized.size() == tap_coords.size(),
        "saliency resolution " + std::to_string(map.normalized.size()) +
            " does not match tap coordinate count " + std::to_string(tap_coords.size()));

  SaliencyMap out = map;
  out.upsampled.resize(full_coords.size());
  out.upsampled_raw.resize(full_coords.size());

  const bool identical = tap_coords.size() == full_coords.size() &&
                         std::equal(tap_coords.begin(), tap_coords.end(), full_coords.begin());
  if (identical) {
    out.upsampled = map.normalized;
    out.upsampled_raw = map.raw;
    return out;
  }

  const KdTree tree(tap_coords, 40);
  for (std::size_t i = 0; i < full_coords.size(); ++i) {
    const std::size_t j = tree.nearest(full_coords[i]);
    out.upsampled[i] = map.normalized[j];
    out.upsampled_raw[i] = map.raw[j];
  }
  return out;
}

std::vector<SaliencyMap> explain(const PointCloud& cloud, const Checkpoint& ckpt,
                                 const SaliencyRequest& request, const SceneGeometry* geometry) {
  check(!request.layers.empty(), "explain: no layers requested");
  const auto names = ckpt.spec.tap_names();
  for (const auto& l : request.layers)
    check(std::find(names.begin(), names.end(), l) != names.end(), "unknown layer name: " + l);
  check(request.target_class >= 0 && request.target_class < ckpt.spec.class_count,
        "target class " + std::to_string(request.target_class) + " out of range [0, " +
            std::to_string(ckpt.spec.class_count) + ")");

  SceneGeometry local;
  if (!geometry) {
    local = build_scene_geometry(cloud, ckpt.spec);
    geometry = &local;
  }

  ForwardResult fwd = forward(cloud, ckpt, geometry);
  const std::vector<int> predictions = argmax_rows(fwd.logits);
  const std::vector<std::size_t> subset = select_subset(cloud, predictions, request.subset);
  const Tensor objective = subset_objective(fwd.logits, subset, request.target_class);
  fwd.graph->backward(objective);

  std::vector<SaliencyMap> maps;
  for (const auto& layer : request.layers) {
    const auto tap_it = std::find_if(fwd.taps.begin(), fwd.taps.end(),
                                     [&](const LayerTap& t) { return t.name == layer; });
    check(tap_it != fwd.taps.end(), "tap missing from forward result: " + layer);
    const GradientInfluence g =
        gradient_influence(*tap_it, objective, request.sign, request.aggregation);
    SaliencyMap map = form_heatmap(g, *tap_it, request.target_class, request.sign);
    maps.push_back(kdtree_upsample(map, tap_it->coords, cloud.coords));
  }
  return maps;
}

}  // namespace pgs
