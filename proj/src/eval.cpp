#include "pgs/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pgs/common.hpp"
#include "pgs/rng.hpp"

namespace pgs {

std::optional<double> iou(std::span<const int> pred, std::span<const int> gt, int class_id) {
  check(pred.size() == gt.size(), "iou: prediction length " + std::to_string(pred.size()) +
                                      " does not match ground truth length " +
                                      std::to_string(gt.size()));
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == class_id, g = gt[i] == class_id;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp + fp + fn == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
}

MetricsRecord segmentation_metrics(std::span<const int> pred, std::span<const int> gt,
                                   int class_count) {
  MetricsRecord rec;
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < class_count; ++c) {
    rec.per_class.push_back(iou(pred, gt, c));
    if (rec.per_class.back()) {
      sum += *rec.per_class.back();
      ++defined;
    }
  }
  rec.miou = defined ? sum / defined : 0.0;
  return rec;
}

std::vector<std::size_t> select_drop_indices(std::span<const double> saliency, std::size_t count,
                                             DropMode mode) {
  check(count <= saliency.size(), "drop count exceeds point count");
  std::vector<std::size_t> order(saliency.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (saliency[a] != saliency[b])
      return mode == DropMode::kHigh ? saliency[a] > saliency[b] : saliency[a] < saliency[b];
    return a < b;
  });
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

PointCloud subcloud(const PointCloud& cloud, std::span<const std::size_t> keep) {
  PointCloud out;
  out.feature_dim = cloud.feature_dim;
  out.class_count = cloud.class_count;
  for (std::size_t i : keep) {
    out.coords.push_back(cloud.coords[i]);
    if (cloud.has_labels()) out.labels.push_back(cloud.labels[i]);
    for (std::size_t f = 0; f < cloud.feature_dim; ++f)
      out.features.push_back(cloud.features[i * cloud.feature_dim + f]);
  }
  return out;
}

}  // namespace

DropReport point_drop_experiment(const PointCloud& cloud, const Checkpoint& ckpt, int target_class,
                                 DropMode mode, std::size_t budget, int steps, bool recompute) {
  check(cloud.has_labels(), "point drop needs ground-truth labels");
  check(budget < cloud.size(), "budget must leave at least one point");
  check(steps >= 1, "at least one step required");
  check(target_class >= 0 && target_class < ckpt.spec.class_count, "target class out of range");

  DropReport report;
  report.mode = mode;
  report.target_class = target_class;
  report.budget = budget;
  report.recompute = recompute;

  const std::string final_tap = "A" + std::to_string(ckpt.spec.tap_count());
  SaliencyRequest request;
  request.target_class = target_class;
  request.subset = SubsetSpec::class_all(target_class);
  request.layers = {final_tap};

  std::vector<std::size_t> survivors(cloud.size());
  std::iota(survivors.begin(), survivors.end(), std::size_t{0});

  std::vector<int> last_pred;
  auto record = [&](const PointCloud& current, std::size_t removed) {
    last_pred = predict(current, ckpt);
    const MetricsRecord metrics =
        segmentation_metrics(last_pred, current.labels, ckpt.spec.class_count);
    report.records.push_back(
        {removed, metrics.per_class[static_cast<std::size_t>(target_class)], metrics.miou});
  };

  PointCloud current = cloud;
  record(current, 0);
  if (budget == 0) return report;

  const int rounds = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(steps), budget));
  report.steps = rounds;

  std::vector<double> frozen_ranking;  // original-index aligned, recompute=false path
  if (!recompute) {
    const auto maps = explain(cloud, ckpt, request);
    frozen_ranking = maps.front().upsampled;
  }

  for (int r = 0; r < rounds; ++r) {
    const std::size_t upto = budget * static_cast<std::size_t>(r + 1) / static_cast<std::size_t>(rounds);
    const std::size_t done = budget * static_cast<std::size_t>(r) / static_cast<std::size_t>(rounds);
    const std::size_t chunk = upto - done;

    std::vector<double> saliency(survivors.size());
    if (recompute) {
      // last_pred holds predictions on `current` from the previous record()
      const auto& source = request.subset.use_ground_truth ? current.labels : last_pred;
      if (std::count(source.begin(), source.end(), target_class) == 0) {
        report.truncated = true;  // no target points left to explain
        break;
      }
      const auto maps = explain(current, ckpt, request);
      saliency = maps.front().upsampled;
    } else {
      for (std::size_t i = 0; i < survivors.size(); ++i) saliency[i] = frozen_ranking[survivors[i]];
    }

    const auto drop_local = select_drop_indices(saliency, chunk, mode);
    std::vector<std::size_t> removed_orig;
    removed_orig.reserve(drop_local.size());
    for (std::size_t p : drop_local) removed_orig.push_back(survivors[p]);
    report.removed_indices.push_back(removed_orig);

    std::vector<std::size_t> next;
    next.reserve(survivors.size() - drop_local.size());
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < survivors.size(); ++i) {
      if (cursor < drop_local.size() && drop_local[cursor] == i) {
        ++cursor;
        continue;
      }
      next.push_back(survivors[i]);
    }
    survivors = std::move(next);
    current = subcloud(cloud, survivors);
    record(current, cloud.size() - survivors.size());
  }
  return report;
}

// ---------------------------------------------------------------------------
// PCA

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// power iteration on `cov` with Gram-Schmidt against `against` each sweep
struct PowerResult {
  std::vector<double> vec;
  double eigenvalue = 0.0;
};

PowerResult power_iterate(const std::vector<double>& cov, std::size_t k,
                          const std::vector<double>* against, Rng& rng) {
  constexpr double kTol = 1e-10;
  constexpr int kMaxIter = 10000;

  std::vector<double> v(k);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  auto orthogonalize = [&](std::vector<double>& u) {
    if (!against) return;
    double dot = 0.0;
    for (std::size_t i = 0; i < k; ++i) dot += u[i] * (*against)[i];
    for (std::size_t i = 0; i < k; ++i) u[i] -= dot * (*against)[i];
  };
  orthogonalize(v);
  double n = norm2(v);
  if (n == 0.0) {  // pathological start; k >= 2 guarantees an orthogonal direction exists
    v.assign(k, 0.0);
    v[0] = 1.0;
    orthogonalize(v);
    n = norm2(v);
  }
  for (double& x : v) x /= n;

  std::vector<double> next(k);
  for (int it = 0; it < kMaxIter; ++it) {
    for (std::size_t i = 0; i < k; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += cov[i * k + j] * v[j];
      next[i] = s;
    }
    orthogonalize(next);
    const double m = norm2(next);
    if (m < 1e-30) break;  // null space: the current direction is already an eigenvector
    for (double& x : next) x /= m;
    double delta = 0.0;
    for (std::size_t i = 0; i < k; ++i) delta = std::max(delta, std::abs(next[i] - v[i]));
    v = next;
    if (delta < kTol) break;
  }

  PowerResult out;
  out.vec = v;
  double lam = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += cov[i * k + j] * v[j];
    lam += v[i] * s;
  }
  out.eigenvalue = lam;
  return out;
}

void fix_sign(std::vector<double>& v) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
  if (v[arg] < 0.0)
    for (double& x : v) x = -x;
}

}  // namespace

PcaResult pca_embed(std::span<const double> activation, std::size_t rows, std::size_t cols) {
  check(rows >= 2, "pca needs at least 2 rows");
  check(cols >= 2, "pca needs at least 2 columns");
  check(activation.size() == rows * cols, "activation size does not match rows x cols");

  std::vector<double> centered(activation.begin(), activation.end());
  for (std::size_t c = 0; c < cols; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += centered[r * cols + c];
    mean /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) centered[r * cols + c] -= mean;
  }

  PcaResult out;
  double total = 0.0;
  for (double x : centered) total += x * x;
  if (total == 0.0) {
    out.degenerate = true;
    out.coords.assign(rows, {0.0, 0.0});
    out.components[0].assign(cols, 0.0);
    out.components[1].assign(cols, 0.0);
    return out;
  }

  std::vector<double> cov(cols * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < cols; ++i) {
      const double xi = centered[r * cols + i];
      if (xi == 0.0) continue;
      for (std::size_t j = 0; j < cols; ++j) cov[i * cols + j] += xi * centered[r * cols + j];
    }
  for (double& x : cov) x /= static_cast<double>(rows - 1);

  Rng rng(0x9e3779b97f4a7c15ull);  // fixed: pca output is deterministic
  PowerResult first = power_iterate(cov, cols, nullptr, rng);

  std::vector<double> deflated = cov;
  for (std::size_t i = 0; i < cols; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      deflated[i * cols + j] -= first.eigenvalue * first.vec[i] * first.vec[j];
  PowerResult second = power_iterate(deflated, cols, &first.vec, rng);

  fix_sign(first.vec);
  fix_sign(second.vec);
  out.components[0] = first.vec;
  out.components[1] = second.vec;
  out.explained_variance = {first.eigenvalue, second.eigenvalue};

  out.coords.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double a = 0.0, b = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      a += centered[r * cols + c] * first.vec[c];
      b += centered[r * cols + c] * second.vec[c];
    }
    out.coords[r] = {a, b};
  }
  return out;
}

PcaResult pca_embed(const Tensor& activation) {
  return pca_embed(activation.values(), activation.rows(), activation.cols());
}

}  // namespace pgs
