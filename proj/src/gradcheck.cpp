#include "pgs/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>

#include "pgs/geometry.hpp"
#include "pgs/rng.hpp"
#include "pgs/segnet.hpp"
#include "pgs/tensor.hpp"

namespace pgs {

namespace {

constexpr double kStep = 1e-6;
constexpr double kMargin = 1e-4;  // clearance from relu kinks and max ties
constexpr int kConfigs = 100;

double rel_err(double ad, double fd) { return std::abs(ad - fd) / std::max(1.0, std::abs(fd)); }

struct BuildResult {
  Tensor objective;            // scalar
  std::vector<Tensor> inputs;  // differentiated leaves, packed in x order
};

// builds the objective for one configuration from the packed input vector x
using Builder = std::function<BuildResult(Graph&, std::span<const double>)>;

double forward_value(const Builder& build, std::span<const double> x) {
  Graph g;
  return build(g, x).objective.scalar_value();
}

// max relative error between backward gradients and central finite differences
double config_error(const Builder& build, std::vector<double> x) {
  Graph g;
  BuildResult r = build(g, x);
  g.backward(r.objective);
  std::vector<double> ad;
  for (const Tensor& t : r.inputs) ad.insert(ad.end(), t.grad().begin(), t.grad().end());

  double worst = 0.0;
  std::size_t i = 0;
  for (std::size_t e = 0; e < x.size(); ++e, ++i) {
    const double keep = x[e];
    x[e] = keep + kStep;
    const double hi = forward_value(build, x);
    x[e] = keep - kStep;
    const double lo = forward_value(build, x);
    x[e] = keep;
    worst = std::max(worst, rel_err(ad[i], (hi - lo) / (2.0 * kStep)));
  }
  return worst;
}

std::vector<double> random_values(Rng& rng, std::size_t n, double margin_from_zero = 0.0) {
  std::vector<double> v(n);
  for (double& x : v) {
    do {
      x = rng.uniform(-1.5, 1.5);
    } while (std::abs(x) < margin_from_zero);
  }
  return v;
}

// splits x into [0, n) and [n, end) leaf tensors
std::pair<Tensor, Tensor> two_inputs(Graph& g, std::span<const double> x, std::size_t n,
                                     std::vector<std::size_t> shape_a,
                                     std::vector<std::size_t> shape_b) {
  const Tensor a = g.input(std::move(shape_a), {x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n)});
  const Tensor b = g.input(std::move(shape_b), {x.begin() + static_cast<std::ptrdiff_t>(n), x.end()});
  return {a, b};
}

double check_matmul(Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < kConfigs; ++t) {
    const std::size_t m = 2 + rng.below(4), p = 2 + rng.below(4), n = 2 + rng.below(3);
    const std::vector<double> mix = random_values(rng, n * 2);
    Builder build = [=](Graph& g, std::span<const double> x) -> BuildResult {
      auto [a, b] = two_inputs(g, x, m * p, {m, p}, {p, n});
      const Tensor w = g.input({n, 2}, mix);
      return {g.sum(g.matmul(g.matmul(a, b), w)), {a, b}};
    };
    worst = std::max(worst, config_error(build, random_values(rng, m * p + p * n)));
  }
  return worst;
}

double check_relu(Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < kConfigs; ++t) {
    const std::size_t m = 2 + rng.below(5), k = 2 + rng.below(5);
    const std::vector<double> mix = random_values(rng, k * 2);
    Builder build = [=](Graph& g, std::span<const double> x) -> BuildResult {
      const Tensor in = g.input({m, k}, {x.begin(), x.end()});
      const Tensor w = g.input({k, 2}, mix);
      return {g.sum(g.matmul(g.relu(in), w)), {in}};
    };
    worst = std::max(worst, config_error(build, random_values(rng, m * k, kMargin)));
  }
  return worst;
}

double check_add_bias(Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < kConfigs; ++t) {
    const std::size_t m = 2 + rng.below(5), k = 2 + rng.below(5);
    const std::vector<double> mix = random_values(rng, k * 2);
    Builder build = [=](Graph& g, std::span<const double> x) -> BuildResult {
      auto [in, b] = two_inputs(g, x, m * k, {m, k}, {k});
      const Tensor w = g.input({k, 2}, mix);
      return {g.sum(g.matmul(g.add_bias(in, b), w)), {in, b}};
    };
    worst = std::max(worst, config_error(build, random_values(rng, m * k + k)));
  }
  return worst;
}

double check_gather_rows(Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < kConfigs; ++t) {
    const std::size_t m = 3 + rng.below(4), k = 2 + rng.below(4), q = 2 + rng.below(5);
    std::vector<std::size_t> idx(q);
    for (auto& i : idx) i = rng.below(m);  // duplicates intended
    const std::vector<double> mix = random_values(rng, k * 2);
    Builder build = [=](Graph& g, std::span<const double> x) -> BuildResult {
      const Tensor in = g.input({m, k}, {x.begin(), x.end()});
      const Tensor w = g.input({k, 2}, mix);
      return {g.sum(g.matmul(g.gather_rows(in, idx), w)), {in}};
    };
    worst = std::max(worst, config_error(build, random_values(rng, m * k)));
  }
  return worst;
}

double check_neighborhood_max(Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < kConfigs; ++t) {
    const std::size_t m = 3 + rng.below(4), k = 2 + rng.below(3);
    std::vector<std::vector<std::size_t>> nbrs(m);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t deg = 1 + rng.below(m);
      for (std::size_t d = 0; d < deg; ++d) nbrs[i].push_back(rng.below(m));
    }
    const std::vector<double> mix = random_values(rng, k * 2);
    Builder build = [=](Graph& g, std::span<const double> x) -> BuildResult {
      const Tensor in = g.input({m, k}, {x.begin(), x.end()});
      const Tensor w = g.input({k, 2}, mix);
      return {g.sum(g.matmul(g.neighborhood_max(in, nbrs), w)), {in}};
    };

    // keep every per-column pair of values at least 2*kMargin apart so the
    // argmax cannot flip inside the finite-difference step
    std::vector<double> x;
    bool ok = false;
    while (!ok) {
      x = random_values(rng, m * k);
      ok = true;
      for (std::size_t c = 0; c < k && ok; ++c)
        for (std::size_t i = 0; i < m && ok; ++i)
          for (std::size_t j = i + 1; j < m && ok; ++j)
            if (std::abs(x[i * k + c] - x[j * k + c]) < 2 * kMargin) ok = false;
    }
    worst = std::max(worst, config_error(build, x));
  }
  return worst;
}

double check_softmax_cross_entropy(Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < kConfigs; ++t) {
    const std::size_t n = 2 + rng.below(6), c = 2 + rng.below(4);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.below(c));
    std::vector<double> weights(c);
    for (auto& w : weights) w = rng.uniform(0.5, 2.0);
    Builder build = [=](Graph& g, std::span<const double> x) -> BuildResult {
      const Tensor logits = g.input({n, c}, {x.begin(), x.end()});
      return {g.softmax_cross_entropy(logits, labels, weights), {logits}};
    };
    worst = std::max(worst, config_error(build, random_values(rng, n * c)));
  }
  return worst;
}

double check_elementwise(Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < kConfigs; ++t) {
    const std::size_t m = 2 + rng.below(5), k = 2 + rng.below(4);
    const double alpha = rng.uniform(-2.0, 2.0);
    const std::vector<double> mix = random_values(rng, (2 * k) * 2);
    Builder build = [=](Graph& g, std::span<const double> x) -> BuildResult {
      auto [a, b] = two_inputs(g, x, m * k, {m, k}, {m, k});
      const Tensor w = g.input({2 * k, 2}, mix);
      const Tensor mixed = g.add(g.scale(a, alpha), b);  // fan-out: a also feeds the concat
      return {g.sum(g.matmul(g.concat_cols(mixed, a), w)), {a, b}};
    };
    worst = std::max(worst, config_error(build, random_values(rng, 2 * m * k)));
  }
  return worst;
}

// end-to-end: loss of the default toy network on a small random cloud,
// spot-checking random parameter entries per configuration
double check_end_to_end(Rng& rng, int configs, int entries_per_config) {
  double worst = 0.0;
  for (int t = 0; t < configs; ++t) {
    PointCloud cloud;
    const std::size_t n = 40;
    cloud.class_count = 5;
    for (std::size_t i = 0; i < n; ++i) {
      cloud.coords.push_back(
          {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)});
      cloud.labels.push_back(static_cast<int>(rng.below(5)));
    }
    ArchitectureSpec spec;  // defaults
    Checkpoint ckpt = init_checkpoint(spec, rng.next_u64());
    const SceneGeometry geom = build_scene_geometry(cloud, spec);

    auto loss_value = [&]() {
      const ForwardResult f = forward(cloud, ckpt, &geom);
      Graph& g = *f.graph;
      return g.softmax_cross_entropy(f.logits, cloud.labels).scalar_value();
    };

    // one backward for all parameter gradients
    std::vector<std::vector<double>> grads;
    {
      Graph g;
      std::vector<Tensor> param_nodes;
      for (auto& p : ckpt.params) param_nodes.push_back(g.input(p.value));
      Checkpoint ghost = ckpt;  // same spec; swap the values for graph nodes
      // rebuild through the public path: differentiate by re-running forward is
      // not possible for parameters, so rebuild the net on our own graph
      const ForwardResult f = forward(cloud, ckpt, &geom);
      f.graph->backward(f.graph->softmax_cross_entropy(f.logits, cloud.labels));
      (void)ghost;
      (void)param_nodes;
      grads.clear();
    }

    (void)loss_value;
    (void)entries_per_config;
    (void)worst;
  }
  return worst;
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, bool sabotage) {
  GradcheckReport report;
  return report;
}

}  // namespace pgs
