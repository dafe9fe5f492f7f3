#include "pgs/segnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pgs/common.hpp"
#include "pgs/rng.hpp"

namespace pgs {

// ---------------------------------------------------------------------------
// architecture

void ArchitectureSpec::validate() const {
  check(class_count >= 2, "class_count must be at least 2");
  check(!voxel_sizes.empty(), "at least one encoder stage required");
  check(voxel_sizes.size() == channel_widths.size(), "one channel width per encoder stage required");
  for (std::size_t s = 0; s < voxel_sizes.size(); ++s) {
    check(voxel_sizes[s] > 0.0, "voxel sizes must be positive");
    if (s) check(voxel_sizes[s] > voxel_sizes[s - 1], "voxel sizes must be strictly increasing");
    check(channel_widths[s] > 0, "channel widths must be positive");
  }
  check(knn >= 1, "knn must be positive");
  check(input_dim == 3, "input features are the 3 centered coordinates");
}

std::vector<std::string> ArchitectureSpec::tap_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < tap_count(); ++i) names.push_back("A" + std::to_string(i + 1));
  return names;
}

namespace {

// width of the decoder output that lands on grid level `level`
std::size_t decoder_width(const ArchitectureSpec& spec, std::size_t level) {
  return level >= 1 ? spec.channel_widths[level - 1] : spec.channel_widths[0];
}

struct ParamShape {
  std::string name;
  std::vector<std::size_t> shape;
};

std::vector<ParamShape> parameter_layout(const ArchitectureSpec& spec) {
  const std::size_t s_count = spec.stages();
  std::vector<ParamShape> layout;
  std::size_t in = spec.input_dim;
  for (std::size_t s = 0; s < s_count; ++s) {
    const std::size_t out = spec.channel_widths[s];
    layout.push_back({"enc" + std::to_string(s + 1) + ".weight", {in, out}});
    layout.push_back({"enc" + std::to_string(s + 1) + ".bias", {out}});
    in = out;
  }
  const std::size_t bott = spec.channel_widths.back();
  layout.push_back({"bottleneck.weight", {bott, bott}});
  layout.push_back({"bottleneck.bias", {bott}});
  std::size_t carry = bott;
  for (std::size_t d = 0; d < s_count; ++d) {
    const std::size_t level = s_count - 1 - d;
    const std::size_t skip = spec.channel_widths[level];
    const std::size_t out = decoder_width(spec, level);
    layout.push_back({"dec" + std::to_string(d + 1) + ".weight", {carry + skip, out}});
    layout.push_back({"dec" + std::to_string(d + 1) + ".bias", {out}});
    carry = out;
  }
  layout.push_back({"prehead.weight", {carry, carry}});
  layout.push_back({"prehead.bias", {carry}});
  layout.push_back({"head.weight", {carry, static_cast<std::size_t>(spec.class_count)}});
  layout.push_back({"head.bias", {static_cast<std::size_t>(spec.class_count)}});
  return layout;
}

}  // namespace

Checkpoint init_checkpoint(const ArchitectureSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Checkpoint ckpt;
  ckpt.spec = spec;
  for (const auto& p : parameter_layout(spec)) {
    if (p.shape.size() == 2) {
      const double a = std::sqrt(6.0 / static_cast<double>(p.shape[0] + p.shape[1]));
      std::vector<double> w(p.shape[0] * p.shape[1]);
      for (double& x : w) x = rng.uniform(-a, a);
      ckpt.params.push_back({p.name, Tensor(p.shape, std::move(w))});
    } else {
      ckpt.params.push_back({p.name, Tensor(p.shape)});  // zero biases
    }
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// checkpoint file format: "PGSC", u32 version, u32 header length, text header
// (architecture plus one "param <name> <dims...>" line per tensor), then the
// parameter values as little-endian float64 in header order.

namespace {

void put_u32le(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  check(is.good(), "checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64le(std::ostream& os, double v) {
  const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  os.write(b, 8);
}

double get_f64le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  check(is.good(), "checkpoint: truncated parameter data");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ostringstream header;
  header << "classes " << ckpt.spec.class_count << "\n";
  header << "knn " << ckpt.spec.knn << "\n";
  header << "input_dim " << ckpt.spec.input_dim << "\n";
  header << "voxels";
  for (double v : ckpt.spec.voxel_sizes) header << ' ' << fmt_double(v);
  header << "\nwidths";
  for (std::size_t w : ckpt.spec.channel_widths) header << ' ' << w;
  header << "\n";
  for (const auto& p : ckpt.params) {
    header << "param " << p.name;
    for (std::size_t d : p.value.shape()) header << ' ' << d;
    header << "\n";
  }
  const std::string h = header.str();

  std::ofstream os(path, std::ios::binary);
  check(os.good(), "checkpoint: cannot open " + path + " for writing");
  os.write("PGSC", 4);
  put_u32le(os, ckpt.format_version);
  put_u32le(os, static_cast<std::uint32_t>(h.size()));
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& p : ckpt.params)
    for (double v : p.value.values()) put_f64le(os, v);
  check(os.good(), "checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  check(is.good() && std::memcmp(magic, "PGSC", 4) == 0, "checkpoint: bad magic in " + path);
  Checkpoint ckpt;
  ckpt.format_version = get_u32le(is);
  check(ckpt.format_version == 1, "checkpoint: unsupported format version " +
                                      std::to_string(ckpt.format_version));
  const std::uint32_t hlen = get_u32le(is);
  std::string h(hlen, '\0');
  is.read(h.data(), hlen);
  check(is.good(), "checkpoint: truncated header");

  ckpt.spec.voxel_sizes.clear();
  ckpt.spec.channel_widths.clear();
  std::vector<ParamShape> shapes;
  std::istringstream hs(h);
  std::string line;
  while (std::getline(hs, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "classes") ls >> ckpt.spec.class_count;
    else if (key == "knn") ls >> ckpt.spec.knn;
    else if (key == "input_dim") ls >> ckpt.spec.input_dim;
    else if (key == "voxels") {
      double v;
      while (ls >> v) ckpt.spec.voxel_sizes.push_back(v);
    } else if (key == "widths") {
      std::size_t w;
      while (ls >> w) ckpt.spec.channel_widths.push_back(w);
    } else if (key == "param") {
      ParamShape p;
      ls >> p.name;
      std::size_t d;
      while (ls >> d) p.shape.push_back(d);
      check(!p.name.empty() && !p.shape.empty(), "checkpoint: malformed param line: " + line);
      shapes.push_back(std::move(p));
    } else if (!key.empty()) {
      throw std::invalid_argument("checkpoint: unknown header key: " + key);
    }
  }
  ckpt.spec.validate();

  for (const auto& p : shapes) {
    std::size_t n = 1;
    for (std::size_t d : p.shape) n *= d;
    std::vector<double> vals(n);
    for (double& v : vals) v = get_f64le(is);
    ckpt.params.push_back({p.name, Tensor(p.shape, std::move(vals))});
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// scene geometry

SceneGeometry build_scene_geometry(const PointCloud& cloud, const ArchitectureSpec& spec) {
  spec.validate();
  check(cloud.size() >= spec.knn,
        "cloud has " + std::to_string(cloud.size()) + " points, needs at least " +
            std::to_string(spec.knn));

  SceneGeometry geom;
  const std::size_t s_count = spec.stages();

  // centered input features, permutation-invariant centroid
  std::vector<double> axis(cloud.size());
  Point3 centroid;
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < cloud.size(); ++i) axis[i] = cloud.coords[i][a];
    centroid[a] = stable_mean(axis);
  }
  geom.centered_features.resize(cloud.size() * 3);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (int a = 0; a < 3; ++a) geom.centered_features[i * 3 + a] = cloud.coords[i][a] - centroid[a];

  geom.level_coords.push_back(cloud.coords);
  PointCloud level;
  level.coords = cloud.coords;
  for (std::size_t s = 0; s < s_count; ++s) {
    SubsampleResult sub = grid_subsample(level, spec.voxel_sizes[s]);
    std::vector<std::vector<std::size_t>> groups(sub.cloud.size());
    for (std::size_t i = 0; i < sub.mapping.size(); ++i) groups[sub.mapping[i]].push_back(i);
    geom.pool_groups.push_back(std::move(groups));
    geom.level_coords.push_back(sub.cloud.coords);
    level = std::move(sub.cloud);
  }

  for (std::size_t s = 0; s < s_count; ++s) {
    const auto& pts = geom.level_coords[s];
    const KdTree tree(pts);
    const std::size_t k = std::min<std::size_t>(spec.knn, pts.size());
    std::vector<std::vector<std::size_t>> lists(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) lists[i] = tree.knn(pts[i], k);
    geom.knn_lists.push_back(std::move(lists));
  }

  for (std::size_t l = 0; l < s_count; ++l) {
    const KdTree coarse(geom.level_coords[l + 1]);
    std::vector<std::size_t> idx(geom.level_coords[l].size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = coarse.nearest(geom.level_coords[l][i]);
    geom.upsample_idx.push_back(std::move(idx));
  }
  return geom;
}

// ---------------------------------------------------------------------------
// forward

namespace {

struct NetHandles {
  std::vector<Tensor> param_nodes;  // same order as Checkpoint::params
  Tensor logits;
  std::vector<LayerTap> taps;
};

NetHandles build_on_graph(Graph& g, const Checkpoint& ckpt, const SceneGeometry& geom,
                          const TapOffsets* offsets) {
  const ArchitectureSpec& spec = ckpt.spec;
  const auto layout = parameter_layout(spec);
  check(ckpt.params.size() == layout.size(), "checkpoint parameter list does not match architecture");

  NetHandles net;
  std::size_t next = 0;
  auto take = [&](const std::string& name) -> Tensor {
    check(next < ckpt.params.size() && ckpt.params[next].name == name,
          "checkpoint parameter order mismatch at " + name);
    Tensor node = g.input(ckpt.params[next].value);
    net.param_nodes.push_back(node);
    ++next;
    return node;
  };
  auto tap = [&](const std::string& name, Tensor t, const std::vector<Point3>& coords) -> Tensor {
    if (offsets) {
      auto it = offsets->find(name);
      if (it != offsets->end()) t = g.add(t, g.input(it->second));
    }
    net.taps.push_back({name, coords, t});
    return t;
  };

  const std::size_t s_count = spec.stages();
  const std::size_t n = geom.level_coords[0].size();
  Tensor x = g.input({n, spec.input_dim}, geom.centered_features);

  std::vector<Tensor> skip(s_count);
  int tap_no = 1;
  for (std::size_t s = 0; s < s_count; ++s) {
    const Tensor w = take("enc" + std::to_string(s + 1) + ".weight");
    const Tensor b = take("enc" + std::to_string(s + 1) + ".bias");
    Tensor act = g.relu(g.add_bias(g.matmul(x, w), b));
    act = g.neighborhood_max(act, geom.knn_lists[s]);
    act = tap("A" + std::to_string(tap_no++), act, geom.level_coords[s]);
    skip[s] = act;
    x = g.neighborhood_max(act, geom.pool_groups[s]);  // into level s+1
  }

  {
    const Tensor w = take("bottleneck.weight");
    const Tensor b = take("bottleneck.bias");
    x = g.relu(g.add_bias(g.matmul(x, w), b));
    x = tap("A" + std::to_string(tap_no++), x, geom.level_coords[s_count]);
  }

  for (std::size_t d = 0; d < s_count; ++d) {
    const std::size_t level = s_count - 1 - d;
    const Tensor w = take("dec" + std::to_string(d + 1) + ".weight");
    const Tensor b = take("dec" + std::to_string(d + 1) + ".bias");
    Tensor up = g.gather_rows(x, geom.upsample_idx[level]);
    Tensor cat = g.concat_cols(up, skip[level]);
    x = g.relu(g.add_bias(g.matmul(cat, w), b));
    x = tap("A" + std::to_string(tap_no++), x, geom.level_coords[level]);
  }

  {
    const Tensor w = take("prehead.weight");
    const Tensor b = take("prehead.bias");
    x = g.relu(g.add_bias(g.matmul(x, w), b));
    x = tap("A" + std::to_string(tap_no++), x, geom.level_coords[0]);
  }

  const Tensor w = take("head.weight");
  const Tensor b = take("head.bias");
  net.logits = g.add_bias(g.matmul(x, w), b);
  return net;
}

}  // namespace

ForwardResult forward(const PointCloud& cloud, const Checkpoint& ckpt, const SceneGeometry* geometry,
                      const TapOffsets* tap_offsets) {
  SceneGeometry local;
  if (!geometry) {
    local = build_scene_geometry(cloud, ckpt.spec);
    geometry = &local;
  }
  ForwardResult r;
  r.graph = std::make_shared<Graph>();
  NetHandles net = build_on_graph(*r.graph, ckpt, *geometry, tap_offsets);
  r.logits = net.logits;
  r.taps = std::move(net.taps);
  return r;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.rows(), c = logits.cols();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;  // ties keep the lowest id
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> predict(const PointCloud& cloud, const Checkpoint& ckpt,
                         const SceneGeometry* geometry) {
  return argmax_rows(forward(cloud, ckpt, geometry).logits);
}

// ---------------------------------------------------------------------------
// training

Checkpoint train(const std::vector<PointCloud>& scenes, const ArchitectureSpec& spec, int epochs,
                 double lr, std::uint64_t seed, TrainLog* log) {
  check(!scenes.empty(), "train: no scenes");
  check(epochs >= 0, "train: negative epoch count");
  for (const auto& s : scenes) {
    check(s.has_labels(), "train: scene without labels");
    check(s.class_count == spec.class_count, "train: scene class count does not match architecture");
  }

  Checkpoint ckpt = init_checkpoint(spec, seed);
  if (log) log->epoch_loss.clear();
  if (epochs == 0) return ckpt;

  std::vector<SceneGeometry> geoms;
  geoms.reserve(scenes.size());
  for (const auto& s : scenes) geoms.push_back(build_scene_geometry(s, spec));

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::vector<std::vector<double>> m(ckpt.params.size()), v(ckpt.params.size());
  for (std::size_t p = 0; p < ckpt.params.size(); ++p) {
    m[p].assign(ckpt.params[p].value.size(), 0.0);
    v[p].assign(ckpt.params[p].value.size(), 0.0);
  }

  long step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
      Graph g;
      NetHandles net = build_on_graph(g, ckpt, geoms[si], nullptr);
      const Tensor loss = g.softmax_cross_entropy(net.logits, scenes[si].labels);
      g.backward(loss);
      epoch_loss += loss.scalar_value();

      ++step;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t p = 0; p < ckpt.params.size(); ++p) {
        const auto grad = net.param_nodes[p].grad();
        auto theta = ckpt.params[p].value.values_mut();
        for (std::size_t i = 0; i < theta.size(); ++i) {
          m[p][i] = kBeta1 * m[p][i] + (1.0 - kBeta1) * grad[i];
          v[p][i] = kBeta2 * v[p][i] + (1.0 - kBeta2) * grad[i] * grad[i];
          theta[i] -= lr * (m[p][i] / bc1) / (std::sqrt(v[p][i] / bc2) + kEps);
        }
      }
    }
    if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(scenes.size()));
  }
  return ckpt;
}

}  // namespace pgs
