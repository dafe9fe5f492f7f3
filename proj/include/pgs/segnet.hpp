#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pgs/geometry.hpp"
#include "pgs/tensor.hpp"

namespace pgs {

// Toy hierarchical encoder-decoder for point segmentation. Each encoder
// stage runs a shared per-point linear layer + relu + k-NN channelwise max
// at its input resolution, then max-pools into the next coarser grid level.
// The decoder mirrors the encoder with 1-NN upsampling and skip
// concatenation. Taps A1..A{2S+2}: encoder stage outputs (at their input
// resolutions, so A1 is full resolution), bottleneck, decoder stage outputs,
// and the pre-head features (full resolution).
struct ArchitectureSpec {
  int class_count = 5;
  std::vector<double> voxel_sizes = {0.2, 0.4, 0.8};      // strictly increasing
  std::vector<std::size_t> channel_widths = {16, 32, 64};  // per encoder stage
  std::size_t knn = 8;
  std::size_t input_dim = 3;  // centered coordinates

  std::size_t stages() const { return voxel_sizes.size(); }
  std::size_t tap_count() const { return 2 * stages() + 2; }
  std::vector<std::string> tap_names() const;  // "A1".."A8" for the default
  void validate() const;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Format version, architecture, and parameters in declaration order.
// save/load round-trips bit exactly.
struct Checkpoint {
  std::uint32_t format_version = 1;
  ArchitectureSpec spec;
  std::vector<NamedTensor> params;
};

Checkpoint init_checkpoint(const ArchitectureSpec& spec, std::uint64_t seed);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Input-dependent structure reused across forward passes on the same cloud:
// grid levels, k-NN lists, voxel pooling groups, 1-NN upsampling indices,
// and the centered input features.
struct SceneGeometry {
  std::vector<std::vector<Point3>> level_coords;                    // levels 0..S
  std::vector<std::vector<std::vector<std::size_t>>> knn_lists;     // per level 0..S-1
  std::vector<std::vector<std::vector<std::size_t>>> pool_groups;   // level s members per level s+1 point
  std::vector<std::vector<std::size_t>> upsample_idx;               // per level 0..S-1: fine -> coarse 1-NN
  std::vector<double> centered_features;                            // N x input_dim
};

SceneGeometry build_scene_geometry(const PointCloud& cloud, const ArchitectureSpec& spec);

// Named intermediate activation and the coordinates of its resolution level.
// The activation tensor stays linked to the forward pass's graph, so running
// backward on any scalar objective populates its grad.
struct LayerTap {
  std::string name;
  std::vector<Point3> coords;
  Tensor activation;  // M x k, on the graph
};

struct ForwardResult {
  std::shared_ptr<Graph> graph;
  Tensor logits;  // N x C, on the graph
  std::vector<LayerTap> taps;
};

// Additive probes applied to named taps; gradient checks perturb these to
// differentiate an objective with respect to an intermediate activation.
using TapOffsets = std::map<std::string, Tensor>;

ForwardResult forward(const PointCloud& cloud, const Checkpoint& ckpt,
                      const SceneGeometry* geometry = nullptr,
                      const TapOffsets* tap_offsets = nullptr);

std::vector<int> predict(const PointCloud& cloud, const Checkpoint& ckpt,
                         const SceneGeometry* geometry = nullptr);

std::vector<int> argmax_rows(const Tensor& logits);

struct TrainLog {
  std::vector<double> epoch_loss;  // mean scene loss per epoch
};

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) on softmax cross-entropy, one step
// per scene, scenes visited in order. Deterministic for a given seed.
Checkpoint train(const std::vector<PointCloud>& scenes, const ArchitectureSpec& spec, int epochs,
                 double lr, std::uint64_t seed, TrainLog* log = nullptr);

}  // namespace pgs
