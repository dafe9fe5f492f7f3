#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "pgs/geometry.hpp"

namespace pgs {

// Linear over control points 0.0 -> blue, 0.5 -> green, 1.0 -> red, rounded
// to the nearest channel value. Input clamped into [0, 1].
std::array<std::uint8_t, 3> saliency_color(double t);

// Fixed per-class palette used when writing labeled clouds without saliency.
std::array<std::uint8_t, 3> class_color(int label);

// ASCII PLY 1.0 with properties x y z red green blue [label] [saliency].
// Coordinates are printed with enough digits to round-trip doubles exactly.
// Colors come from the saliency colormap when saliency is given, from the
// class palette when only labels exist, white otherwise.
void write_ply(const PointCloud& cloud, std::span<const double> saliency, const std::string& path);

// Reads ascii and binary_little_endian PLY 1.0. x, y, z are required; label
// and saliency properties are picked up when present (saliency becomes the
// single feature column); anything else is skipped with a warning on stderr.
PointCloud load_ply(const std::string& path);

// SemanticKITTI scan pair: `.bin` holds little-endian float32 (x, y, z,
// intensity) quadruples, `.label` one little-endian uint32 per point whose
// low 16 bits are the semantic id. Intensity lands in the feature column.
PointCloud load_kitti(const std::string& bin_path, const std::string& label_path);

// One `key = value` per line, `#` starts a comment. Unknown keys are kept;
// callers decide what they mean.
std::map<std::string, std::string> parse_config_file(const std::string& path);

}  // namespace pgs
