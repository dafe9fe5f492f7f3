#include "pgs/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include "pgs/common.hpp"

namespace pgs {

std::array<std::uint8_t, 3> saliency_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto chan = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * v)); };
  if (t <= 0.5) {
    const double s = t / 0.5;  // blue -> green
    return {0, chan(s), chan(1.0 - s)};
  }
  const double s = (t - 0.5) / 0.5;  // green -> red
  return {chan(s), chan(1.0 - s), 0};
}

std::array<std::uint8_t, 3> class_color(int label) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{{128, 128, 128},
                                                                        {0, 120, 255},
                                                                        {255, 200, 0},
                                                                        {0, 180, 60},
                                                                        {220, 60, 60},
                                                                        {160, 60, 220},
                                                                        {60, 220, 220},
                                                                        {240, 140, 40}}};
  return kPalette[static_cast<std::size_t>(label < 0 ? 0 : label) % kPalette.size()];
}

// ---------------------------------------------------------------------------
// PLY

void write_ply(const PointCloud& cloud, std::span<const double> saliency, const std::string& path) {
  check(saliency.empty() || saliency.size() == cloud.size(),
        "write_ply: saliency length does not match point count");

  std::ofstream os(path, std::ios::binary);
  check(os.good(), "write_ply: cannot open " + path + " for writing");

  os << "ply\nformat ascii 1.0\ncomment produced by pgs\n";
  os << "element vertex " << cloud.size() << "\n";
  os << "property double x\nproperty double y\nproperty double z\n";
  os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (cloud.has_labels()) os << "property int label\n";
  if (!saliency.empty()) os << "property double saliency\n";
  os << "end_header\n";

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    std::array<std::uint8_t, 3> rgb{255, 255, 255};
    if (!saliency.empty()) rgb = saliency_color(saliency[i]);
    else if (cloud.has_labels()) rgb = class_color(cloud.labels[i]);
    os << fmt_double(cloud.coords[i][0]) << ' ' << fmt_double(cloud.coords[i][1]) << ' '
       << fmt_double(cloud.coords[i][2]) << ' ' << int(rgb[0]) << ' ' << int(rgb[1]) << ' '
       << int(rgb[2]);
    if (cloud.has_labels()) os << ' ' << cloud.labels[i];
    if (!saliency.empty()) os << ' ' << fmt_double(saliency[i]);
    os << '\n';
  }
  check(os.good(), "write_ply: write failed for " + path);
}

namespace {

struct PlyProperty {
  std::string type;
  std::string name;
  bool is_list = false;
  std::string count_type;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

[[noreturn]] void ply_fail(std::size_t line, const std::string& msg) {
  throw std::runtime_error("ply parse error at line " + std::to_string(line) + ": " + msg);
}

std::size_t type_size(const std::string& t, std::size_t line) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32")
    return 4;
  if (t == "double" || t == "float64" || t == "int64" || t == "uint64") return 8;
  ply_fail(line, "unknown property type '" + t + "'");
}

bool is_float_type(const std::string& t) {
  return t == "float" || t == "float32" || t == "double" || t == "float64";
}

double decode_scalar(const unsigned char* p, const std::string& t) {
  auto le = [&](int n) {
    std::uint64_t u = 0;
    for (int i = 0; i < n; ++i) u |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return u;
  };
  if (t == "char" || t == "int8") return static_cast<double>(static_cast<std::int8_t>(p[0]));
  if (t == "uchar" || t == "uint8") return static_cast<double>(p[0]);
  if (t == "short" || t == "int16") return static_cast<double>(static_cast<std::int16_t>(le(2)));
  if (t == "ushort" || t == "uint16") return static_cast<double>(static_cast<std::uint16_t>(le(2)));
  if (t == "int" || t == "int32") return static_cast<double>(static_cast<std::int32_t>(le(4)));
  if (t == "uint" || t == "uint32") return static_cast<double>(static_cast<std::uint32_t>(le(4)));
  if (t == "float" || t == "float32")
    return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(le(4))));
  if (t == "double" || t == "float64") return std::bit_cast<double>(le(8));
  if (t == "int64") return static_cast<double>(static_cast<std::int64_t>(le(8)));
  return static_cast<double>(le(8));  // uint64
}

}  // namespace

PointCloud load_ply(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "load_ply: cannot open " + path);

  std::size_t line_no = 0;
  auto next_line = [&](std::string& line) {
    if (!std::getline(is, line)) ply_fail(line_no + 1, "unexpected end of file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++line_no;
  };

  std::string line;
  next_line(line);
  if (line != "ply") ply_fail(line_no, "missing 'ply' magic");

  bool binary = false;
  bool format_seen = false;
  std::vector<PlyElement> elements;
  while (true) {
    next_line(line);
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "comment" || word == "obj_info" || word.empty()) continue;
    if (word == "format") {
      std::string fmt, version;
      ls >> fmt >> version;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else ply_fail(line_no, "unsupported format '" + fmt + "'");
      if (version != "1.0") ply_fail(line_no, "unsupported version '" + version + "'");
      format_seen = true;
    } else if (word == "element") {
      PlyElement e;
      if (!(ls >> e.name >> e.count)) ply_fail(line_no, "malformed element line");
      elements.push_back(std::move(e));
    } else if (word == "property") {
      if (elements.empty()) ply_fail(line_no, "property before any element");
      PlyProperty p;
      std::string t;
      if (!(ls >> t)) ply_fail(line_no, "malformed property line");
      if (t == "list") {
        p.is_list = true;
        if (!(ls >> p.count_type >> p.type >> p.name)) ply_fail(line_no, "malformed list property");
        type_size(p.count_type, line_no);
      } else {
        p.type = t;
        if (!(ls >> p.name)) ply_fail(line_no, "malformed property line");
      }
      type_size(p.type, line_no);
      elements.back().properties.push_back(std::move(p));
    } else if (word == "end_header") {
      break;
    } else {
      ply_fail(line_no, "unknown header keyword '" + word + "'");
    }
  }
  if (!format_seen) ply_fail(line_no, "missing format line");
  if (elements.empty() || elements.front().name != "vertex")
    ply_fail(line_no, "first element must be 'vertex'");

  const PlyElement& vertex = elements.front();
  if (vertex.count == 0) ply_fail(line_no, "vertex element is empty");

  int ix = -1, iy = -1, iz = -1, ilabel = -1, isal = -1;
  for (std::size_t i = 0; i < vertex.properties.size(); ++i) {
    const PlyProperty& p = vertex.properties[i];
    if (p.is_list) {
      std::cerr << "load_ply: skipping list property '" << p.name << "' in vertex element\n";
      continue;
    }
    if (p.name == "x") ix = static_cast<int>(i);
    else if (p.name == "y") iy = static_cast<int>(i);
    else if (p.name == "z") iz = static_cast<int>(i);
    else if (p.name == "label" || p.name == "class" || p.name == "scalar_label")
      ilabel = static_cast<int>(i);
    else if (p.name == "saliency" && is_float_type(p.type)) isal = static_cast<int>(i);
    else if (p.name != "red" && p.name != "green" && p.name != "blue" && p.name != "alpha")
      std::cerr << "load_ply: skipping unsupported property '" << p.name << "'\n";
  }
  if (ix < 0 || iy < 0 || iz < 0) ply_fail(line_no, "vertex element lacks x, y, z properties");

  PointCloud cloud;
  cloud.coords.resize(vertex.count);
  if (ilabel >= 0) cloud.labels.resize(vertex.count);
  if (isal >= 0) {
    cloud.feature_dim = 1;
    cloud.features.resize(vertex.count);
  }

  std::vector<double> row(vertex.properties.size());
  if (!binary) {
    for (std::size_t v = 0; v < vertex.count; ++v) {
      next_line(line);
      std::istringstream ls(line);
      for (std::size_t p = 0; p < vertex.properties.size(); ++p) {
        if (vertex.properties[p].is_list) {
          std::size_t cnt;
          if (!(ls >> cnt)) ply_fail(line_no, "bad list count");
          double dump;
          for (std::size_t j = 0; j < cnt; ++j)
            if (!(ls >> dump)) ply_fail(line_no, "truncated list values");
          row[p] = 0.0;
        } else if (!(ls >> row[p])) {
          ply_fail(line_no, "expected " + std::to_string(vertex.properties.size()) +
                                " values for vertex " + std::to_string(v));
        }
      }
      cloud.coords[v] = {row[static_cast<std::size_t>(ix)], row[static_cast<std::size_t>(iy)],
                         row[static_cast<std::size_t>(iz)]};
      if (ilabel >= 0) cloud.labels[v] = static_cast<int>(row[static_cast<std::size_t>(ilabel)]);
      if (isal >= 0) cloud.features[v] = row[static_cast<std::size_t>(isal)];
    }
  } else {
    std::vector<unsigned char> buf(64);
    for (std::size_t v = 0; v < vertex.count; ++v) {
      for (std::size_t p = 0; p < vertex.properties.size(); ++p) {
        const PlyProperty& prop = vertex.properties[p];
        if (prop.is_list) {
          const std::size_t cs = type_size(prop.count_type, line_no);
          is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(cs));
          if (!is.good()) ply_fail(line_no, "truncated binary list count");
          const auto cnt = static_cast<std::size_t>(decode_scalar(buf.data(), prop.count_type));
          is.ignore(static_cast<std::streamsize>(cnt * type_size(prop.type, line_no)));
          if (!is.good()) ply_fail(line_no, "truncated binary list data");
          row[p] = 0.0;
          continue;
        }
        const std::size_t sz = type_size(prop.type, line_no);
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(sz));
        if (!is.good()) ply_fail(line_no, "truncated binary vertex data");
        row[p] = decode_scalar(buf.data(), prop.type);
      }
      cloud.coords[v] = {row[static_cast<std::size_t>(ix)], row[static_cast<std::size_t>(iy)],
                         row[static_cast<std::size_t>(iz)]};
      if (ilabel >= 0) cloud.labels[v] = static_cast<int>(row[static_cast<std::size_t>(ilabel)]);
      if (isal >= 0) cloud.features[v] = row[static_cast<std::size_t>(isal)];
    }
  }

  if (ilabel >= 0) {
    int max_label = 0;
    for (int l : cloud.labels) {
      check(l >= 0, "load_ply: negative class label");
      max_label = std::max(max_label, l);
    }
    cloud.class_count = max_label + 1;
  }
  cloud.validate();
  return cloud;
}

// ---------------------------------------------------------------------------
// SemanticKITTI

namespace {

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  check(is.good(), "cannot open " + path);
  const auto size = is.tellg();
  is.seekg(0);
  std::vector<unsigned char> data(static_cast<std::size_t>(size));
  is.read(reinterpret_cast<char*>(data.data()), size);
  check(is.good(), "read failed for " + path);
  return data;
}

}  // namespace

PointCloud load_kitti(const std::string& bin_path, const std::string& label_path) {
  const std::vector<unsigned char> bin = read_all(bin_path);
  if (bin.size() % 16 != 0)
    throw std::runtime_error("kitti bin " + bin_path + ": size must be a multiple of 16 bytes, got " +
                             std::to_string(bin.size()));
  const std::size_t n = bin.size() / 16;
  check(n > 0, "kitti bin " + bin_path + " holds no points");

  const std::vector<unsigned char> lab = read_all(label_path);
  if (lab.size() != 4 * n)
    throw std::runtime_error("kitti label " + label_path + ": expected " + std::to_string(4 * n) +
                             " bytes for " + std::to_string(n) + " points, got " +
                             std::to_string(lab.size()));

  auto f32 = [&](std::size_t off) {
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(bin[off + static_cast<std::size_t>(i)]) << (8 * i);
    return static_cast<double>(std::bit_cast<float>(u));
  };

  PointCloud cloud;
  cloud.coords.resize(n);
  cloud.feature_dim = 1;
  cloud.features.resize(n);
  cloud.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cloud.coords[i] = {f32(16 * i), f32(16 * i + 4), f32(16 * i + 8)};
    cloud.features[i] = f32(16 * i + 12);
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(lab[4 * i + static_cast<std::size_t>(b)]) << (8 * b);
    cloud.labels[i] = static_cast<int>(u & 0xffffu);  // high 16 bits are the instance id
    max_label = std::max(max_label, cloud.labels[i]);
  }
  cloud.class_count = max_label + 1;
  cloud.validate();
  return cloud;
}

// ---------------------------------------------------------------------------
// config file

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "cannot open config file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t");
    const auto b = s.find_last_not_of(" \t");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    check(eq != std::string::npos,
          "config " + path + " line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    check(!key.empty(), "config " + path + " line " + std::to_string(line_no) + ": empty key");
    out[key] = value;
  }
  return out;
}

}  // namespace pgs
