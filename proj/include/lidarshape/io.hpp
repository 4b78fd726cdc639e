#pragma once

// File formats: ASCII PLY point clouds, OBJ triangle meshes, key=value
// config files, and write-to-temp-then-rename output.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lidarshape/geometry.hpp"

namespace lidarshape::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes through `writer` into `path.tmp`, then renames over `path`. On any
/// exception the temp file is removed and `path` is left untouched.
inline void write_atomically(const std::filesystem::path& path,
                             const std::function<void(std::ostream&)>& writer,
                             bool binary = false) {
  auto tmp = path;
  tmp += ".tmp";
  try {
    {
      std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
      if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
      writer(out);
      out.flush();
      if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline double parse_real(std::string_view token, std::string_view what) {
  std::string s(token);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    throw FormatError("invalid number '" + s + "' in " + std::string(what));
  return v;
}

// ---------------------------------------------------------------- PLY

inline void write_ply(std::ostream& out, const PointCloud& cloud) {
  out << "ply\nformat ascii 1.0\n";
  out << "comment frame " << frame_name(cloud.frame) << "\n";
  out << "element vertex " << cloud.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\nend_header\n";
  for (const auto& p : cloud.points)
    out << format_real(static_cast<float>(p.x)) << ' ' << format_real(static_cast<float>(p.y))
        << ' ' << format_real(static_cast<float>(p.z)) << '\n';
}

inline void save_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  write_atomically(path, [&](std::ostream& out) { write_ply(out, cloud); });
}

/// Reads an ASCII PLY file. Only the vertex element is consumed; x, y, z
/// may sit among other scalar properties.
inline PointCloud read_ply(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw FormatError("not a PLY file");
  std::size_t vertex_count = 0;
  bool in_vertex = false;
  bool seen_vertex = false;
  std::vector<std::string> vertex_props;
  std::vector<bool> vertex_single;  // float properties round to float, as the writer printed them
  std::size_t elements_before_vertex_lines = 0;
  std::vector<std::pair<std::string, std::size_t>> elements;
  PointCloud cloud;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw FormatError("only ASCII PLY is supported, got '" + fmt + "'");
    } else if (key == "comment") {
      std::string tag, value;
      ls >> tag >> value;
      if (tag == "frame") cloud.frame = value == "canonical" ? Frame::Canonical : Frame::Sensor;
    } else if (key == "element") {
      std::string name;
      std::size_t count = 0;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) {
        vertex_count = count;
        seen_vertex = true;
      } else if (!seen_vertex) {
        elements_before_vertex_lines += count;
      }
    } else if (key == "property") {
      if (in_vertex) {
        std::string type, name;
        ls >> type >> name;
        if (type == "list") throw FormatError("list properties on vertex are not supported");
        vertex_props.push_back(name);
        vertex_single.push_back(type == "float" || type == "float32");
      }
    } else if (key == "end_header") {
      break;
    }
  }
  if (!seen_vertex) throw FormatError("PLY has no vertex element");
  auto index_of = [&](const std::string& n) {
    for (std::size_t i = 0; i < vertex_props.size(); ++i)
      if (vertex_props[i] == n) return i;
    throw FormatError("PLY vertex element lacks property '" + n + "'");
  };
  const std::size_t ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
  for (std::size_t i = 0; i < elements_before_vertex_lines; ++i)
    if (!std::getline(in, line)) throw FormatError("truncated PLY body");
  cloud.points.reserve(vertex_count);
  std::vector<std::string> tokens(vertex_props.size());
  for (std::size_t i = 0; i < vertex_count; ++i) {
    if (!std::getline(in, line)) throw FormatError("truncated PLY: expected " +
                                                   std::to_string(vertex_count) + " vertices");
    std::istringstream ls(line);
    for (auto& t : tokens)
      if (!(ls >> t)) throw FormatError("short PLY vertex line " + std::to_string(i));
    auto value = [&](std::size_t k) {
      const double v = parse_real(tokens[k], "PLY");
      return vertex_single[k] ? static_cast<double>(static_cast<float>(v)) : v;
    };
    cloud.points.push_back({value(ix), value(iy), value(iz)});
  }
  return cloud;
}

inline PointCloud load_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_ply(in);
}

// ---------------------------------------------------------------- OBJ

inline void write_obj(std::ostream& out, const TriMesh& mesh) {
  for (const auto& v : mesh.vertices())
    out << "v " << format_real(v.x) << ' ' << format_real(v.y) << ' ' << format_real(v.z) << '\n';
  for (const auto& t : mesh.triangles())
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

inline void save_obj(const std::filesystem::path& path, const TriMesh& mesh) {
  write_atomically(path, [&](std::ostream& out) { write_obj(out, mesh); });
}

/// Reads `v` and `f` records; polygons are fan-triangulated and all other
/// record types are ignored.
inline TriMesh read_obj(std::istream& in) {
  std::vector<Point3> vertices;
  std::vector<TriangleIndices> triangles;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "v") {
      std::string x, y, z;
      if (!(ls >> x >> y >> z)) throw FormatError("bad vertex at line " + std::to_string(line_no));
      vertices.push_back({parse_real(x, "OBJ"), parse_real(y, "OBJ"), parse_real(z, "OBJ")});
    } else if (key == "f") {
      std::vector<std::uint32_t> idx;
      std::string tok;
      while (ls >> tok) {
        const auto slash = tok.find('/');
        const std::string head = tok.substr(0, slash);
        long v = 0;
        auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), v);
        if (ec != std::errc{} || ptr != head.data() + head.size() || v == 0)
          throw FormatError("bad face index '" + tok + "' at line " + std::to_string(line_no));
        const long resolved = v > 0 ? v - 1 : static_cast<long>(vertices.size()) + v;
        if (resolved < 0) throw FormatError("face index out of range at line " + std::to_string(line_no));
        idx.push_back(static_cast<std::uint32_t>(resolved));
      }
      if (idx.size() < 3) throw FormatError("face with fewer than 3 vertices at line " +
                                            std::to_string(line_no));
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) triangles.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  return TriMesh(std::move(vertices), std::move(triangles));
}

inline TriMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_obj(in);
}

// ---------------------------------------------------------------- key=value

using KeyValues = std::map<std::string, std::string>;

inline KeyValues read_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("expected key=value at line " + std::to_string(line_no));
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline void write_key_values(std::ostream& out, const KeyValues& kv) {
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
}

inline KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_key_values(in);
}

}  // namespace lidarshape::io
