#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>

#include "sketchstress/mesh.hpp"

namespace sketchstress {

namespace detail {

inline std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

// Merges bit-identical positions so facet-soup formats become indexed meshes.
class VertexWelder {
 public:
  explicit VertexWelder(SurfaceMesh& mesh) : mesh_(mesh) {}

  int index(const Vec3& p) {
    const std::array<double, 3> key{p.x(), p.y(), p.z()};
    auto it = lookup_.find(key);
    if (it != lookup_.end()) return it->second;
    const int id = static_cast<int>(mesh_.vertices.size());
    mesh_.vertices.push_back(p);
    lookup_.emplace(key, id);
    return id;
  }

 private:
  SurfaceMesh& mesh_;
  std::map<std::array<double, 3>, int> lookup_;
};

inline void add_facet(SurfaceMesh& mesh, VertexWelder& welder, const std::array<Vec3, 3>& corners) {
  Triangle tri{welder.index(corners[0]), welder.index(corners[1]), welder.index(corners[2])};
  mesh.triangles.push_back(tri);
}

}  // namespace detail

inline SurfaceMesh read_obj(std::istream& in) {
  SurfaceMesh mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z())) {
        throw Error(ErrorCode::kIo, "OBJ line " + std::to_string(line_no) + ": bad vertex");
      }
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string token;
      while (ls >> token) {
        const int raw = std::stoi(token.substr(0, token.find('/')));
        const int idx = raw < 0 ? static_cast<int>(mesh.vertices.size()) + raw : raw - 1;
        if (idx < 0 || idx >= static_cast<int>(mesh.vertices.size())) {
          throw Error(ErrorCode::kIo, "OBJ line " + std::to_string(line_no) + ": index out of range");
        }
        poly.push_back(idx);
      }
      if (poly.size() < 3) {
        throw Error(ErrorCode::kIo, "OBJ line " + std::to_string(line_no) + ": face with < 3 vertices");
      }
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        mesh.triangles.push_back({poly[0], poly[k], poly[k + 1]});
      }
    }
  }
  if (mesh.triangles.empty()) throw Error(ErrorCode::kIo, "OBJ contains no faces");
  mesh.update_normals();
  return mesh;
}

inline SurfaceMesh read_stl(std::istream& in) {
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  SurfaceMesh mesh;
  detail::VertexWelder welder(mesh);

  bool binary = false;
  if (data.size() >= 84) {
    std::uint32_t count = 0;
    std::memcpy(&count, data.data() + 80, 4);
    binary = data.size() == 84 + static_cast<std::size_t>(count) * 50;
  }
  if (binary) {
    std::uint32_t count = 0;
    std::memcpy(&count, data.data() + 80, 4);
    for (std::uint32_t f = 0; f < count; ++f) {
      const char* rec = data.data() + 84 + f * 50 + 12;
      std::array<Vec3, 3> corners;
      for (int k = 0; k < 3; ++k) {
        float xyz[3];
        std::memcpy(xyz, rec + 12 * k, 12);
        corners[k] = Vec3(xyz[0], xyz[1], xyz[2]);
      }
      detail::add_facet(mesh, welder, corners);
    }
  } else {
    std::istringstream ts(data);
    std::string token;
    std::array<Vec3, 3> corners;
    int corner = 0;
    while (ts >> token) {
      if (detail::lowercase(token) == "vertex") {
        if (corner >= 3) throw Error(ErrorCode::kIo, "ASCII STL: facet with more than 3 vertices");
        ts >> corners[corner].x() >> corners[corner].y() >> corners[corner].z();
        ++corner;
      } else if (detail::lowercase(token) == "endfacet") {
        if (corner != 3) throw Error(ErrorCode::kIo, "ASCII STL: facet without 3 vertices");
        detail::add_facet(mesh, welder, corners);
        corner = 0;
      }
    }
  }
  if (mesh.triangles.empty()) throw Error(ErrorCode::kIo, "STL contains no facets");
  mesh.update_normals();
  return mesh;
}

inline SurfaceMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open mesh " + path.string());
  const std::string ext = detail::lowercase(path.extension().string());
  if (ext == ".obj") return read_obj(in);
  if (ext == ".stl") return read_stl(in);
  throw Error(ErrorCode::kIo, "unsupported mesh format: " + path.string());
}

inline void write_obj(std::ostream& out, const SurfaceMesh& mesh) {
  out << std::setprecision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

inline void write_stl_binary(std::ostream& out, const SurfaceMesh& mesh) {
  char header[80] = {};
  out.write(header, 80);
  const auto count = static_cast<std::uint32_t>(mesh.triangles.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Vec3 n = mesh.face_normal(t);
    float buf[12];
    for (int k = 0; k < 3; ++k) buf[k] = static_cast<float>(n[k]);
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < 3; ++k) buf[3 + 3 * c + k] = static_cast<float>(mesh.vertices[mesh.triangles[t][c]][k]);
    }
    out.write(reinterpret_cast<const char*>(buf), sizeof(buf));
    const std::uint16_t attr = 0;
    out.write(reinterpret_cast<const char*>(&attr), 2);
  }
}

inline void save_mesh(const std::filesystem::path& path, const SurfaceMesh& mesh) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write mesh " + path.string());
  const std::string ext = detail::lowercase(path.extension().string());
  if (ext == ".stl") {
    write_stl_binary(out, mesh);
  } else {
    write_obj(out, mesh);
  }
}

}  // namespace sketchstress
