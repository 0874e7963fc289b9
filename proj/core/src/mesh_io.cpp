#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "nfuse/mesh.hpp"

namespace nfuse {

MeshFormat mesh_format_from_path(const std::string& path) {
  const auto dot = path.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "obj" || ext == "OBJ") return MeshFormat::OBJ;
  if (ext == "ply" || ext == "PLY") return MeshFormat::PLY;
  throw std::invalid_argument("mesh path must end in .obj or .ply: " + path);
}

namespace {

uint8_t to_byte(double c) {
  return static_cast<uint8_t>(std::lround(clamp(c, 0.0, 1.0) * 255.0));
}

void export_obj(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  char buf[256];
  const bool colored = mesh.has_colors();
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& v = mesh.vertices[i];
    if (colored) {
      const Vec3& c = mesh.colors[i];
      std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g %.9g %.9g %.9g\n",
                    static_cast<float>(v.x), static_cast<float>(v.y),
                    static_cast<float>(v.z), static_cast<float>(c.x),
                    static_cast<float>(c.y), static_cast<float>(c.z));
    } else {
      std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", static_cast<float>(v.x),
                    static_cast<float>(v.y), static_cast<float>(v.z));
    }
    out << buf;
  }
  for (const auto& t : mesh.triangles) {
    std::snprintf(buf, sizeof(buf), "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
    out << buf;
  }
}

TriMesh import_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  TriMesh mesh;
  std::string line;
  bool any_color = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      double x, y, z;
      ss >> x >> y >> z;
      mesh.vertices.push_back({x, y, z});
      double r, g, b;
      if (ss >> r >> g >> b) {
        mesh.colors.push_back({r, g, b});
        any_color = true;
      } else {
        mesh.colors.push_back({0, 0, 0});
      }
    } else if (tag == "f") {
      std::array<int, 3> t{};
      for (int i = 0; i < 3; ++i) {
        std::string tok;
        ss >> tok;
        t[i] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      mesh.triangles.push_back(t);
    }
  }
  if (!any_color) mesh.colors.clear();
  mesh.validate();
  return mesh;
}

template <typename T>
void put(std::string& s, const T& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  s.append(p, sizeof(T));
}

void export_ply(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  const bool colored = mesh.has_colors();
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << mesh.vertices.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (colored) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << mesh.triangles.size() << "\n";
  out << "property list uchar int vertex_indices\n";
  out << "end_header\n";

  std::string payload;
  payload.reserve(mesh.vertices.size() * 15 + mesh.triangles.size() * 13);
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    put(payload, static_cast<float>(mesh.vertices[i].x));
    put(payload, static_cast<float>(mesh.vertices[i].y));
    put(payload, static_cast<float>(mesh.vertices[i].z));
    if (colored) {
      put(payload, to_byte(mesh.colors[i].x));
      put(payload, to_byte(mesh.colors[i].y));
      put(payload, to_byte(mesh.colors[i].z));
    }
  }
  for (const auto& t : mesh.triangles) {
    put(payload, static_cast<uint8_t>(3));
    put(payload, static_cast<int32_t>(t[0]));
    put(payload, static_cast<int32_t>(t[1]));
    put(payload, static_cast<int32_t>(t[2]));
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

TriMesh import_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw std::runtime_error("not a ply file: " + path);
  size_t n_vertices = 0, n_faces = 0;
  bool colored = false, in_vertex = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "binary_little_endian")
        throw std::runtime_error("ply: only binary_little_endian supported");
    } else if (tag == "element") {
      std::string what;
      size_t count;
      ss >> what >> count;
      if (what == "vertex") { n_vertices = count; in_vertex = true; }
      else { in_vertex = false; if (what == "face") n_faces = count; }
    } else if (tag == "property" && in_vertex) {
      std::string type, name;
      ss >> type >> name;
      if (name == "red") colored = true;
    } else if (tag == "end_header") {
      break;
    }
  }

  TriMesh mesh;
  mesh.vertices.resize(n_vertices);
  if (colored) mesh.colors.resize(n_vertices);
  for (size_t i = 0; i < n_vertices; ++i) {
    float xyz[3];
    in.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
    mesh.vertices[i] = {xyz[0], xyz[1], xyz[2]};
    if (colored) {
      uint8_t rgb[3];
      in.read(reinterpret_cast<char*>(rgb), sizeof(rgb));
      mesh.colors[i] = {rgb[0] / 255.0, rgb[1] / 255.0, rgb[2] / 255.0};
    }
  }
  mesh.triangles.resize(n_faces);
  for (size_t i = 0; i < n_faces; ++i) {
    uint8_t cnt;
    in.read(reinterpret_cast<char*>(&cnt), 1);
    if (cnt != 3) throw std::runtime_error("ply: only triangle faces supported");
    int32_t idx[3];
    in.read(reinterpret_cast<char*>(idx), sizeof(idx));
    mesh.triangles[i] = {idx[0], idx[1], idx[2]};
  }
  if (!in) throw std::runtime_error("ply: truncated payload in " + path);
  mesh.validate();
  return mesh;
}

}  // namespace

void export_mesh(const TriMesh& mesh, const std::string& path, MeshFormat format) {
  mesh.validate();
  if (format == MeshFormat::OBJ)
    export_obj(mesh, path);
  else
    export_ply(mesh, path);
}

void export_mesh(const TriMesh& mesh, const std::string& path) {
  export_mesh(mesh, path, mesh_format_from_path(path));
}

TriMesh import_mesh(const std::string& path) {
  return mesh_format_from_path(path) == MeshFormat::OBJ ? import_obj(path)
                                                        : import_ply(path);
}

}  // namespace nfuse
