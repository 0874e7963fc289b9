#include "nfuse/camera.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace nfuse {

namespace {

const char* kLabelNames[] = {"front",      "back",       "left", "right",
                             "front_left", "front_right"};

}  // namespace

const char* to_string(ViewLabel label) {
  const int i = static_cast<int>(label);
  if (i >= 0 && i < 6) return kLabelNames[i];
  return "custom";
}

ViewLabel view_label_from_string(const std::string& s) {
  for (int i = 0; i < 6; ++i)
    if (s == kLabelNames[i]) return static_cast<ViewLabel>(i);
  return ViewLabel::Custom;
}

void CameraView::validate() const {
  if (focal <= 0.0) throw std::invalid_argument("camera: focal must be > 0");
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("camera: resolution must be positive");
  if (world_from_camera.rotation.orthonormality_error() > 1e-6)
    throw std::invalid_argument("camera: rotation is not orthonormal");
}

CameraView look_at_camera(const Vec3& eye, const Vec3& target, double focal,
                          int width, int height, ViewLabel label) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 up_world{0, 0, 1};
  Vec3 x_cam = forward.cross(up_world);
  const double n = x_cam.norm();
  if (n < 1e-9)
    throw std::invalid_argument("look_at_camera: viewing direction parallel to +Z up");
  x_cam = x_cam / n;
  const Vec3 y_cam = forward.cross(x_cam);  // image-down

  CameraView cam;
  cam.focal = focal;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.width = width;
  cam.height = height;
  cam.world_from_camera.rotation = Mat3::from_cols(x_cam, y_cam, forward);
  cam.world_from_camera.translation = eye;
  cam.label = label;
  cam.validate();
  return cam;
}

std::vector<CameraView> standard_rig(double radius, int width, int height) {
  if (radius <= 0.0) throw std::invalid_argument("standard_rig: radius must be > 0");
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("standard_rig: resolution must be positive");
  const double circumsphere = std::sqrt(3.0);
  if (radius <= circumsphere)
    throw std::invalid_argument(
        "standard_rig: radius must exceed sqrt(3) so the unit cube can be framed");

  // Frame the cube's circumsphere at 94% of the half-frame; the cube itself
  // then fills roughly 80% of the frame height.
  const double half_angle = std::asin(circumsphere / radius);
  const double focal = (std::min(width, height) / 2.0) / std::tan(half_angle / 0.94);

  struct RigEntry {
    ViewLabel label;
    double azimuth_deg;
  };
  const RigEntry entries[] = {
      {ViewLabel::Front, 0.0},        {ViewLabel::Back, 180.0},
      {ViewLabel::Left, 90.0},        {ViewLabel::Right, 270.0},
      {ViewLabel::FrontLeft, 315.0},  {ViewLabel::FrontRight, 45.0},
  };

  std::vector<CameraView> cams;
  cams.reserve(6);
  for (const auto& e : entries) {
    const double a = deg2rad(e.azimuth_deg);
    // Azimuth 0 = front = on the -Y axis, rotating counterclockwise about +Z.
    const Vec3 eye{radius * std::sin(a), -radius * std::cos(a), 0.0};
    cams.push_back(look_at_camera(eye, Vec3{0, 0, 0}, focal, width, height, e.label));
  }
  return cams;
}

Ray pixel_ray(const CameraView& cam, int u, int v, int view_index) {
  if (u < 0 || u >= cam.width || v < 0 || v >= cam.height)
    throw std::invalid_argument("pixel_ray: pixel out of range");
  const Vec3 dir_cam{(u + 0.5 - cam.cx) / cam.focal,
                     (v + 0.5 - cam.cy) / cam.focal, 1.0};
  Ray r;
  r.origin = cam.center();
  r.direction = cam.world_from_camera.apply_vector(dir_cam).normalized();
  r.u = u;
  r.v = v;
  r.view_index = view_index;
  return r;
}

void project(const CameraView& cam, const Vec3& p, double* px, double* py) {
  const Vec3 pc = cam.world_from_camera.apply_inverse(p);
  if (pc.z <= 1e-12)
    throw std::invalid_argument("project: point at or behind the camera");
  *px = cam.focal * pc.x / pc.z + cam.cx;
  *py = cam.focal * pc.y / pc.z + cam.cy;
}

std::string cameras_to_json(const std::vector<CameraView>& cams) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : cams) {
    nlohmann::json j;
    j["label"] = to_string(c.label);
    j["focal"] = c.focal;
    j["cx"] = c.cx;
    j["cy"] = c.cy;
    j["width"] = c.width;
    j["height"] = c.height;
    std::vector<double> m(12);
    for (int r = 0; r < 3; ++r) {
      for (int col = 0; col < 3; ++col) m[4 * r + col] = c.world_from_camera.rotation(r, col);
      m[4 * r + 3] = c.world_from_camera.translation[r];
    }
    j["world_from_camera"] = m;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

std::vector<CameraView> cameras_from_json(const std::string& json_text) {
  const nlohmann::json arr = nlohmann::json::parse(json_text);
  if (!arr.is_array()) throw std::invalid_argument("cameras json: expected an array");
  std::vector<CameraView> cams;
  for (const auto& j : arr) {
    CameraView c;
    c.label = view_label_from_string(j.at("label").get<std::string>());
    c.focal = j.at("focal").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    const auto m = j.at("world_from_camera").get<std::vector<double>>();
    if (m.size() != 12)
      throw std::invalid_argument("cameras json: world_from_camera must have 12 entries");
    for (int r = 0; r < 3; ++r) {
      for (int col = 0; col < 3; ++col) c.world_from_camera.rotation(r, col) = m[4 * r + col];
      c.world_from_camera.translation[r] = m[4 * r + 3];
    }
    c.validate();
    cams.push_back(c);
  }
  return cams;
}

void save_cameras_json(const std::vector<CameraView>& cams, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << cameras_to_json(cams) << "\n";
}

std::vector<CameraView> load_cameras_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return cameras_from_json(ss.str());
}

}  // namespace nfuse
