#pragma once

#include <string>
#include <vector>

#include "nfuse/vec.hpp"

namespace nfuse {

enum class ViewLabel { Front, Back, Left, Right, FrontLeft, FrontRight, Custom };

const char* to_string(ViewLabel label);
ViewLabel view_label_from_string(const std::string& s);

/// Pinhole camera. Convention: right-handed world, +Z up. Camera frame has
/// +z along the viewing direction, +x to image right and +y to image down;
/// pixel (u, v) covers [u, u+1) x [v, v+1) with its center at (u+0.5, v+0.5).
struct CameraView {
  double focal = 0.0;             // pixels
  double cx = 0.0, cy = 0.0;      // principal point, pixels
  int width = 0, height = 0;
  RigidTransform world_from_camera;
  ViewLabel label = ViewLabel::Custom;

  Vec3 center() const { return world_from_camera.translation; }
  Vec3 optical_axis() const { return world_from_camera.rotation.col(2); }

  /// Throws std::invalid_argument on a non-orthonormal rotation (1e-6),
  /// non-positive focal or non-positive resolution.
  void validate() const;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;   // unit
  int u = 0, v = 0; // pixel coordinates
  int view_index = 0;
};

/// Camera looking at `target` from `eye` with world up = +Z.
CameraView look_at_camera(const Vec3& eye, const Vec3& target, double focal,
                          int width, int height, ViewLabel label = ViewLabel::Custom);

/// The six-view rig: front, back, left, right, front-left, front-right, all
/// at elevation 0 looking at the origin from the given distance. The focal
/// length is chosen so the [-1,1]^3 cube projects inside the frame with a
/// small margin. Throws std::invalid_argument if radius or resolution are
/// non-positive, or if radius <= sqrt(3) (camera inside the cube's
/// circumsphere, the cube cannot be framed).
std::vector<CameraView> standard_rig(double radius, int width, int height);

/// Ray through the center of pixel (u, v), in world space.
/// Throws std::invalid_argument for out-of-range pixels.
Ray pixel_ray(const CameraView& cam, int u, int v, int view_index = 0);

/// Projects a world point to continuous pixel coordinates (the center of
/// pixel (u,v) maps to (u+0.5, v+0.5)). Independent of pixel_ray; used as
/// the round-trip oracle. Throws std::invalid_argument for points at or
/// behind the camera plane.
void project(const CameraView& cam, const Vec3& p, double* px, double* py);

std::string cameras_to_json(const std::vector<CameraView>& cams);
std::vector<CameraView> cameras_from_json(const std::string& json_text);
void save_cameras_json(const std::vector<CameraView>& cams, const std::string& path);
std::vector<CameraView> load_cameras_json(const std::string& path);

}  // namespace nfuse
