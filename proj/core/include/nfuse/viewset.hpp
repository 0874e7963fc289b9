#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nfuse/camera.hpp"
#include "nfuse/image.hpp"
#include "nfuse/scene.hpp"

namespace nfuse {

/// K paired views of one asset: world-space normal maps, color images and
/// binary masks with their cameras. Masked-out pixels carry black color and
/// the zero-normal sentinel.
struct ViewSet {
  std::vector<CameraView> cameras;
  std::vector<Image> normals;  // 3ch, unit vectors or (0,0,0) sentinel
  std::vector<Image> colors;   // 3ch in [0,1]
  std::vector<Image> masks;    // 1ch, 0 or 1
  std::optional<int> conditioning_image_index;

  int view_count() const { return static_cast<int>(cameras.size()); }
  /// Consistency check: map sizes match cameras, masked-in normals unit
  /// within 1e-3, masked-out pixels carry the sentinel. Throws on violation.
  void validate() const;
};

struct CorruptionSpec {
  double outlier_fraction = 0.0;  // masked-in pixels replaced by random values
  double flip_fraction = 0.0;     // normals re-oriented to face the camera
  int mask_erosion_px = 0;
  uint64_t seed = 0;

  void validate() const;
};

struct SphereTraceParams {
  int max_steps = 128;
  double hit_threshold = 1e-4;
};

/// Renders the scene into a ViewSet by sphere tracing: per pixel, normal =
/// scene SDF gradient at the hit point (world space), color from the
/// colorizer, mask = 1 iff hit. Pure per pixel and deterministic.
ViewSet render_views(const AnalyticScene& scene, const std::vector<CameraView>& cams,
                     const SphereTraceParams& params = {}, int threads = 0);

/// Applies the corruption model. Deterministic under spec.seed; exactly
/// floor(fraction * masked_in_count) pixels are altered per view and map.
/// Flipped normals are reflected about the plane orthogonal to the viewing
/// ray so they satisfy cos(v, g) > 0.
ViewSet corrupt(const ViewSet& vs, const CorruptionSpec& spec);

// Directory layout: view_{i}_normal.png (16-bit RGB), view_{i}_rgb.png
// (8-bit RGB), view_{i}_mask.png (8-bit gray), cameras.json.
void save_viewset(const ViewSet& vs, const std::string& dir);
ViewSet load_viewset(const std::string& dir);

CorruptionSpec corruption_from_json(const std::string& json_text);
CorruptionSpec load_corruption(const std::string& path);

}  // namespace nfuse
