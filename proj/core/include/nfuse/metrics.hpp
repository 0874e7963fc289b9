#pragma once

#include <cstdint>
#include <vector>

#include "nfuse/image.hpp"
#include "nfuse/mesh.hpp"
#include "nfuse/vec.hpp"

namespace nfuse {

/// Area-weighted uniform surface samples, deterministic per seed.
std::vector<Vec3> sample_surface(const TriMesh& mesh, int n_samples, uint64_t seed);

/// Symmetric Chamfer distance: mean L2 nearest-neighbor distance between
/// area-uniform point samples, averaged over both directions.
/// Throws std::invalid_argument on an empty mesh.
double chamfer(const TriMesh& a, const TriMesh& b, int n_samples = 100000,
               uint64_t seed = 0);

/// Occupancy IoU on a grid^3 voxel lattice over the joint bounding box
/// (parity ray casting along +X). Throws std::invalid_argument naming the
/// boundary-edge count when a mesh is not watertight.
double volume_iou(const TriMesh& a, const TriMesh& b, int grid = 128);

struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::identity();
  Vec3 translation{};

  Vec3 apply(const Vec3& p) const { return rotation * p * scale + translation; }
};
TriMesh apply_similarity(const TriMesh& mesh, const Similarity& s);

/// Coarse centroid + RMS-radius initialization refined by point-to-point
/// ICP with a similarity (rotation, uniform scale, translation) fit;
/// 50 iterations or relative residual change < 1e-6. Local: recovers
/// rotations up to roughly 10 degrees; inputs are expected to share the
/// repo's camera convention.
Similarity align(const TriMesh& src, const TriMesh& dst, int n_samples = 5000,
                 uint64_t seed = 0);

/// PSNR in dB with MAX = 1.0; identical images report the 99 dB cap.
double psnr(const Image& a, const Image& b);

/// Mean SSIM over channels, 11x11 Gaussian window sigma = 1.5,
/// K1 = 0.01, K2 = 0.03, valid-window coverage.
double ssim(const Image& a, const Image& b);

}  // namespace nfuse
