#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nfuse/vec.hpp"

namespace nfuse {

/// CSG expression tree over exact SDF primitives. All primitives must fit
/// inside the unit cube [-1,1]^3; load-time validation enforces a
/// conservative per-primitive bound.
struct CsgNode {
  enum class Kind {
    Sphere, Box, Torus, Capsule,
    Union, Intersection, Subtraction, SmoothUnion
  };

  Kind kind = Kind::Sphere;

  // Primitive parameters (unions by kind).
  Vec3 center;        // sphere, box, torus
  double radius = 0;  // sphere, capsule, torus minor
  Vec3 half_extents;  // box
  double major_radius = 0;  // torus (axis +Z)
  Vec3 a, b;          // capsule endpoints
  double smooth_k = 0.1;    // smooth-union blend radius

  std::vector<std::unique_ptr<CsgNode>> children;

  double sdf(const Vec3& p) const;
  bool is_primitive() const { return children.empty(); }
};

struct Colorizer {
  enum class Kind { Constant, AxisGradient, Checker };
  Kind kind = Kind::Constant;
  Vec3 rgb_a{0.7, 0.7, 0.7};
  Vec3 rgb_b{0.2, 0.2, 0.2};
  Vec3 axis{0, 0, 1};
  double period = 0.25;

  Vec3 color(const Vec3& p) const;
};

struct AnalyticScene {
  std::unique_ptr<CsgNode> root;
  Colorizer colorizer;

  double sdf(const Vec3& p) const;
  /// Central-difference gradient of the scene SDF, normalized.
  Vec3 normal(const Vec3& p, double h = 1e-5) const;
  Vec3 color(const Vec3& p) const { return colorizer.color(p); }

  /// Throws std::invalid_argument if any primitive escapes the unit cube.
  void validate() const;
  /// True when the tree contains no smooth-union operator, i.e. the SDF is
  /// a guaranteed 1-Lipschitz conservative bound.
  bool exact_operators_only() const;
};

AnalyticScene scene_from_json(const std::string& json_text);
AnalyticScene load_scene(const std::string& path);
std::string scene_to_json(const AnalyticScene& scene);

// Convenience constructors used by tests and bundled assets.
std::unique_ptr<CsgNode> make_sphere(const Vec3& center, double radius);
std::unique_ptr<CsgNode> make_box(const Vec3& center, const Vec3& half_extents);
std::unique_ptr<CsgNode> make_torus(const Vec3& center, double major_r, double minor_r);
std::unique_ptr<CsgNode> make_capsule(const Vec3& a, const Vec3& b, double radius);
std::unique_ptr<CsgNode> make_op(CsgNode::Kind op,
                                 std::vector<std::unique_ptr<CsgNode>> children,
                                 double smooth_k = 0.1);

}  // namespace nfuse
