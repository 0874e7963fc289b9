#include "nfuse/scene.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace nfuse {

namespace {

double sd_sphere(const Vec3& p, const Vec3& c, double r) { return (p - c).norm() - r; }

double sd_box(const Vec3& p, const Vec3& c, const Vec3& h) {
  const Vec3 q = (p - c).cwise_abs() - h;
  const Vec3 qpos = q.cwise_max(0.0);
  const double outside = qpos.norm();
  const double inside = std::fmin(q.max_component(), 0.0);
  return outside + inside;
}

double sd_torus(const Vec3& p, const Vec3& c, double major_r, double minor_r) {
  const Vec3 q = p - c;
  const double ring = std::sqrt(q.x * q.x + q.y * q.y) - major_r;
  return std::sqrt(ring * ring + q.z * q.z) - minor_r;
}

double sd_capsule(const Vec3& p, const Vec3& a, const Vec3& b, double r) {
  const Vec3 pa = p - a, ba = b - a;
  const double denom = ba.norm2();
  const double h = denom > 0 ? clamp(pa.dot(ba) / denom, 0.0, 1.0) : 0.0;
  return (pa - ba * h).norm() - r;
}

double smooth_union(double d1, double d2, double k) {
  const double h = clamp(0.5 + 0.5 * (d2 - d1) / k, 0.0, 1.0);
  return d2 * (1.0 - h) + d1 * h - k * h * (1.0 - h);
}

}  // namespace

double CsgNode::sdf(const Vec3& p) const {
  switch (kind) {
    case Kind::Sphere:  return sd_sphere(p, center, radius);
    case Kind::Box:     return sd_box(p, center, half_extents);
    case Kind::Torus:   return sd_torus(p, center, major_radius, radius);
    case Kind::Capsule: return sd_capsule(p, a, b, radius);
    case Kind::Union: {
      double d = children[0]->sdf(p);
      for (size_t i = 1; i < children.size(); ++i) d = std::fmin(d, children[i]->sdf(p));
      return d;
    }
    case Kind::Intersection: {
      double d = children[0]->sdf(p);
      for (size_t i = 1; i < children.size(); ++i) d = std::fmax(d, children[i]->sdf(p));
      return d;
    }
    case Kind::Subtraction: {
      double d = children[0]->sdf(p);
      for (size_t i = 1; i < children.size(); ++i) d = std::fmax(d, -children[i]->sdf(p));
      return d;
    }
    case Kind::SmoothUnion: {
      double d = children[0]->sdf(p);
      for (size_t i = 1; i < children.size(); ++i) d = smooth_union(d, children[i]->sdf(p), smooth_k);
      return d;
    }
  }
  return 0.0;
}

Vec3 Colorizer::color(const Vec3& p) const {
  switch (kind) {
    case Kind::Constant:
      return rgb_a;
    case Kind::AxisGradient: {
      // axis position in [-1,1] mapped to [0,1]
      const double t = clamp(0.5 * (p.dot(axis.normalized()) + 1.0), 0.0, 1.0);
      return rgb_a * (1.0 - t) + rgb_b * t;
    }
    case Kind::Checker: {
      auto cell = [&](double x) { return static_cast<long long>(std::floor(x / period)); };
      const bool odd = ((cell(p.x) + cell(p.y) + cell(p.z)) & 1) != 0;
      return odd ? rgb_b : rgb_a;
    }
  }
  return rgb_a;
}

double AnalyticScene::sdf(const Vec3& p) const {
  if (!root) return 1e9;  // empty scene: everything is far outside
  return root->sdf(p);
}

Vec3 AnalyticScene::normal(const Vec3& p, double h) const {
  const Vec3 g{sdf({p.x + h, p.y, p.z}) - sdf({p.x - h, p.y, p.z}),
               sdf({p.x, p.y + h, p.z}) - sdf({p.x, p.y - h, p.z}),
               sdf({p.x, p.y, p.z + h}) - sdf({p.x, p.y, p.z - h})};
  const double n = g.norm();
  if (n < 1e-12) return {0, 0, 0};
  return g / n;
}

namespace {

void validate_node(const CsgNode& n) {
  auto inside_cube = [](const Vec3& p, double pad) {
    return p.max_abs() + pad <= 1.0 + 1e-9;
  };
  switch (n.kind) {
    case CsgNode::Kind::Sphere:
      if (!inside_cube(n.center, n.radius))
        throw std::invalid_argument("scene: sphere escapes the unit cube");
      if (n.radius <= 0) throw std::invalid_argument("scene: sphere radius must be > 0");
      break;
    case CsgNode::Kind::Box:
      if (!inside_cube(n.center, n.half_extents.max_component()))
        throw std::invalid_argument("scene: box escapes the unit cube");
      if (n.half_extents.x <= 0 || n.half_extents.y <= 0 || n.half_extents.z <= 0)
        throw std::invalid_argument("scene: box half-extents must be > 0");
      break;
    case CsgNode::Kind::Torus:
      if (!inside_cube(n.center, n.major_radius + n.radius))
        throw std::invalid_argument("scene: torus escapes the unit cube");
      if (n.major_radius <= 0 || n.radius <= 0)
        throw std::invalid_argument("scene: torus radii must be > 0");
      break;
    case CsgNode::Kind::Capsule:
      if (!inside_cube(n.a, n.radius) || !inside_cube(n.b, n.radius))
        throw std::invalid_argument("scene: capsule escapes the unit cube");
      if (n.radius <= 0) throw std::invalid_argument("scene: capsule radius must be > 0");
      break;
    default:
      if (n.children.empty())
        throw std::invalid_argument("scene: operator node without children");
      if (n.kind == CsgNode::Kind::SmoothUnion && n.smooth_k <= 0)
        throw std::invalid_argument("scene: smooth-union k must be > 0");
      for (const auto& c : n.children) validate_node(*c);
      break;
  }
}

bool exact_only(const CsgNode& n) {
  if (n.kind == CsgNode::Kind::SmoothUnion) return false;
  for (const auto& c : n.children)
    if (!exact_only(*c)) return false;
  return true;
}

std::unique_ptr<CsgNode> node_from_json(const nlohmann::json& j);

std::vector<std::unique_ptr<CsgNode>> children_from_json(const nlohmann::json& j) {
  std::vector<std::unique_ptr<CsgNode>> out;
  for (const auto& c : j.at("children")) out.push_back(node_from_json(c));
  return out;
}

Vec3 vec_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument("scene json: expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::unique_ptr<CsgNode> node_from_json(const nlohmann::json& j) {
  if (j.contains("type")) {
    const std::string t = j.at("type").get<std::string>();
    if (t == "sphere")
      return make_sphere(vec_from_json(j.at("center")), j.at("radius").get<double>());
    if (t == "box")
      return make_box(vec_from_json(j.at("center")), vec_from_json(j.at("half_extents")));
    if (t == "torus")
      return make_torus(vec_from_json(j.at("center")), j.at("major_radius").get<double>(),
                        j.at("minor_radius").get<double>());
    if (t == "capsule")
      return make_capsule(vec_from_json(j.at("a")), vec_from_json(j.at("b")),
                          j.at("radius").get<double>());
    throw std::invalid_argument("scene json: unknown primitive type '" + t + "'");
  }
  if (j.contains("op")) {
    const std::string op = j.at("op").get<std::string>();
    if (op == "union") return make_op(CsgNode::Kind::Union, children_from_json(j));
    if (op == "intersection")
      return make_op(CsgNode::Kind::Intersection, children_from_json(j));
    if (op == "subtraction")
      return make_op(CsgNode::Kind::Subtraction, children_from_json(j));
    if (op == "smooth_union")
      return make_op(CsgNode::Kind::SmoothUnion, children_from_json(j),
                     j.value("k", 0.1));
    throw std::invalid_argument("scene json: unknown operator '" + op + "'");
  }
  throw std::invalid_argument("scene json: node needs 'type' or 'op'");
}

nlohmann::json vec_to_json(const Vec3& v) {
  return nlohmann::json::array({v.x, v.y, v.z});
}

nlohmann::json node_to_json(const CsgNode& n) {
  nlohmann::json j;
  switch (n.kind) {
    case CsgNode::Kind::Sphere:
      j["type"] = "sphere"; j["center"] = vec_to_json(n.center); j["radius"] = n.radius;
      return j;
    case CsgNode::Kind::Box:
      j["type"] = "box"; j["center"] = vec_to_json(n.center);
      j["half_extents"] = vec_to_json(n.half_extents);
      return j;
    case CsgNode::Kind::Torus:
      j["type"] = "torus"; j["center"] = vec_to_json(n.center);
      j["major_radius"] = n.major_radius; j["minor_radius"] = n.radius;
      return j;
    case CsgNode::Kind::Capsule:
      j["type"] = "capsule"; j["a"] = vec_to_json(n.a); j["b"] = vec_to_json(n.b);
      j["radius"] = n.radius;
      return j;
    case CsgNode::Kind::Union: j["op"] = "union"; break;
    case CsgNode::Kind::Intersection: j["op"] = "intersection"; break;
    case CsgNode::Kind::Subtraction: j["op"] = "subtraction"; break;
    case CsgNode::Kind::SmoothUnion: j["op"] = "smooth_union"; j["k"] = n.smooth_k; break;
  }
  j["children"] = nlohmann::json::array();
  for (const auto& c : n.children) j["children"].push_back(node_to_json(*c));
  return j;
}

Colorizer colorizer_from_json(const nlohmann::json& j) {
  Colorizer c;
  const std::string t = j.at("type").get<std::string>();
  if (t == "constant") {
    c.kind = Colorizer::Kind::Constant;
    c.rgb_a = vec_from_json(j.at("rgb"));
  } else if (t == "axis_gradient") {
    c.kind = Colorizer::Kind::AxisGradient;
    c.axis = vec_from_json(j.at("axis"));
    c.rgb_a = vec_from_json(j.at("from"));
    c.rgb_b = vec_from_json(j.at("to"));
  } else if (t == "checker") {
    c.kind = Colorizer::Kind::Checker;
    c.period = j.at("period").get<double>();
    c.rgb_a = vec_from_json(j.at("rgb_a"));
    c.rgb_b = vec_from_json(j.at("rgb_b"));
    if (c.period <= 0) throw std::invalid_argument("scene json: checker period must be > 0");
  } else {
    throw std::invalid_argument("scene json: unknown colorizer '" + t + "'");
  }
  return c;
}

nlohmann::json colorizer_to_json(const Colorizer& c) {
  nlohmann::json j;
  switch (c.kind) {
    case Colorizer::Kind::Constant:
      j["type"] = "constant"; j["rgb"] = vec_to_json(c.rgb_a); break;
    case Colorizer::Kind::AxisGradient:
      j["type"] = "axis_gradient"; j["axis"] = vec_to_json(c.axis);
      j["from"] = vec_to_json(c.rgb_a); j["to"] = vec_to_json(c.rgb_b); break;
    case Colorizer::Kind::Checker:
      j["type"] = "checker"; j["period"] = c.period;
      j["rgb_a"] = vec_to_json(c.rgb_a); j["rgb_b"] = vec_to_json(c.rgb_b); break;
  }
  return j;
}

}  // namespace

void AnalyticScene::validate() const {
  if (root) validate_node(*root);
}

bool AnalyticScene::exact_operators_only() const {
  return !root || exact_only(*root);
}

AnalyticScene scene_from_json(const std::string& json_text) {
  const nlohmann::json j = nlohmann::json::parse(json_text);
  AnalyticScene s;
  if (j.contains("root") && !j.at("root").is_null()) s.root = node_from_json(j.at("root"));
  if (j.contains("colorizer")) s.colorizer = colorizer_from_json(j.at("colorizer"));
  s.validate();
  return s;
}

AnalyticScene load_scene(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open scene file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return scene_from_json(ss.str());
}

std::string scene_to_json(const AnalyticScene& scene) {
  nlohmann::json j;
  j["root"] = scene.root ? node_to_json(*scene.root) : nlohmann::json();
  j["colorizer"] = colorizer_to_json(scene.colorizer);
  return j.dump(2);
}

std::unique_ptr<CsgNode> make_sphere(const Vec3& center, double radius) {
  auto n = std::make_unique<CsgNode>();
  n->kind = CsgNode::Kind::Sphere;
  n->center = center;
  n->radius = radius;
  return n;
}

std::unique_ptr<CsgNode> make_box(const Vec3& center, const Vec3& half_extents) {
  auto n = std::make_unique<CsgNode>();
  n->kind = CsgNode::Kind::Box;
  n->center = center;
  n->half_extents = half_extents;
  return n;
}

std::unique_ptr<CsgNode> make_torus(const Vec3& center, double major_r, double minor_r) {
  auto n = std::make_unique<CsgNode>();
  n->kind = CsgNode::Kind::Torus;
  n->center = center;
  n->major_radius = major_r;
  n->radius = minor_r;
  return n;
}

std::unique_ptr<CsgNode> make_capsule(const Vec3& a, const Vec3& b, double radius) {
  auto n = std::make_unique<CsgNode>();
  n->kind = CsgNode::Kind::Capsule;
  n->a = a;
  n->b = b;
  n->radius = radius;
  return n;
}

std::unique_ptr<CsgNode> make_op(CsgNode::Kind op,
                                 std::vector<std::unique_ptr<CsgNode>> children,
                                 double smooth_k) {
  auto n = std::make_unique<CsgNode>();
  n->kind = op;
  n->children = std::move(children);
  n->smooth_k = smooth_k;
  return n;
}

}  // namespace nfuse
