#include "millforge/problem_file.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "millforge/sdf.hpp"

namespace millforge {

using nlohmann::json;

namespace {

struct Primitive {
  enum class Kind { Box, Cylinder } kind = Kind::Box;
  Vec3 lo = Vec3::Zero(), hi = Vec3::Zero();  // box, or cylinder bounds
  Vec3 center = Vec3::Zero();                 // cylinder base center
  int axis = 2;
  double radius = 0.0, height = 0.0;

  double distance(const Vec3& x) const {
    if (kind == Kind::Box) return sdf::box(x, lo, hi);
    return sdf::cylinder(x, axis, center, radius, center[axis], center[axis] + height);
  }
};

// Reads fields with error messages that name their location.
class Reader {
public:
  Reader(const json& node, std::string where) : node_(node), where_(std::move(where)) {
    if (!node_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& what) const { throw ProblemFileError(where_, what); }
  const std::string& where() const { return where_; }
  bool has(const char* key) const { return node_.contains(key); }

  Reader object(const char* key) const { return Reader(need(key), path(key)); }
  const json& raw(const char* key) const { return need(key); }
  std::string path(const std::string& key) const { return where_ + "." + key; }

  double number(const char* key) const {
    const json& v = need(key);
    if (!v.is_number()) throw ProblemFileError(path(key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ProblemFileError(path(key), "must be finite");
    return d;
  }
  double number(const char* key, double fallback) const { return has(key) ? number(key) : fallback; }
  int integer(const char* key, int fallback) const {
    if (!has(key)) return fallback;
    const json& v = need(key);
    if (!v.is_number_integer()) throw ProblemFileError(path(key), "expected an integer");
    return v.get<int>();
  }
  bool boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = need(key);
    if (!v.is_boolean()) throw ProblemFileError(path(key), "expected true or false");
    return v.get<bool>();
  }
  std::string string(const char* key) const {
    const json& v = need(key);
    if (!v.is_string()) throw ProblemFileError(path(key), "expected a string");
    return v.get<std::string>();
  }
  std::string string(const char* key, const std::string& fallback) const {
    return has(key) ? string(key) : fallback;
  }
  Vec3 vec3(const char* key) const { return to_vec3(need(key), path(key)); }
  const json& array(const char* key) const {
    const json& v = need(key);
    if (!v.is_array()) throw ProblemFileError(path(key), "expected an array");
    return v;
  }

  static Vec3 to_vec3(const json& v, const std::string& where) {
    if (!v.is_array() || v.size() != 3) throw ProblemFileError(where, "expected [x, y, z]");
    Vec3 out;
    for (int a = 0; a < 3; ++a) {
      if (!v[a].is_number()) throw ProblemFileError(where, "expected [x, y, z]");
      out[a] = v[a].get<double>();
      if (!std::isfinite(out[a])) throw ProblemFileError(where, "must be finite");
    }
    return out;
  }

private:
  const json& need(const char* key) const {
    if (!node_.contains(key)) fail(std::string("missing \"") + key + "\"");
    return node_.at(key);
  }
  const json& node_;
  std::string where_;
};

int parse_axis(const json& v, const std::string& where) {
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s == "x") return 0;
    if (s == "y") return 1;
    if (s == "z") return 2;
  }
  throw ProblemFileError(where, "axis must be \"x\", \"y\" or \"z\"");
}

Primitive parse_primitive(const Reader& r) {
  Primitive p;
  if (r.has("box")) {
    const Reader b = r.object("box");
    p.kind = Primitive::Kind::Box;
    p.lo = b.vec3("min");
    p.hi = b.vec3("max");
    if (!(p.lo.array() < p.hi.array()).all()) b.fail("min must be below max on every axis");
  } else if (r.has("cylinder")) {
    const Reader c = r.object("cylinder");
    p.kind = Primitive::Kind::Cylinder;
    p.center = c.vec3("center");
    p.axis = parse_axis(c.raw("axis"), c.path("axis"));
    p.radius = c.number("radius");
    p.height = c.number("height");
    if (!(p.radius > 0.0 && p.height > 0.0)) c.fail("radius and height must be positive");
    p.lo = p.hi = p.center;
    for (int a = 0; a < 3; ++a)
      if (a != p.axis) {
        p.lo[a] -= p.radius;
        p.hi[a] += p.radius;
      }
    p.hi[p.axis] += p.height;
  } else {
    r.fail("expected \"box\" or \"cylinder\"");
  }
  return p;
}

PatchRegion parse_patch(const Reader& r, const std::map<std::string, Primitive>& prims) {
  const std::string name = r.string("primitive");
  const auto it = prims.find(name);
  if (it == prims.end()) throw ProblemFileError(r.path("primitive"), "unknown primitive \"" + name + "\"");
  const std::string face = r.string("face");
  if (face.size() != 2 || (face[0] != '+' && face[0] != '-') || face[1] < 'x' || face[1] > 'z')
    throw ProblemFileError(r.path("face"), "face must be one of +x, -x, +y, -y, +z, -z");
  const int axis = face[1] - 'x';
  const bool upper = face[0] == '+';
  const Primitive& p = it->second;
  if (p.kind == Primitive::Kind::Box) {
    Vec3 lo = p.lo, hi = p.hi;
    if (upper)
      lo[axis] = hi[axis];
    else
      hi[axis] = lo[axis];
    return PatchRegion::box(lo, hi);
  }
  if (axis != p.axis) throw ProblemFileError(r.path("face"), "cylinders only have faces along their axis");
  Vec3 c = p.center;
  if (upper) c[axis] += p.height;
  return PatchRegion::disk(axis, c, p.radius);
}

// Nodes of the (closed) domain that a patch selects.
std::size_t patch_support(const PatchRegion& region, const LevelSet& domain) {
  const GridSpec& g = domain.grid();
  const double tol = 0.5 * g.h;
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.node_count(); ++i)
    if (domain[i] <= tol && region.contains(g.position(i), tol)) ++n;
  return n;
}

MillingMode parse_mode(const std::string& s, const std::string& where) {
  try {
    return parse_milling_mode(s);
  } catch (const std::exception& e) {
    throw ProblemFileError(where, e.what());
  }
}

}  // namespace

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ProblemFileError(path.string(), e.what());
  }
}

ToolModel parse_tool(const json& doc, const std::string& where) {
  const Reader r(doc, where);
  ToolModel t;
  t.bit_radius = r.number("bit_radius");
  t.bit_length = r.number("bit_length");
  t.head_radius = r.number("head_radius");
  try {
    t.validate();
  } catch (const std::exception& e) {
    r.fail(e.what());
  }
  return t;
}

ProblemSpec parse_problem(const json& doc) {
  const Reader root(doc, "$");
  ProblemSpec spec;
  spec.name = root.string("name", "problem");

  const Reader grid = root.object("grid");
  const double h = grid.number("h");
  if (!(h > 0.0)) grid.fail("h must be positive");
  const int padding = grid.integer("padding", 3);
  if (padding < 1) grid.fail("padding must be at least 1");

  std::map<std::string, Primitive> prims;
  {
    const Reader pr = root.object("primitives");
    for (const auto& [name, node] : doc.at("primitives").items())
      prims.emplace(name, parse_primitive(Reader(node, pr.path(name))));
    if (prims.empty()) pr.fail("no primitives");
  }
  auto lookup = [&](const json& v, const std::string& where) -> const Primitive& {
    if (!v.is_string()) throw ProblemFileError(where, "expected a primitive name");
    const auto it = prims.find(v.get<std::string>());
    if (it == prims.end()) throw ProblemFileError(where, "unknown primitive \"" + v.get<std::string>() + "\"");
    return it->second;
  };

  // Design domain: ordered add/subtract list.
  const json& ops = root.array("design_domain");
  if (ops.empty() || !ops[0].contains("add")) throw ProblemFileError("$.design_domain", "must start with an add");
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  std::vector<std::pair<bool, const Primitive*>> steps;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const std::string where = "$.design_domain[" + std::to_string(i) + "]";
    const Reader op(ops[i], where);
    if (op.has("add")) {
      const Primitive& p = lookup(op.raw("add"), op.path("add"));
      lo = lo.cwiseMin(p.lo);
      hi = hi.cwiseMax(p.hi);
      steps.emplace_back(true, &p);
    } else if (op.has("subtract")) {
      steps.emplace_back(false, &lookup(op.raw("subtract"), op.path("subtract")));
    } else {
      op.fail("expected \"add\" or \"subtract\"");
    }
  }
  const GridSpec g = GridSpec::covering(lo, hi, h, padding);
  const double band = 4.0 * h;
  Problem& P = spec.problem;
  P.domain = LevelSet::from_function(g, band, [&](const Vec3& x) {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& [add, p] : steps) d = add ? std::min(d, p->distance(x)) : std::max(d, -p->distance(x));
    return d;
  });

  if (root.has("preserved")) {
    const json& list = root.array("preserved");
    if (!list.empty()) {
      std::vector<const Primitive*> keep;
      for (std::size_t i = 0; i < list.size(); ++i)
        keep.push_back(&lookup(list[i], "$.preserved[" + std::to_string(i) + "]"));
      P.preserved = LevelSet::from_function(g, band, [&](const Vec3& x) {
        double d = std::numeric_limits<double>::infinity();
        for (const Primitive* p : keep) d = std::min(d, p->distance(x));
        return d;
      });
    }
  }

  const Reader mat = root.object("material");
  P.material.youngs_modulus = mat.number("E");
  P.material.poisson_ratio = mat.number("nu");
  try {
    P.material.validate();
  } catch (const std::exception& e) {
    mat.fail(e.what());
  }

  const json& cases = root.array("load_cases");
  if (cases.empty()) throw ProblemFileError("$.load_cases", "at least one load case is required");
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const Reader lc(cases[c], "$.load_cases[" + std::to_string(c) + "]");
    LoadCase out;
    out.name = lc.string("name", "case" + std::to_string(c));
    const json& tr = lc.array("tractions");
    for (std::size_t t = 0; t < tr.size(); ++t) {
      const Reader tq(tr[t], lc.path("tractions[" + std::to_string(t) + "]"));
      Traction traction;
      traction.region = parse_patch(tq.object("patch"), prims);
      traction.force = tq.vec3("force");
      if (patch_support(traction.region, P.domain) == 0)
        throw ProblemFileError(tq.path("patch"), "patch does not touch the design domain");
      out.tractions.push_back(traction);
    }
    const json& fx = lc.array("fixed");
    if (fx.empty()) throw ProblemFileError(lc.path("fixed"), "at least one fixed patch is required");
    for (std::size_t f = 0; f < fx.size(); ++f) {
      const Reader fr(fx[f], lc.path("fixed[" + std::to_string(f) + "]"));
      out.fixed.push_back(parse_patch(fr, prims));
      if (patch_support(out.fixed.back(), P.domain) == 0)
        fr.fail("patch does not touch the design domain");
    }
    P.load_cases.push_back(std::move(out));
  }

  P.volume_fraction = root.number("volume_fraction");
  if (!(P.volume_fraction > 0.0 && P.volume_fraction < 1.0))
    throw ProblemFileError("$.volume_fraction", "must lie in (0, 1)");

  if (root.has("tool")) P.tool = parse_tool(root.raw("tool"), root.path("tool"));

  if (root.has("milling")) {
    const Reader m = root.object("milling");
    P.mode = parse_mode(m.string("mode"), m.path("mode"));
    if (m.has("directions")) {
      const json& dirs = m.array("directions");
      for (std::size_t i = 0; i < dirs.size(); ++i) {
        const std::string where = m.path("directions[" + std::to_string(i) + "]");
        const Vec3 d = Reader::to_vec3(dirs[i], where);
        if (!(d.norm() > 0.0)) throw ProblemFileError(where, "direction must be nonzero");
        P.directions.push_back(d.normalized());
      }
    }
    if (P.mode == MillingMode::ThreeAxis && P.directions.empty())
      m.fail("3-axis milling needs a direction list");
    P.milling.max_iters = m.integer("max_iters", P.milling.max_iters);
    P.milling.smooth_collar = m.boolean("smooth_collar", false);
    P.milling.collar_radius = m.number("collar_radius", 0.0);
  }

  if (root.has("symmetry")) {
    const json& sym = root.array("symmetry");
    for (std::size_t i = 0; i < sym.size(); ++i) {
      const Reader s(sym[i], "$.symmetry[" + std::to_string(i) + "]");
      MirrorPlane plane{parse_axis(s.raw("axis"), s.path("axis")), s.number("offset")};
      const double twice = 2.0 * (plane.offset - g.origin[plane.axis]) / h;
      if (std::abs(twice - std::round(twice)) > 1e-6)
        s.fail("plane must pass through grid nodes or midway between them");
      P.symmetry.push_back(plane);
    }
  }

  if (root.has("algorithm")) {
    const Reader a = root.object("algorithm");
    const std::string type = a.string("type");
    if (type == "strict")
      P.algorithm = UpdateAlgorithm::Strict;
    else if (type == "relaxed")
      P.algorithm = UpdateAlgorithm::Relaxed;
    else
      throw ProblemFileError(a.path("type"), "must be \"strict\" or \"relaxed\"");
    P.alpha = a.number("alpha", 0.25);
    if (!(P.alpha > 0.0 && P.alpha <= 1.0)) throw ProblemFileError(a.path("alpha"), "must lie in (0, 1]");
  }

  OptimizerSettings& S = spec.settings;
  if (root.has("limits")) {
    const Reader l = root.object("limits");
    S.max_iterations = l.integer("max_iters", S.max_iterations);
    S.outer_every = l.integer("outer_every", S.outer_every);
    S.initial_penalty = l.number("initial_penalty", S.initial_penalty);
    S.window = l.integer("window", S.window);
    S.objective_tolerance = l.number("objective_tolerance", S.objective_tolerance);
    S.volume_tolerance = l.number("volume_tolerance", S.volume_tolerance);
    S.max_halvings = l.integer("max_halvings", S.max_halvings);
    S.fem.tolerance = l.number("fem_tolerance", S.fem.tolerance);
    if (S.max_iterations < 0 || S.outer_every < 1 || S.window < 1 || S.max_halvings < 0 ||
        !(S.initial_penalty > 0.0) || !(S.fem.tolerance > 0.0))
      l.fail("limits out of range");
  }

  try {
    P.validate();
  } catch (const std::invalid_argument& e) {
    throw ProblemFileError("$", e.what());
  }
  return spec;
}

ProblemSpec load_problem(const std::filesystem::path& path) {
  return parse_problem(read_json_file(path));
}

void set_by_path(json& doc, std::string_view dotted_key, std::string_view value) {
  if (dotted_key.empty()) throw std::invalid_argument("empty key");
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string part(dotted_key.substr(start, dot == std::string_view::npos ? dotted_key.size() - start
                                                                                    : dot - start));
    if (part.empty()) throw std::invalid_argument("malformed key " + std::string(dotted_key));
    if (node->is_array()) {
      std::size_t i = 0;
      try {
        i = std::stoul(part);
      } catch (const std::exception&) {
        throw std::invalid_argument("expected an array index in " + std::string(dotted_key));
      }
      if (i >= node->size()) throw std::invalid_argument("index out of range in " + std::string(dotted_key));
      node = &(*node)[i];
    } else {
      node = &(*node)[part];
    }
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  json parsed = json::parse(value, nullptr, false);
  *node = parsed.is_discarded() ? json(std::string(value)) : parsed;
}

}  // namespace millforge
