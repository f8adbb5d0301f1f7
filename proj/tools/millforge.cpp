#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "millforge/io.hpp"
#include "millforge/optimizer.hpp"
#include "millforge/problem_file.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace millforge;

namespace {

// Splits "key=value" at the first '='.
std::pair<std::string, std::string> split_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("expected key=value, got \"" + s + "\"");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

// "1,0,0;0,-1,0" -> directions.
std::vector<Vec3> parse_directions(const std::string& s) {
  std::vector<Vec3> dirs;
  for (const std::string& item : split(s, ';')) {
    const auto parts = split(item, ',');
    if (parts.size() != 3) throw std::invalid_argument("direction \"" + item + "\" needs three components");
    Vec3 d;
    for (int a = 0; a < 3; ++a) d[a] = std::stod(parts[a]);
    if (!(d.norm() > 0.0)) throw std::invalid_argument("direction \"" + item + "\" is zero");
    dirs.push_back(d.normalized());
  }
  if (dirs.empty()) throw std::invalid_argument("empty direction list");
  return dirs;
}

json run_summary(const std::string& name, const RunResult& r) {
  return {{"name", name},
          {"compliance", r.compliance},
          {"volume_fraction", r.volume_fraction},
          {"open_compliance", r.open_compliance},
          {"open_volume_fraction", r.open_volume_fraction},
          {"initial_compliance", r.initial_compliance},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"infeasible", r.infeasible},
          {"seconds", r.seconds},
          {"seconds_per_iteration", r.iterations > 0 ? r.seconds / r.iterations : 0.0}};
}

// ---------------------------------------------------------------- optimize

struct OptimizeArgs {
  std::string problem;
  std::string out_dir = "out";
  int checkpoint_every = 0;
  int threads = 1;
  std::vector<std::string> overrides;
  bool quiet = false;
};

int cmd_optimize(const OptimizeArgs& a) {
  json doc = read_json_file(a.problem);
  for (const auto& o : a.overrides) {
    const auto [key, value] = split_assignment(o);
    set_by_path(doc, key, value);
  }
  ProblemSpec spec = parse_problem(doc);
  spec.problem.milling.threads = std::max(1, a.threads);

  const fs::path out(a.out_dir);
  fs::create_directories(out);
  std::ofstream(out / "problem.json") << doc.dump(2) << '\n';

  io::CsvWriter log(out / "log.csv", {"iter", "L", "compliance", "volume_fraction", "lambda", "mu", "eps",
                                      "max_speed", "frac_eta_zero"});
  Optimizer opt(spec.problem, spec.settings);
  const auto observer = [&](const StepView& v) {
    const IterationRecord& r = v.record;
    log << r.iteration << r.lagrangian << r.compliance << r.volume_fraction << r.lambda << r.mu << r.eps
        << r.max_speed << r.frac_eta_zero;
    log.end_row();
    if (a.checkpoint_every > 0 && (r.iteration + 1) % a.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%04d.lsg", r.iteration + 1);
      io::write_lsg(out / name, v.after);
    }
    if (!a.quiet)
      std::printf("%4d  L %.6g  C %.6g  vf %.4f  eps %.3g%s\n", r.iteration, r.lagrangian, r.compliance,
                  r.volume_fraction, r.eps, r.accepted ? "" : "  (stall)");
  };
  const RunResult result = opt.run(observer);

  io::write_lsg(out / "shape.lsg", result.shape);
  io::write_lsg(out / "open_shape.lsg", result.open_shape);
  io::write_stl(out / "shape.stl", io::extract_surface(result.shape), spec.name);
  const json summary = run_summary(spec.name, result);
  std::ofstream(out / "summary.json") << summary.dump(2) << '\n';

  std::printf("%s: compliance %.6g N mm, volume fraction %.4f (open %.4f), %d iterations, %.1f s%s%s\n",
              spec.name.c_str(), result.compliance, result.volume_fraction, result.open_volume_fraction,
              result.iterations, result.seconds, result.converged ? ", converged" : "",
              result.infeasible ? ", volume target not met" : "");
  return 0;
}

// ---------------------------------------------------------------- check

struct CheckArgs {
  std::string shape;
  std::string tool;
  std::string mode = "hemisphere";
  std::string dirs;
  double h = 0.0;
  double slack = 0.25;
  int max_iters = 8;
  int threads = 1;
  std::string out;
};

LevelSet load_shape(const CheckArgs& a, const ToolModel& tool) {
  const fs::path path(a.shape);
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".lsg") return io::read_lsg(path);
  if (ext != ".stl") throw std::invalid_argument("shape must be .stl or .lsg");
  if (!(a.h > 0.0)) throw std::invalid_argument("--spacing is required for STL input");
  const io::Mesh mesh = io::read_stl(path);
  if (mesh.triangles.empty()) throw std::invalid_argument("STL has no triangles");
  Vec3 lo = mesh.vertices.front(), hi = lo;
  for (const Vec3& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const GridSpec grid = GridSpec::covering(lo, hi, a.h, 3);
  return io::voxelize(mesh, grid, std::max(4.0 * a.h, tool.head_radius + 2.0 * a.h));
}

int cmd_check(const CheckArgs& a) {
  const ToolModel tool = parse_tool(read_json_file(a.tool));
  const MillingMode mode = parse_milling_mode(a.mode);
  if (mode == MillingMode::Off) throw std::invalid_argument("check needs a milling mode other than off");
  std::optional<DirectionSet> dirs;
  if (mode == MillingMode::ThreeAxis) {
    if (a.dirs.empty()) throw std::invalid_argument("3axis mode needs --dirs");
    dirs.emplace(parse_directions(a.dirs));
  }
  const LevelSet shape = load_shape(a, tool);
  const std::vector<SurfaceSample> samples = sample_boundary(shape);
  if (samples.empty()) throw std::invalid_argument("shape has no boundary");

  MillingOptions options;
  options.contact_slack = a.slack;
  options.max_iters = a.max_iters;
  options.threads = std::max(1, a.threads);
  const FilterField f = compute_filter(mode, shape, samples, tool, dirs ? &*dirs : nullptr, nullptr, options);

  fs::path stem = a.out.empty() ? fs::path(a.shape).replace_extension("") : fs::path(a.out);
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  const fs::path csv_path = stem.string() + ".check.csv";
  {
    io::CsvWriter csv(csv_path, {"x", "y", "z", "nx", "ny", "nz", "eta", "mx", "my", "mz", "millable"});
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const Vec3& x = samples[s].position;
      const Vec3& n = samples[s].normal;
      const Vec3 m = f.best_direction[s].value_or(Vec3::Zero());
      csv << x.x() << x.y() << x.z() << n.x() << n.y() << n.z() << f.eta[s] << m.x() << m.y() << m.z()
          << (f.best_direction[s] ? 1 : 0);
      csv.end_row();
    }
  }

  // Surface mesh plus a per-vertex eta attribute (nearest sample).
  const io::Mesh mesh = io::extract_surface(shape);
  io::write_stl(stem.string() + ".check.stl", mesh, "check");
  {
    const double cell = shape.spacing();
    std::unordered_map<long long, std::vector<std::size_t>> buckets;
    auto key = [&](const Vec3& x) {
      const auto i = static_cast<long long>(std::floor(x.x() / cell)) & 0xfffff;
      const auto j = static_cast<long long>(std::floor(x.y() / cell)) & 0xfffff;
      const auto k = static_cast<long long>(std::floor(x.z() / cell)) & 0xfffff;
      return (i << 40) | (j << 20) | k;
    };
    for (std::size_t s = 0; s < samples.size(); ++s) buckets[key(samples[s].position)].push_back(s);
    io::CsvWriter attr(stem.string() + ".check.eta.csv", {"vertex", "x", "y", "z", "eta"});
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
      const Vec3& x = mesh.vertices[v];
      double best = std::numeric_limits<double>::infinity(), eta = 0.0;
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const auto it = buckets.find(key(x + cell * Vec3(dx, dy, dz)));
            if (it == buckets.end()) continue;
            for (std::size_t s : it->second) {
              const double d = (samples[s].position - x).squaredNorm();
              if (d < best) {
                best = d;
                eta = f.eta[s];
              }
            }
          }
      attr << static_cast<long long>(v) << x.x() << x.y() << x.z() << eta;
      attr.end_row();
    }
  }

  std::size_t millable = 0;
  for (const auto& d : f.best_direction) millable += d.has_value();
  const double fraction = static_cast<double>(millable) / static_cast<double>(samples.size());
  std::printf("millable %zu of %zu samples (%.4f%%), mode %s\n", millable, samples.size(), 100.0 * fraction,
              to_string(mode).c_str());
  std::printf("report %s\n", csv_path.string().c_str());
  return millable == samples.size() ? 0 : 1;
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  std::string problem;
  std::vector<std::string> vary;
  std::vector<std::string> overrides;
  std::string out_dir = "sweep";
  int jobs = 1;
  int threads = 1;
};

int cmd_sweep(const SweepArgs& a) {
  const json base = read_json_file(a.problem);
  std::vector<std::string> keys;
  std::vector<std::vector<std::string>> values;
  for (const auto& v : a.vary) {
    const auto [key, list] = split_assignment(v);
    keys.push_back(key);
    // Semicolons separate values that themselves contain commas, e.g. JSON arrays.
    values.push_back(split(list, list.find(';') != std::string::npos ? ';' : ','));
    if (values.back().empty()) throw std::invalid_argument("no values for " + key);
  }

  std::vector<std::vector<std::string>> combos{{}};
  for (const auto& list : values) {
    std::vector<std::vector<std::string>> next;
    for (const auto& c : combos)
      for (const auto& v : list) {
        next.push_back(c);
        next.back().push_back(v);
      }
    combos = std::move(next);
  }

  // Validate every combination before spending time on runs.
  std::vector<json> docs;
  for (const auto& c : combos) {
    json doc = base;
    for (const auto& o : a.overrides) {
      const auto [key, value] = split_assignment(o);
      set_by_path(doc, key, value);
    }
    for (std::size_t i = 0; i < keys.size(); ++i) set_by_path(doc, keys[i], c[i]);
    parse_problem(doc);
    docs.push_back(std::move(doc));
  }

  fs::create_directories(a.out_dir);
  std::vector<RunResult> results(docs.size());
  std::vector<std::string> errors(docs.size());
  std::mutex print;
  std::size_t next = 0;
  auto worker = [&] {
    while (true) {
      std::size_t i;
      {
        std::lock_guard lock(print);
        if (next >= docs.size()) return;
        i = next++;
      }
      try {
        ProblemSpec spec = parse_problem(docs[i]);
        spec.problem.milling.threads = std::max(1, a.threads);
        Optimizer opt(spec.problem, spec.settings);
        results[i] = opt.run();
        const fs::path dir = fs::path(a.out_dir) / ("run_" + std::to_string(i));
        fs::create_directories(dir);
        io::write_lsg(dir / "shape.lsg", results[i].shape);
        std::ofstream(dir / "problem.json") << docs[i].dump(2) << '\n';
        std::ofstream(dir / "summary.json") << run_summary(spec.name, results[i]).dump(2) << '\n';
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
      std::lock_guard lock(print);
      std::fprintf(stderr, "run %zu of %zu done%s%s\n", i + 1, docs.size(), errors[i].empty() ? "" : ": ",
                   errors[i].c_str());
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int j = 0; j < std::clamp<int>(a.jobs, 1, static_cast<int>(docs.size())); ++j) pool.emplace_back(worker);
  }

  std::vector<std::string> header = keys;
  for (const char* c : {"compliance", "relative_compliance", "final_volume_fraction", "iterations", "s_per_iter",
                        "converged"})
    header.emplace_back(c);
  io::CsvWriter table(fs::path(a.out_dir) / "sweep.csv", header);
  double reference = 0.0;
  for (const auto& r : results) reference = std::max(reference, r.compliance);
  int failures = 0;
  for (const auto& h : header) std::printf("%-16s", h.c_str());
  std::printf("\n");
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (const auto& v : combos[i]) {
      table << v;
      std::printf("%-16s", v.c_str());
    }
    if (!errors[i].empty()) {
      ++failures;
      for (int k = 0; k < 6; ++k) table << std::string("error");
      table.end_row();
      std::printf("error: %s\n", errors[i].c_str());
      continue;
    }
    const RunResult& r = results[i];
    const double rel = reference > 0.0 ? r.compliance / reference : 0.0;
    const double spi = r.iterations > 0 ? r.seconds / r.iterations : 0.0;
    table << r.compliance << rel << r.volume_fraction << r.iterations << spi << (r.converged ? 1 : 0);
    table.end_row();
    std::printf("%-16.6g%-16.4f%-16.4f%-16d%-16.3f%-16s\n", r.compliance, rel, r.volume_fraction, r.iterations,
                spi, r.converged ? "yes" : "no");
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Level-set topology optimization with a CNC millability filter"};
  app.require_subcommand(1);

  OptimizeArgs oa;
  auto* optimize = app.add_subcommand("optimize", "Run the optimizer on a problem file");
  optimize->add_option("problem", oa.problem, "Problem JSON")->required()->check(CLI::ExistingFile);
  optimize->add_option("-o,--out", oa.out_dir, "Output directory");
  optimize->add_option("--checkpoint-every", oa.checkpoint_every, "Write the level set every N iterations");
  optimize->add_option("--threads", oa.threads, "Workers for the millability filter")->check(CLI::PositiveNumber);
  optimize->add_option("--set", oa.overrides, "Override a problem field, e.g. limits.max_iters=20");
  optimize->add_flag("-q,--quiet", oa.quiet, "No per-iteration output");

  CheckArgs ca;
  auto* check = app.add_subcommand("check", "Report per-sample millability of a shape");
  check->add_option("shape", ca.shape, "Shape (.stl or .lsg)")->required()->check(CLI::ExistingFile);
  check->add_option("--tool", ca.tool, "Tool JSON {bit_radius, bit_length, head_radius}")
      ->required()
      ->check(CLI::ExistingFile);
  check->add_option("--mode", ca.mode, "3axis, hemisphere, normal or heat");
  check->add_option("--dirs", ca.dirs, "3-axis directions, e.g. \"1,0,0;0,0,-1\"");
  check->add_option("--spacing", ca.h, "Grid spacing for STL input (mm)");
  check->add_option("--slack", ca.slack, "Contact tolerance in grid spacings");
  check->add_option("--max-iters", ca.max_iters, "Search steps per sample (normal, heat)");
  check->add_option("--threads", ca.threads, "Workers")->check(CLI::PositiveNumber);
  check->add_option("-o,--out", ca.out, "Output path stem (default: next to the shape)");

  SweepArgs sa;
  auto* sweep = app.add_subcommand("sweep", "Run the cartesian product of parameter values");
  sweep->add_option("problem", sa.problem, "Problem JSON")->required()->check(CLI::ExistingFile);
  sweep->add_option("--vary", sa.vary, "key=v1,v2,... (use ';' between values that contain commas)")
      ->required();
  sweep->add_option("--set", sa.overrides, "Fixed override applied to every run");
  sweep->add_option("-o,--out", sa.out_dir, "Output directory");
  sweep->add_option("-j,--jobs", sa.jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  sweep->add_option("--threads", sa.threads, "Filter workers per run")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*optimize) return cmd_optimize(oa);
    if (*check) return cmd_check(ca);
    if (*sweep) return cmd_sweep(sa);
  } catch (const ProblemFileError& e) {
    std::fprintf(stderr, "problem file error at %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
