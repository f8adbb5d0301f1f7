#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "millforge/optimizer.hpp"

// JSON problem description. Geometry is built from named primitives (boxes
// and axis-aligned cylinders); load and support patches reference a face of a
// primitive, e.g. {"primitive": "plate", "face": "+z"}. See
// problems/schema.json for the full layout.

namespace millforge {

/// Schema or consistency violation; the message starts with the JSON location.
class ProblemFileError : public std::runtime_error {
public:
  ProblemFileError(const std::string& where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(where) {}
  const std::string& where() const { return where_; }

private:
  std::string where_;
};

struct ProblemSpec {
  std::string name;
  Problem problem;
  OptimizerSettings settings;
};

nlohmann::json read_json_file(const std::filesystem::path& path);

/// Builds the grid, level sets and load cases, and checks that every patch
/// touches the design domain.
ProblemSpec parse_problem(const nlohmann::json& doc);
ProblemSpec load_problem(const std::filesystem::path& path);

/// Tool block {"bit_radius", "bit_length", "head_radius"} (mm). `where`
/// prefixes error locations.
ToolModel parse_tool(const nlohmann::json& doc, const std::string& where = "tool");

/// Sets a dotted key such as "tool.bit_radius" or "milling.mode". The value
/// is parsed as JSON when possible, otherwise stored as a string.
void set_by_path(nlohmann::json& doc, std::string_view dotted_key, std::string_view value);

}  // namespace millforge
