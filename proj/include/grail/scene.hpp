#pragma once

#include <map>
#include <string>
#include <vector>

#include "grail/error.hpp"

namespace grail {

struct Object {
  std::string type;
  double x = 0.0;
  double y = 0.0;
  bool visible = true;
  /// "left", "right", "straight" or empty.
  std::string orientation;

  bool operator==(const Object&) const = default;
};

/// Object-centric state: typed objects inside a W x H frame plus scalar
/// attributes (oxygen, carried count, ...) that status predicates read.
struct Scene {
  double width = 160.0;
  double height = 210.0;
  std::vector<Object> objects;
  std::map<std::string, double> attributes;

  /// Checks frame bounds of visible objects, the single-agent rule and the
  /// object cap (0 disables the cap).  Throws Error on violation.
  void validate(int max_objects = 0) const;
  int agent_index() const;
  double attribute(const std::string& key, double fallback = 0.0) const;

  bool operator==(const Scene&) const = default;
};

/// Constant naming object `i` in grounded atoms.
std::string object_constant(int i);

/// Scene fixture text: `width W`, `height H`, `attr KEY VALUE`, and
/// `object TYPE X Y [hidden] [left|right|straight]` lines; `#` comments.
Scene parse_scene(const std::string& text);
Scene load_scene(const std::string& path);
std::string format_scene(const Scene& scene);

}  // namespace grail
