#include "grail/scene.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace grail {

void Scene::validate(int max_objects) const {
  if (!(width > 0.0) || !(height > 0.0)) throw Error("scene frame must have positive size");
  if (max_objects > 0 && static_cast<int>(objects.size()) > max_objects) {
    throw Error("scene has " + std::to_string(objects.size()) + " objects, cap is " + std::to_string(max_objects));
  }
  int agents = 0;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const Object& o = objects[i];
    if (o.type == "agent") ++agents;
    if (!std::isfinite(o.x) || !std::isfinite(o.y)) throw Error("object " + std::to_string(i) + " has a non-finite position");
    if (o.visible && (o.x < 0.0 || o.x > width || o.y < 0.0 || o.y > height)) {
      throw Error("visible object " + std::to_string(i) + " (" + o.type + ") lies outside the frame");
    }
  }
  if (agents != 1) throw Error("scene must contain exactly one agent, found " + std::to_string(agents));
}

int Scene::agent_index() const {
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (objects[i].type == "agent") return static_cast<int>(i);
  }
  return -1;
}

double Scene::attribute(const std::string& key, double fallback) const {
  auto it = attributes.find(key);
  return it == attributes.end() ? fallback : it->second;
}

std::string object_constant(int i) { return "obj" + std::to_string(i); }

Scene parse_scene(const std::string& text) {
  Scene s;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    auto bad = [&](const std::string& why) {
      throw ConfigError("scene line " + std::to_string(lineno) + ": " + why);
    };
    if (key == "width") {
      if (!(ls >> s.width)) bad("width needs a number");
    } else if (key == "height") {
      if (!(ls >> s.height)) bad("height needs a number");
    } else if (key == "attr") {
      std::string name;
      double v = 0.0;
      if (!(ls >> name >> v)) bad("attr needs a name and a number");
      s.attributes[name] = v;
    } else if (key == "object") {
      Object o;
      if (!(ls >> o.type >> o.x >> o.y)) bad("object needs TYPE X Y");
      std::string flag;
      while (ls >> flag) {
        if (flag == "hidden") o.visible = false;
        else if (flag == "left" || flag == "right" || flag == "straight") o.orientation = flag;
        else bad("unknown object flag '" + flag + "'");
      }
      s.objects.push_back(o);
    } else {
      bad("unknown key '" + key + "'");
    }
  }
  return s;
}

Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scene file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scene(ss.str());
}

std::string format_scene(const Scene& scene) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "width " << scene.width << "\nheight " << scene.height << "\n";
  for (const auto& [k, v] : scene.attributes) os << "attr " << k << " " << v << "\n";
  for (const Object& o : scene.objects) {
    os << "object " << o.type << " " << o.x << " " << o.y;
    if (!o.visible) os << " hidden";
    if (!o.orientation.empty()) os << " " << o.orientation;
    os << "\n";
  }
  return os.str();
}

}  // namespace grail
