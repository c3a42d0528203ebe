#include "grail/kvdoc.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace grail {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

KvDoc KvDoc::parse(const std::string& text, const std::string& origin) {
  KvDoc doc;
  doc.origin_ = origin;
  doc.text_ = text;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (auto c = line.find(" #"); c != std::string::npos) line = trim(line.substr(0, c));
    auto fail = [&](const std::string& why) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + why);
    };
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail("empty section name");
      if (doc.data_.count(section)) fail("section [" + section + "] appears twice");
      doc.data_[section];
      doc.order_.push_back(section);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected `key = value`");
    if (section.empty()) fail("key outside of any section");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) fail("empty key");
    auto& sec = doc.data_[section];
    if (sec.count(key)) fail("key '" + key + "' repeated in [" + section + "]");
    sec[key] = trim(line.substr(eq + 1));
  }
  return doc;
}

KvDoc KvDoc::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string KvDoc::where(const std::string& section, const std::string& key) const {
  return origin_ + ": [" + section + "] " + key;
}

bool KvDoc::has(const std::string& section, const std::string& key) const {
  auto it = data_.find(section);
  return it != data_.end() && it->second.count(key);
}

bool KvDoc::has_section(const std::string& section) const { return data_.count(section) != 0; }

std::string KvDoc::get(const std::string& section, const std::string& key, const std::string& fallback) const {
  return has(section, key) ? data_.at(section).at(key) : fallback;
}

std::string KvDoc::require(const std::string& section, const std::string& key) const {
  if (!has(section, key)) throw ConfigError(where(section, key) + ": missing required key");
  return data_.at(section).at(key);
}

double KvDoc::get_double(const std::string& section, const std::string& key, double fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = data_.at(section).at(key);
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError(where(section, key) + ": '" + v + "' is not a number");
  return d;
}

long long KvDoc::get_int(const std::string& section, const std::string& key, long long fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = data_.at(section).at(key);
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(where(section, key) + ": '" + v + "' is not an integer");
  }
  return out;
}

bool KvDoc::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = data_.at(section).at(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(where(section, key) + ": '" + v + "' is not a boolean");
}

std::vector<std::string> KvDoc::sections() const { return order_; }

std::vector<std::string> KvDoc::keys(const std::string& section) const {
  std::vector<std::string> out;
  auto it = data_.find(section);
  if (it == data_.end()) return out;
  for (const auto& [k, v] : it->second) out.push_back(k);
  return out;
}

const std::map<std::string, std::string>& KvDoc::section(const std::string& name) const {
  static const std::map<std::string, std::string> kEmpty;
  auto it = data_.find(name);
  return it == data_.end() ? kEmpty : it->second;
}

void KvDoc::check_known(const std::map<std::string, std::vector<std::string>>& allowed) const {
  for (const auto& [sec, kv] : data_) {
    auto it = allowed.find(sec);
    if (it == allowed.end()) throw ConfigError(origin_ + ": unknown section [" + sec + "]");
    for (const auto& [k, v] : kv) {
      if (std::find(it->second.begin(), it->second.end(), k) == it->second.end()) {
        throw ConfigError(where(sec, k) + ": unknown key");
      }
    }
  }
}

}  // namespace grail
