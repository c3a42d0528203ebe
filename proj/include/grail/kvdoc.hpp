#pragma once

// Minimal INI-style document: `[section]` headers, `key = value` lines,
// `#` / `;` comments.  Keys are unique within a section.

#include <map>
#include <string>
#include <vector>

#include "grail/error.hpp"

namespace grail {

class KvDoc {
 public:
  static KvDoc parse(const std::string& text, const std::string& origin = "<text>");
  static KvDoc load(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  bool has_section(const std::string& section) const;
  std::string get(const std::string& section, const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  long long get_int(const std::string& section, const std::string& key, long long fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

  std::vector<std::string> sections() const;
  std::vector<std::string> keys(const std::string& section) const;
  const std::map<std::string, std::string>& section(const std::string& name) const;

  /// Rejects any section not in `sections` and any key not listed for its section.
  void check_known(const std::map<std::string, std::vector<std::string>>& allowed) const;

  const std::string& origin() const { return origin_; }
  const std::string& text() const { return text_; }

 private:
  std::string where(const std::string& section, const std::string& key) const;

  std::string origin_;
  std::string text_;
  std::vector<std::string> order_;
  std::map<std::string, std::map<std::string, std::string>> data_;
};

/// Splits on commas and trims whitespace; empty input gives an empty list.
std::vector<std::string> split_list(const std::string& s);
std::string trim(const std::string& s);

}  // namespace grail
