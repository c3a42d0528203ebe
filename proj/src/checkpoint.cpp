#include "grail/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "grail/kvdoc.hpp"

namespace grail {

namespace {

constexpr const char* kMagic = "GRAILCK1";

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

void put_f32(std::ostream& out, float f) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(f);
  unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                        static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

bool get_f32(std::istream& in, float& f) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                          (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  f = std::bit_cast<float>(u);
  return true;
}

CheckpointManifest read_manifest_stream(std::istream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw IncompatibleArtifact(path + ": not a GRAIL checkpoint");
  CheckpointManifest m;
  bool ended = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end") {
      ended = true;
      break;
    }
    std::string rest;
    std::getline(ls, rest);
    rest = trim(rest);
    if (key == "env") m.env = rest;
    else if (key == "blend_mode") m.blend_mode = rest;
    else if (key == "actions") m.actions = split_list(rest);
    else if (key == "predicates") m.predicates = split_list(rest);
    else if (key == "policy_clauses") m.policy_clauses = std::stoi(rest);
    else if (key == "blend_clauses") m.blend_clauses = std::stoi(rest);
    else if (key == "step") m.step = std::stoll(rest);
    else if (key == "array") {
      std::istringstream as(rest);
      CheckpointManifest::Array a;
      if (!(as >> a.name >> a.rows >> a.cols) || a.rows < 0 || a.cols < 0) {
        throw IncompatibleArtifact(path + ": malformed array entry '" + rest + "'");
      }
      m.arrays.push_back(a);
    } else if (key != "version") {
      throw IncompatibleArtifact(path + ": unknown manifest key '" + key + "'");
    }
  }
  if (!ended) throw IncompatibleArtifact(path + ": truncated manifest");
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, HybridAgent& agent, const std::string& env_name, long long step) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path);
  const AgentLayout& L = agent.layout();
  out << kMagic << "\n";
  out << "version 1\n";
  out << "env " << env_name << "\n";
  out << "blend_mode " << blend_mode_name(L.blend_mode) << "\n";
  out << "actions " << join(agent.action_names()) << "\n";
  out << "predicates " << join(L.decls.spatial_names()) << "\n";
  out << "policy_clauses " << L.policy.program.clauses.size() << "\n";
  out << "blend_clauses " << (L.blending ? L.blending->program.clauses.size() : 0) << "\n";
  out << "step " << step << "\n";
  const auto arrays = agent.checkpoint_arrays();
  for (const ad::Parameter* p : arrays) out << "array " << p->name << " " << p->value.rows() << " " << p->value.cols() << "\n";
  out << "end\n";
  for (const ad::Parameter* p : arrays) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) put_f32(out, static_cast<float>(p->value.data()[i]));
  }
  if (!out) throw ConfigError("failed writing checkpoint " + path);
}

CheckpointManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IncompatibleArtifact("cannot open checkpoint " + path);
  return read_manifest_stream(in, path);
}

CheckpointManifest load_checkpoint(const std::string& path, HybridAgent& agent) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IncompatibleArtifact("cannot open checkpoint " + path);
  CheckpointManifest m = read_manifest_stream(in, path);
  if (m.actions != agent.action_names()) {
    throw IncompatibleArtifact(path + ": action order [" + join(m.actions) + "] differs from the configured [" +
                               join(agent.action_names()) + "]");
  }
  if (m.predicates != agent.layout().decls.spatial_names()) {
    throw IncompatibleArtifact(path + ": spatial predicates differ from the configured declarations");
  }
  const auto arrays = agent.checkpoint_arrays();
  if (m.arrays.size() != arrays.size()) {
    throw IncompatibleArtifact(path + ": " + std::to_string(m.arrays.size()) + " arrays, agent expects " +
                               std::to_string(arrays.size()));
  }
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const auto& a = m.arrays[i];
    const ad::Parameter& p = *arrays[i];
    if (a.name != p.name || a.rows != p.value.rows() || a.cols != p.value.cols()) {
      throw IncompatibleArtifact(path + ": array '" + a.name + "' " + std::to_string(a.rows) + "x" +
                                 std::to_string(a.cols) + " does not match '" + p.name + "' " +
                                 std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    }
  }
  std::vector<ad::Matrix> staged;
  for (const auto& a : m.arrays) {
    ad::Matrix v(a.rows, a.cols);
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      float f = 0.0f;
      if (!get_f32(in, f)) throw IncompatibleArtifact(path + ": truncated array data for '" + a.name + "'");
      v.data()[k] = static_cast<double>(f);
    }
    staged.push_back(std::move(v));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IncompatibleArtifact(path + ": trailing bytes after array data");
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    arrays[i]->value = std::move(staged[i]);
    arrays[i]->zero_grad();
  }
  return m;
}

std::map<std::string, ad::Matrix> read_arrays(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IncompatibleArtifact("cannot open checkpoint " + path);
  const CheckpointManifest m = read_manifest_stream(in, path);
  std::map<std::string, ad::Matrix> out;
  for (const auto& a : m.arrays) {
    ad::Matrix v(a.rows, a.cols);
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      float f = 0.0f;
      if (!get_f32(in, f)) throw IncompatibleArtifact(path + ": truncated array data for '" + a.name + "'");
      v.data()[k] = static_cast<double>(f);
    }
    out.emplace(a.name, std::move(v));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IncompatibleArtifact(path + ": trailing bytes after array data");
  return out;
}

ValuationNet load_valuation(const std::string& path, const std::string& predicate) {
  const auto arrays = read_arrays(path);
  ValuationNet net(predicate);
  for (ad::Parameter* p : net.parameters()) {
    const auto it = arrays.find(p->name);
    if (it == arrays.end()) throw IncompatibleArtifact(path + ": no array '" + p->name + "' (unknown predicate?)");
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw IncompatibleArtifact(path + ": array '" + p->name + "' has the wrong shape");
    p->value = it->second;
  }
  return net;
}

}  // namespace grail
