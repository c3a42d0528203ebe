#include "grail/concepts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "grail/optim.hpp"

namespace grail {

ValuationNet::ValuationNet(std::string predicate)
    : predicate_(std::move(predicate)), mlp_("psi." + predicate_, {2, 64, 32, 1}) {}

void ValuationNet::init(Rng& rng) { mlp_.init(rng, true); }

ad::Var ValuationNet::forward(ad::Tape& tape, const ad::Var& offsets, bool trainable) {
  if (offsets.cols() != 2) throw ShapeError("valuation net input must have 2 columns");
  return ad::sigmoid(mlp_.forward(tape, offsets, trainable));
}

ad::Matrix ValuationNet::eval(const ad::Matrix& offsets) const {
  ad::Matrix z = mlp_.eval(offsets);
  return z.unaryExpr([](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

double ValuationNet::eval(double dx, double dy) const {
  ad::Matrix x(1, 2);
  x << dx, dy;
  return eval(x)(0, 0);
}

Offset normalized_offset(double x1, double y1, double x2, double y2, double W, double H) {
  if (!std::isfinite(x1) || !std::isfinite(y1) || !std::isfinite(x2) || !std::isfinite(y2) || !std::isfinite(W) ||
      !std::isfinite(H)) {
    throw NonfiniteInput("non-finite coordinate passed to a valuation function");
  }
  if (!(W > 0.0) || !(H > 0.0)) throw Error("frame dimensions must be positive");
  return Offset{std::clamp((x1 - x2) / W, -1.0, 1.0), std::clamp((y1 - y2) / H, -1.0, 1.0)};
}

double eval_valuation(const ValuationNet& net, double x1, double y1, double x2, double y2, double W, double H) {
  const Offset o = normalized_offset(x1, y1, x2, y2, W, H);
  return net.eval(o.dx, o.dy);
}

AlignmentGrid build_grid(int K) {
  if (K < 1) throw ConfigError("grid resolution K must be at least 1");
  AlignmentGrid g;
  g.K = K;
  g.offsets.resize(static_cast<Eigen::Index>(K) * K, 2);
  for (int r = 1; r <= K; ++r) {
    for (int c = 1; c <= K; ++c) {
      const Eigen::Index row = static_cast<Eigen::Index>(r - 1) * K + (c - 1);
      g.offsets(row, 0) = 2.0 * c / (K + 1) - 1.0;
      g.offsets(row, 1) = 2.0 * r / (K + 1) - 1.0;
    }
  }
  return g;
}

double bce(double target, double prediction) {
  const double y = std::max(prediction, ad::kLogFloor);
  const double ny = std::max(1.0 - prediction, ad::kLogFloor);
  return -(target * std::log(y) + (1.0 - target) * std::log(ny));
}

ConceptAligner::ConceptAligner(const std::map<std::string, ProxyFn>& proxies, std::vector<std::string> aligned, int K)
    : aligned_(std::move(aligned)), grid_(build_grid(K)) {
  for (const std::string& p : aligned_) {
    auto it = proxies.find(p);
    if (it == proxies.end()) throw MissingProxy("no proxy for aligned predicate '" + p + "'");
    ad::Matrix t(grid_.offsets.rows(), 1);
    for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, 0) = it->second(grid_.offsets(i, 0), grid_.offsets(i, 1));
    targets_[p] = std::move(t);
  }
}

const ad::Matrix& ConceptAligner::targets(const std::string& predicate) const {
  auto it = targets_.find(predicate);
  if (it == targets_.end()) throw MissingProxy("no proxy targets for '" + predicate + "'");
  return it->second;
}

ad::Var ConceptAligner::loss(ad::Tape& tape, ValuationMap& nets, bool trainable) const {
  if (aligned_.empty()) throw ConfigError("concept alignment needs at least one aligned predicate");
  ad::Var x = tape.constant(grid_.offsets);
  ad::Var total;
  for (const std::string& p : aligned_) {
    auto it = nets.find(p);
    if (it == nets.end()) throw ConfigError("no valuation net for aligned predicate '" + p + "'");
    const ad::Matrix& t = targets_.at(p);
    ad::Var y = it->second.forward(tape, x, trainable);
    ad::Var tv = tape.constant(t);
    ad::Var nt = tape.constant((1.0 - t.array()).matrix());
    ad::Var ll = ad::add(ad::mul(tv, ad::safe_log(y)), ad::mul(nt, ad::safe_log(ad::one_minus(y))));
    ad::Var term = ad::neg(ad::mean(ll));
    total = total.valid() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(aligned_.size()));
}

ad::Var ConceptAligner::loss(ad::Tape& tape, ValuationNet& net, bool trainable) const {
  const ad::Matrix& t = targets(net.predicate());
  ad::Var y = net.forward(tape, tape.constant(grid_.offsets), trainable);
  ad::Var ll = ad::add(ad::mul(tape.constant(t), ad::safe_log(y)),
                       ad::mul(tape.constant((1.0 - t.array()).matrix()), ad::safe_log(ad::one_minus(y))));
  return ad::neg(ad::mean(ll));
}

AlignmentFit fit_alignment(ValuationNet& net, const ConceptAligner& aligner, int steps, double lr) {
  AdamConfig cfg;
  cfg.lr = lr;
  cfg.clip = 0.0;
  cfg.horizon = 0;
  Adam adam(net.parameters(), cfg);
  AlignmentFit fit;
  fit.initial_loss = aligner.loss_value(net);
  for (int s = 0; s < steps; ++s) {
    adam.zero_grad();
    ad::Tape tape;
    tape.backward(aligner.loss(tape, net, true));
    adam.step();
  }
  fit.steps = steps;
  fit.final_loss = aligner.loss_value(net);
  return fit;
}

double ConceptAligner::loss_value(const ValuationNet& net) const {
  const ad::Matrix& t = targets(net.predicate());
  const ad::Matrix y = net.eval(grid_.offsets);
  double s = 0.0;
  for (Eigen::Index i = 0; i < t.rows(); ++i) s += bce(t(i, 0), y(i, 0));
  return s / static_cast<double>(t.rows());
}

double ConceptAligner::loss_value(const ValuationMap& nets) const {
  if (aligned_.empty()) throw ConfigError("concept alignment needs at least one aligned predicate");
  double s = 0.0;
  for (const std::string& p : aligned_) {
    auto it = nets.find(p);
    if (it == nets.end()) throw ConfigError("no valuation net for aligned predicate '" + p + "'");
    s += loss_value(it->second);
  }
  return s / static_cast<double>(aligned_.size());
}

ad::Var concept_alignment_loss(ad::Tape& tape, ValuationMap& nets, const std::map<std::string, ProxyFn>& proxies,
                               const AlignmentGrid& grid, const std::vector<std::string>& aligned, bool trainable) {
  if (aligned.empty()) throw ConfigError("concept alignment needs at least one aligned predicate");
  ad::Var x = tape.constant(grid.offsets);
  ad::Var total;
  for (const std::string& p : aligned) {
    auto pit = proxies.find(p);
    if (pit == proxies.end()) throw MissingProxy("no proxy for aligned predicate '" + p + "'");
    auto nit = nets.find(p);
    if (nit == nets.end()) throw ConfigError("no valuation net for aligned predicate '" + p + "'");
    ad::Matrix t(grid.offsets.rows(), 1);
    for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, 0) = pit->second(grid.offsets(i, 0), grid.offsets(i, 1));
    ad::Var y = nit->second.forward(tape, x, trainable);
    ad::Var ll = ad::add(ad::mul(tape.constant(t), ad::safe_log(y)),
                         ad::mul(tape.constant((1.0 - t.array()).matrix()), ad::safe_log(ad::one_minus(y))));
    ad::Var term = ad::neg(ad::mean(ll));
    total = total.valid() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(aligned.size()));
}

double anneal_factor(long long t, long long T, double gamma) {
  if (T <= 0) throw ConfigError("anneal_factor: total steps must be positive");
  if (t < 0 || t > T) throw ConfigError("anneal_factor: step " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
  return 1.0 - gamma * static_cast<double>(t) / static_cast<double>(T);
}

Heatmap heatmap_offset(const OffsetFn& f, const std::string& predicate, int resolution) {
  if (resolution < 1) throw ConfigError("heatmap resolution must be at least 1");
  Heatmap h;
  h.predicate = predicate;
  h.mode = "offset";
  h.rows = h.cols = resolution;
  h.values.resize(static_cast<std::size_t>(resolution) * resolution);
  for (int r = 0; r < resolution; ++r) {
    const double dy = 2.0 * (r + 1) / (resolution + 1) - 1.0;
    for (int c = 0; c < resolution; ++c) {
      const double dx = 2.0 * (c + 1) / (resolution + 1) - 1.0;
      h.values[static_cast<std::size_t>(r * resolution + c)] = std::clamp(f(dx, dy), 0.0, 1.0);
    }
  }
  return h;
}

double scene_value(const OffsetFn& f, const Scene& scene, int anchor, double x, double y) {
  if (anchor < 0 || anchor >= static_cast<int>(scene.objects.size())) {
    throw ConfigError("anchor index " + std::to_string(anchor) + " out of range (scene has " +
                      std::to_string(scene.objects.size()) + " objects)");
  }
  const Object& a = scene.objects[static_cast<std::size_t>(anchor)];
  const Offset o = normalized_offset(x, y, a.x, a.y, scene.width, scene.height);
  return std::clamp(f(o.dx, o.dy), 0.0, 1.0);
}

Heatmap heatmap_scene(const OffsetFn& f, const std::string& predicate, const Scene& scene, int anchor, int resolution) {
  if (resolution < 1) throw ConfigError("heatmap resolution must be at least 1");
  scene_value(f, scene, anchor, 0.0, 0.0);
  Heatmap h;
  h.predicate = predicate;
  h.mode = "scene";
  h.rows = h.cols = resolution;
  h.width = scene.width;
  h.height = scene.height;
  h.values.resize(static_cast<std::size_t>(resolution) * resolution);
  for (int r = 0; r < resolution; ++r) {
    const double y = (r + 0.5) * scene.height / resolution;
    for (int c = 0; c < resolution; ++c) {
      const double x = (c + 0.5) * scene.width / resolution;
      h.values[static_cast<std::size_t>(r * resolution + c)] = scene_value(f, scene, anchor, x, y);
    }
  }
  return h;
}

void write_heatmap_csv(const Heatmap& h, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "# predicate,mode,rows,cols,W,H\n";
  out << "# " << h.predicate << "," << h.mode << "," << h.rows << "," << h.cols << "," << h.width << "," << h.height
      << "\n";
  out << std::setprecision(9);
  for (int r = 0; r < h.rows; ++r) {
    for (int c = 0; c < h.cols; ++c) {
      if (c) out << ",";
      out << h.at(r, c);
    }
    out << "\n";
  }
}

void write_heatmap_ppm(const Heatmap& h, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << "P5\n" << h.cols << " " << h.rows << "\n255\n";
  for (double v : h.values) {
    const int g = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out.put(static_cast<char>(static_cast<unsigned char>(g)));
  }
}

}  // namespace grail
