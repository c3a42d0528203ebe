#include "grail/optim.hpp"

#include <algorithm>
#include <cmath>

namespace grail {

double global_grad_norm(const std::vector<ad::Parameter*>& params) {
  double sq = 0.0;
  for (const ad::Parameter* p : params) {
    if (p->grad.size() == p->value.size()) sq += p->grad.squaredNorm();
  }
  return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<ad::Parameter*>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (ad::Parameter* p : params) p->grad *= s;
  }
  return norm;
}

Adam::Adam(std::vector<ad::Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (ad::Parameter* p : params_) {
    m_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
    if (p->grad.size() != p->value.size()) p->zero_grad();
  }
}

double Adam::current_lr() const {
  if (cfg_.horizon <= 0) return cfg_.lr;
  const double frac = 1.0 - static_cast<double>(t_) / static_cast<double>(cfg_.horizon);
  return cfg_.lr * std::max(0.0, frac);
}

double Adam::step() {
  const double norm = clip_grad_norm(params_, cfg_.clip);
  const double lr = current_lr();
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter& p = *params_[i];
    auto g = p.grad.array();
    m_[i].array() = cfg_.beta1 * m_[i].array() + (1.0 - cfg_.beta1) * g;
    v_[i].array() = cfg_.beta2 * v_[i].array() + (1.0 - cfg_.beta2) * g.square();
    p.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
  return norm;
}

void Adam::zero_grad() {
  for (ad::Parameter* p : params_) p->zero_grad();
}

}  // namespace grail
