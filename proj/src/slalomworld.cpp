#include <algorithm>
#include <cmath>

#include "env_detail.hpp"

namespace grail::detail {

namespace {

using namespace slalom;

const std::vector<std::string> kActions = {"left_to_flag", "right_to_flag", "noop"};
const std::vector<std::string> kTypes = {"agent", "flag", "tree"};

// Object slots: agent, the two flags of the next gate, then trees in the full variant.
class SlalomWorld final : public Env {
 public:
  explicit SlalomWorld(EnvSpec spec) : spec_(std::move(spec)) {
    gates_ = static_cast<int>(spec_.number("gates", 10));
    gap_ = spec_.number("gap_width", 32);
    spacing_ = spec_.number("gate_spacing", 90);
    scroll_ = spec_.number("scroll_speed", 2.0);
    lateral_ = spec_.number("lateral_speed", 1.5);
    miss_penalty_ = spec_.number("miss_penalty", 5.0);
    tree_penalty_ = spec_.number("tree_penalty", 3.0);
    if (gates_ < 1) throw ConfigError("slalomworld: gates must be positive");
    if (gap_ <= 0 || gap_ >= kWidth - 40) throw ConfigError("slalomworld: gap_width out of range");
    if (spacing_ <= 0 || kSkierY + spacing_ > kHeight) throw ConfigError("slalomworld: gate_spacing out of range");
    if (scroll_ <= 0 || lateral_ <= 0) throw ConfigError("slalomworld: speeds must be positive");
  }

  Scene reset(std::uint64_t seed) override {
    rng_ = Rng(mix_seed(seed, 0x51a1));
    t_ = 0;
    x_ = 80;
    orientation_ = 0;
    passed_ = 0;
    missed_ = 0;
    next_gate(kSkierY + spacing_);
    return scene();
  }

  StepResult step(int action) override {
    check_action(action);
    StepResult r;
    ++t_;
    if (action == kLeft) orientation_ = std::max(-1, orientation_ - 1);
    if (action == kRight) orientation_ = std::min(1, orientation_ + 1);
    x_ = std::clamp(x_ + orientation_ * lateral_, 2.0, kWidth - 2.0);
    gate_y_ -= scroll_;
    for (double& ty : tree_y_) ty -= scroll_;

    if (spec_.full()) {
      r.reward -= 1.0;
      for (std::size_t i = 0; i < tree_x_.size(); ++i) {
        if (!tree_hit_[i] && std::fabs(tree_x_[i] - x_) < 5.0 && std::fabs(tree_y_[i] - kSkierY) < 4.0) {
          tree_hit_[i] = true;
          r.reward -= tree_penalty_;
          r.info.events.push_back("tree");
        }
      }
    }

    if (gate_y_ <= kSkierY) {
      const bool through = x_ > gate_x_ - gap_ / 2 && x_ < gate_x_ + gap_ / 2;
      if (through) {
        ++passed_;
        r.info.events.push_back("gate");
      } else {
        ++missed_;
        r.info.events.push_back("miss");
        if (spec_.full()) r.reward -= miss_penalty_;
      }
      if (passed_ + missed_ >= gates_) {
        r.done = true;
        if (missed_ == 0) {
          r.reward += spec_.goal_reward;
          r.info.goal_achieved = true;
          r.info.events.push_back("course");
        }
      } else {
        next_gate(gate_y_ + spacing_);
      }
    }
    if (t_ >= spec_.episode_cap) r.done = true;
    r.scene = scene();
    return r;
  }

  Scene scene() const override {
    static const char* kOrient[] = {"left", "straight", "right"};
    Scene s;
    s.width = kWidth;
    s.height = kHeight;
    s.objects.push_back(Object{"agent", x_, kSkierY, true, kOrient[orientation_ + 1]});
    const double gy = std::clamp(gate_y_, 0.0, kHeight);
    s.objects.push_back(Object{"flag", gate_x_ - gap_ / 2, gy, true, ""});
    s.objects.push_back(Object{"flag", gate_x_ + gap_ / 2, gy, true, ""});
    if (spec_.full()) {
      for (std::size_t i = 0; i < tree_x_.size(); ++i) {
        const bool vis = tree_y_[i] >= 0.0 && tree_y_[i] <= kHeight;
        s.objects.push_back(Object{"tree", tree_x_[i], std::clamp(tree_y_[i], 0.0, kHeight), vis, ""});
      }
    }
    s.attributes["gates_passed"] = passed_;
    s.attributes["gates_missed"] = missed_;
    return s;
  }

  const std::vector<std::string>& actions() const override { return kActions; }
  const std::vector<std::string>& object_types() const override { return kTypes; }
  int max_objects() const override { return 5; }
  const EnvSpec& spec() const override { return spec_; }

 private:
  void next_gate(double y) {
    gate_x_ = std::round(rng_.uniform(30.0 + gap_ / 2, kWidth - 30.0 - gap_ / 2));
    gate_y_ = y;
    tree_x_.clear();
    tree_y_.clear();
    tree_hit_.clear();
    for (int i = 0; i < 2; ++i) {
      double tx = std::round(rng_.uniform(8.0, kWidth - 8.0));
      if (std::fabs(tx - gate_x_) < gap_) tx = gate_x_ + (tx < gate_x_ ? -gap_ : gap_);
      tree_x_.push_back(std::clamp(tx, 8.0, kWidth - 8.0));
      tree_y_.push_back(y - spacing_ * (0.3 + 0.4 * i));
      tree_hit_.push_back(false);
    }
  }

  EnvSpec spec_;
  int gates_ = 10;
  double gap_ = 32;
  double spacing_ = 90;
  double scroll_ = 2;
  double lateral_ = 1.5;
  double miss_penalty_ = 5;
  double tree_penalty_ = 3;

  Rng rng_;
  int t_ = 0;
  double x_ = 80;
  int orientation_ = 0;
  int passed_ = 0;
  int missed_ = 0;
  double gate_x_ = 80;
  double gate_y_ = 0;
  std::vector<double> tree_x_;
  std::vector<double> tree_y_;
  std::vector<bool> tree_hit_;
};

double orientation_is(const Scene& s, int obj, const char* which) {
  if (obj < 0 || obj >= static_cast<int>(s.objects.size())) return 0.0;
  return s.objects[static_cast<std::size_t>(obj)].orientation == which ? 1.0 : 0.0;
}

}  // namespace

std::unique_ptr<Env> make_slalomworld(const EnvSpec& spec) { return std::make_unique<SlalomWorld>(spec); }

const StatusRegistry& slalomworld_status() {
  static const StatusRegistry reg = {
      {"left_oriented", [](const Scene& s, int o) { return orientation_is(s, o, "left"); }},
      {"right_oriented", [](const Scene& s, int o) { return orientation_is(s, o, "right"); }},
      {"straight_oriented", [](const Scene& s, int o) { return orientation_is(s, o, "straight"); }},
      {"true", [](const Scene&, int) { return 1.0; }},
  };
  return reg;
}

}  // namespace grail::detail
