#include <algorithm>
#include <cmath>

#include "env_detail.hpp"

namespace grail::detail {

namespace {

using namespace ladder;

const std::vector<std::string> kActions = {"up_ladder", "right_ladder", "left_ladder"};
const std::vector<std::string> kTypes = {"agent", "child", "ladder", "monkey", "throwncoconut"};

// Object slots: agent, child, ladders..., then monkey and coconut in the full variant.
class LadderWorld final : public Env {
 public:
  explicit LadderWorld(EnvSpec spec) : spec_(std::move(spec)) {
    floors_ = spec_.numbers("floors", {190, 130, 70});
    top_y_ = spec_.number("top_y", 10);
    ladder_x_ = spec_.numbers("ladder_x", {132, 28, 132});
    spawn_lo_ = spec_.number("spawn_x_min", 8);
    spawn_hi_ = spec_.number("spawn_x_max", 100);
    monkey_speed_ = spec_.number("monkey_speed", 1.5);
    coconut_period_ = static_cast<int>(spec_.number("coconut_period", 90));
    coconut_speed_ = spec_.number("coconut_speed", 3.0);
    climb_snap_ = spec_.number("climb_snap", 12);
    if (floors_.empty() || floors_.size() != ladder_x_.size()) {
      throw ConfigError("ladderworld: floors and ladder_x must be non-empty and of equal length");
    }
    double prev = kHeight;
    for (double f : floors_) {
      if (!(f < prev) || f <= top_y_) throw ConfigError("ladderworld: floors must strictly decrease and stay below top_y");
      prev = f;
    }
    if (top_y_ < 0.0) throw ConfigError("ladderworld: top_y must be inside the frame");
    for (double x : ladder_x_) {
      if (x < 4.0 || x > kWidth - 4.0) throw ConfigError("ladderworld: ladder_x outside the walkable range");
    }
    if (!(spawn_lo_ >= 4.0 && spawn_hi_ >= spawn_lo_ && spawn_hi_ <= kWidth - 4.0)) {
      throw ConfigError("ladderworld: invalid spawn range");
    }
    if (climb_snap_ < 0.0) throw ConfigError("ladderworld: climb_snap must be non-negative");
    if (coconut_period_ < 1) throw ConfigError("ladderworld: coconut_period must be positive");
  }

  Scene reset(std::uint64_t seed) override {
    rng_ = Rng(mix_seed(seed, 0x1add));
    t_ = 0;
    monkey_x_ = rng_.uniform(20.0, kWidth - 20.0);
    monkey_dir_ = rng_.uniform() < 0.5 ? -1.0 : 1.0;
    coconut_phase_ = static_cast<int>(rng_.below(static_cast<std::uint64_t>(coconut_period_)));
    respawn();
    return scene();
  }

  StepResult step(int action) override {
    check_action(action);
    StepResult r;
    ++t_;
    const int rung = ladder_under_agent();
    const bool mid_ladder = rung >= 0 && y_ < floors_[static_cast<std::size_t>(rung)];
    if (action == kUp) {
      if (rung >= 0) {
        x_ = ladder_x_[static_cast<std::size_t>(rung)];
        const double top = ladder_top(rung);
        y_ -= kClimbStep;
        if (y_ <= top + climb_snap_) y_ = top;
        if (y_ == top) {
          level_ = rung + 1;
          r.info.events.push_back("level_up");
          if (spec_.full() && level_ > best_level_) r.reward += 1.0;
          best_level_ = std::max(best_level_, level_);
        }
      }
    } else if (!mid_ladder) {
      const double dir = action == kRight ? 1.0 : -1.0;
      x_ = std::clamp(x_ + dir * kMoveStep, 4.0, kWidth - 4.0);
      orientation_ = action == kRight ? "right" : "left";
    }

    if (level_ == static_cast<int>(floors_.size())) {
      r.reward += spec_.goal_reward;
      r.info.goal_achieved = true;
      r.info.events.push_back("goal");
      respawn();
    }

    if (spec_.full()) {
      move_hazards();
      if (hazard_contact()) {
        r.info.events.push_back("death");
        r.done = true;
      }
    }
    if (t_ >= spec_.episode_cap) r.done = true;
    r.scene = scene();
    return r;
  }

  Scene scene() const override {
    Scene s;
    s.width = kWidth;
    s.height = kHeight;
    s.objects.push_back(Object{"agent", x_, y_, true, orientation_});
    s.objects.push_back(Object{"child", ladder_x_.back(), top_y_, true, ""});
    for (std::size_t i = 0; i < ladder_x_.size(); ++i) {
      s.objects.push_back(Object{"ladder", ladder_x_[i], floors_[i], true, ""});
    }
    if (spec_.full()) {
      s.objects.push_back(Object{"monkey", monkey_x_, floors_.size() > 1 ? floors_[1] : floors_[0], true, ""});
      s.objects.push_back(Object{"throwncoconut", coconut_x_, coconut_y_, coconut_live_, ""});
    }
    s.attributes["level"] = level_;
    return s;
  }

  const std::vector<std::string>& actions() const override { return kActions; }
  const std::vector<std::string>& object_types() const override { return kTypes; }
  int max_objects() const override { return static_cast<int>(ladder_x_.size()) + 4; }
  const EnvSpec& spec() const override { return spec_; }

 private:
  double ladder_top(int i) const {
    return static_cast<std::size_t>(i) + 1 < floors_.size() ? floors_[static_cast<std::size_t>(i) + 1] : top_y_;
  }

  // Ladder whose column the agent stands in, below the ladder's top.
  int ladder_under_agent() const {
    for (std::size_t i = 0; i < ladder_x_.size(); ++i) {
      if (std::fabs(x_ - ladder_x_[i]) <= kLadderReach && y_ <= floors_[i] && y_ > ladder_top(static_cast<int>(i))) {
        return static_cast<int>(i);
      }
    }
    return -1;
  }

  void respawn() {
    x_ = std::round(rng_.uniform(spawn_lo_, spawn_hi_));
    y_ = floors_[0];
    level_ = 0;
    best_level_ = 0;
    orientation_ = "right";
  }

  void move_hazards() {
    monkey_x_ += monkey_dir_ * monkey_speed_;
    if (monkey_x_ < 20.0 || monkey_x_ > kWidth - 20.0) {
      monkey_dir_ = -monkey_dir_;
      monkey_x_ = std::clamp(monkey_x_, 20.0, kWidth - 20.0);
    }
    if ((t_ + coconut_phase_) % coconut_period_ == 0) {
      coconut_live_ = true;
      coconut_x_ = std::round(rng_.uniform(10.0, kWidth - 10.0));
      coconut_y_ = top_y_;
    } else if (coconut_live_) {
      coconut_y_ += coconut_speed_;
      if (coconut_y_ > floors_[0]) {
        coconut_live_ = false;
        coconut_y_ = floors_[0];
      }
    }
  }

  bool hazard_contact() const {
    const double my = floors_.size() > 1 ? floors_[1] : floors_[0];
    if (std::fabs(x_ - monkey_x_) < 8.0 && std::fabs(y_ - my) < 10.0) return true;
    return coconut_live_ && std::fabs(x_ - coconut_x_) < 6.0 && std::fabs(y_ - coconut_y_) < 10.0;
  }

  EnvSpec spec_;
  std::vector<double> floors_;
  std::vector<double> ladder_x_;
  double top_y_ = 10;
  double spawn_lo_ = 8;
  double spawn_hi_ = 100;
  double monkey_speed_ = 1.5;
  int coconut_period_ = 90;
  double coconut_speed_ = 3.0;
  // The last stretch of a ladder is skipped: within this many pixels of the
  // top the agent steps off onto the floor above.
  double climb_snap_ = 12;

  Rng rng_;
  int t_ = 0;
  double x_ = 0;
  double y_ = 0;
  int level_ = 0;
  int best_level_ = 0;
  std::string orientation_ = "right";
  double monkey_x_ = 80;
  double monkey_dir_ = 1;
  int coconut_phase_ = 0;
  bool coconut_live_ = false;
  double coconut_x_ = 80;
  double coconut_y_ = 10;
};

}  // namespace

std::unique_ptr<Env> make_ladderworld(const EnvSpec& spec) { return std::make_unique<LadderWorld>(spec); }

const StatusRegistry& ladderworld_status() {
  static const StatusRegistry reg = {
      {"nothing_around",
       [](const Scene& s, int) {
         const int a = s.agent_index();
         if (a < 0) return 1.0;
         for (const Object& o : s.objects) {
           if (!o.visible || (o.type != "monkey" && o.type != "throwncoconut")) continue;
           if (distance(o, s.objects[static_cast<std::size_t>(a)]) < kHazardRadius) return 0.0;
         }
         return 1.0;
       }},
  };
  return reg;
}

}  // namespace grail::detail
