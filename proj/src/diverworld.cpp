#include <algorithm>
#include <cmath>

#include "env_detail.hpp"

namespace grail::detail {

namespace {

using namespace diver;

const std::vector<std::string> kActions = {"up_air",        "up_rescue",     "left_to_diver",
                                           "right_to_diver", "up_to_diver", "down_to_diver"};
const std::vector<std::string> kTypes = {"agent", "oxygen_bar", "diver", "enemy", "missile"};

struct Mover {
  double x = 0;
  double y = 0;
  double dir = 1;
  bool visible = false;
  int timer = 0;
};

// Object slots: agent, oxygen bar, divers, then enemies and the missile in the full variant.
class DiverWorld final : public Env {
 public:
  explicit DiverWorld(EnvSpec spec) : spec_(std::move(spec)) {
    lanes_ = spec_.numbers("diver_lanes", {60, 100, 140, 180});
    enemy_lanes_ = spec_.numbers("enemy_lanes", {80, 120, 160});
    oxygen_frames_ = spec_.number("oxygen_frames", 900);
    refill_rate_ = spec_.number("refill_rate", 0.02);
    respawn_frames_ = static_cast<int>(spec_.number("diver_respawn", 60));
    diver_speed_ = spec_.number("diver_speed", 0.5);
    enemy_speed_ = spec_.number("enemy_speed", 1.0);
    missile_speed_ = spec_.number("missile_speed", 2.5);
    if (lanes_.empty() || static_cast<int>(lanes_.size()) > kMaxDivers) {
      throw ConfigError("diverworld: diver_lanes must list 1 to 4 lanes");
    }
    for (double y : lanes_) {
      if (y <= kSurfaceY || y > kHeight - 10) throw ConfigError("diverworld: diver lane outside the water column");
    }
    if (oxygen_frames_ <= 0 || refill_rate_ <= 0 || respawn_frames_ < 0) {
      throw ConfigError("diverworld: oxygen_frames, refill_rate must be positive and diver_respawn non-negative");
    }
  }

  Scene reset(std::uint64_t seed) override {
    rng_ = Rng(mix_seed(seed, 0xd1e5));
    t_ = 0;
    x_ = 80;
    y_ = kSurfaceY;
    oxygen_ = 1.0;
    carried_ = 0;
    orientation_ = "right";
    divers_.assign(lanes_.size(), Mover{});
    for (std::size_t i = 0; i < lanes_.size(); ++i) spawn_diver(i);
    enemies_.clear();
    for (double y : enemy_lanes_) {
      enemies_.push_back(Mover{rng_.uniform(10.0, kWidth - 10.0), y, rng_.uniform() < 0.5 ? -1.0 : 1.0, true, 0});
    }
    missile_ = Mover{0, enemy_lanes_.empty() ? 120.0 : enemy_lanes_[0] + 20.0, 1.0, false, 0};
    return scene();
  }

  StepResult step(int action) override {
    check_action(action);
    StepResult r;
    ++t_;
    switch (action) {
      case kUpAir:
      case kUpRescue:
      case kUp: y_ -= kMoveStep; break;
      case kDown: y_ += kMoveStep; break;
      case kLeft: x_ -= kMoveStep; orientation_ = "left"; break;
      case kRight: x_ += kMoveStep; orientation_ = "right"; break;
      default: break;
    }
    x_ = std::clamp(x_, 4.0, kWidth - 4.0);
    y_ = std::clamp(y_, kSurfaceY, kHeight - 10.0);

    const bool surfaced = y_ <= kSurfaceY;
    if (surfaced) {
      oxygen_ = std::min(1.0, oxygen_ + refill_rate_);
      if (carried_ >= kFullDivers) {
        carried_ = 0;
        r.reward += spec_.goal_reward;
        r.info.goal_achieved = true;
        r.info.events.push_back("rescue");
      }
    } else {
      oxygen_ = std::max(0.0, oxygen_ - 1.0 / oxygen_frames_);
    }

    for (std::size_t i = 0; i < divers_.size(); ++i) {
      Mover& d = divers_[i];
      if (!d.visible) {
        if (--d.timer <= 0) spawn_diver(i);
        continue;
      }
      d.x += d.dir * diver_speed_;
      if (d.x < 10.0 || d.x > kWidth - 10.0) {
        d.dir = -d.dir;
        d.x = std::clamp(d.x, 10.0, kWidth - 10.0);
      }
      if (carried_ < kFullDivers && std::fabs(d.x - x_) < 8.0 && std::fabs(d.y - y_) < 8.0) {
        ++carried_;
        d.visible = false;
        d.timer = respawn_frames_;
        r.info.events.push_back("diver");
        if (spec_.full()) r.reward += 1.0;
      }
    }

    if (oxygen_ <= 0.0) {
      r.info.events.push_back("out_of_air");
      r.done = true;
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
    s.objects.push_back(Object{"oxygen_bar", 80.0, 205.0, true, ""});
    for (const Mover& d : divers_) s.objects.push_back(Object{"diver", d.x, d.y, d.visible, ""});
    if (spec_.full()) {
      for (const Mover& e : enemies_) s.objects.push_back(Object{"enemy", e.x, e.y, true, ""});
      s.objects.push_back(Object{"missile", missile_.x, missile_.y, missile_.visible, ""});
    }
    s.attributes["oxygen"] = oxygen_;
    s.attributes["carried"] = carried_;
    return s;
  }

  const std::vector<std::string>& actions() const override { return kActions; }
  const std::vector<std::string>& object_types() const override { return kTypes; }
  int max_objects() const override {
    return 2 + static_cast<int>(lanes_.size()) + static_cast<int>(enemy_lanes_.size()) + 1;
  }
  const EnvSpec& spec() const override { return spec_; }

 private:
  void spawn_diver(std::size_t i) {
    Mover& d = divers_[i];
    d.x = std::round(rng_.uniform(10.0, kWidth - 10.0));
    d.y = lanes_[i];
    d.dir = rng_.uniform() < 0.5 ? -1.0 : 1.0;
    d.visible = true;
    d.timer = 0;
  }

  void move_hazards() {
    for (Mover& e : enemies_) {
      e.x += e.dir * enemy_speed_;
      if (e.x < 6.0 || e.x > kWidth - 6.0) {
        e.dir = -e.dir;
        e.x = std::clamp(e.x, 6.0, kWidth - 6.0);
      }
    }
    if (!missile_.visible) {
      if (++missile_.timer >= 120) {
        missile_.visible = true;
        missile_.timer = 0;
        missile_.dir = rng_.uniform() < 0.5 ? -1.0 : 1.0;
        missile_.x = missile_.dir > 0 ? 2.0 : kWidth - 2.0;
      }
    } else {
      missile_.x += missile_.dir * missile_speed_;
      if (missile_.x < 0.0 || missile_.x > kWidth) {
        missile_.visible = false;
        missile_.x = std::clamp(missile_.x, 0.0, kWidth);
      }
    }
  }

  bool hazard_contact() const {
    for (const Mover& e : enemies_) {
      if (std::fabs(e.x - x_) < 7.0 && std::fabs(e.y - y_) < 6.0) return true;
    }
    return missile_.visible && std::fabs(missile_.x - x_) < 5.0 && std::fabs(missile_.y - y_) < 4.0;
  }

  EnvSpec spec_;
  std::vector<double> lanes_;
  std::vector<double> enemy_lanes_;
  double oxygen_frames_ = 900;
  double refill_rate_ = 0.02;
  int respawn_frames_ = 60;
  double diver_speed_ = 0.5;
  double enemy_speed_ = 1.0;
  double missile_speed_ = 2.5;

  Rng rng_;
  int t_ = 0;
  double x_ = 80;
  double y_ = kSurfaceY;
  double oxygen_ = 1.0;
  int carried_ = 0;
  std::string orientation_ = "right";
  std::vector<Mover> divers_;
  std::vector<Mover> enemies_;
  Mover missile_;
};

double divers_carried(const Scene& s) { return s.attribute("carried"); }

}  // namespace

std::unique_ptr<Env> make_diverworld(const EnvSpec& spec) { return std::make_unique<DiverWorld>(spec); }

const StatusRegistry& diverworld_status() {
  static const StatusRegistry reg = {
      {"oxygen_low", [](const Scene& s, int) { return s.attribute("oxygen", 1.0) < kOxygenLow ? 1.0 : 0.0; }},
      {"full_divers", [](const Scene& s, int) { return divers_carried(s) >= kFullDivers ? 1.0 : 0.0; }},
      {"not_full_divers", [](const Scene& s, int) { return divers_carried(s) >= kFullDivers ? 0.0 : 1.0; }},
      {"visible_diver",
       [](const Scene& s, int obj) {
         if (obj < 0 || obj >= static_cast<int>(s.objects.size())) return 0.0;
         return s.objects[static_cast<std::size_t>(obj)].visible ? 1.0 : 0.0;
       }},
  };
  return reg;
}

}  // namespace grail::detail
