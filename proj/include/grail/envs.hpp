#pragma once

// Deterministic object-centric toy environments.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "grail/reasoner.hpp"
#include "grail/rng.hpp"
#include "grail/scene.hpp"

namespace grail {

struct EnvSpec {
  std::string name;
  std::string variant = "simplified";
  /// Maximum number of base steps per episode.
  int episode_cap = 3000;
  double goal_reward = 20.0;
  /// Layout parameters by key; each env documents and validates its own.
  std::map<std::string, std::string> layout;

  bool full() const { return variant == "full"; }
  double number(const std::string& key, double fallback) const;
  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) const;
};

/// Reads an env fixture: `[env]` name/variant/episode_cap/goal_reward and a
/// `[layout]` section.
EnvSpec parse_env_spec(const std::string& text);
EnvSpec load_env_spec(const std::string& path);

struct StepInfo {
  bool goal_achieved = false;
  std::vector<std::string> events;
};

struct StepResult {
  Scene scene;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class Env {
 public:
  virtual ~Env() = default;

  virtual Scene reset(std::uint64_t seed) = 0;
  virtual StepResult step(int action) = 0;
  virtual Scene scene() const = 0;

  virtual const std::vector<std::string>& actions() const = 0;
  int num_actions() const { return static_cast<int>(actions().size()); }
  /// Object types in feature-slot order and the per-scene object cap.
  virtual const std::vector<std::string>& object_types() const = 0;
  virtual int max_objects() const = 0;
  virtual const EnvSpec& spec() const = 0;

 protected:
  void check_action(int action) const;
};

std::unique_ptr<Env> make_env(const EnvSpec& spec);
/// Status predicate functions of the named environment.
const StatusRegistry& status_registry(const std::string& env_name);
std::vector<std::string> env_names();

/// Repeats `action` up to `repeat` base steps, summing rewards and stopping
/// early at episode end.
StepResult step_repeated(Env& env, int action, int repeat);

/// Seed plus action indices; replaying reproduces the trajectory.
struct Replay {
  std::string env_fixture;
  std::uint64_t seed = 0;
  int action_repeat = 1;
  std::vector<int> actions;
};

std::string format_replay(const Replay& r);
Replay parse_replay(const std::string& text);

struct ReplayOutcome {
  double total_reward = 0.0;
  int goals = 0;
  int steps = 0;
  bool done = false;
  std::vector<double> rewards;
};

ReplayOutcome run_replay(Env& env, const Replay& r);

// Layout constants shared with tests and scripted controllers.
namespace ladder {
inline constexpr double kWidth = 160.0;
inline constexpr double kHeight = 210.0;
inline constexpr double kMoveStep = 3.0;
inline constexpr double kClimbStep = 3.0;
inline constexpr double kLadderReach = 10.0;
inline constexpr double kHazardRadius = 32.0;
enum Action { kUp = 0, kRight = 1, kLeft = 2 };
}  // namespace ladder

namespace diver {
inline constexpr double kWidth = 160.0;
inline constexpr double kHeight = 210.0;
inline constexpr double kSurfaceY = 20.0;
inline constexpr double kMoveStep = 3.0;
inline constexpr int kMaxDivers = 4;
inline constexpr int kFullDivers = 6;
inline constexpr double kOxygenLow = 0.25;
enum Action { kUpAir = 0, kUpRescue = 1, kLeft = 2, kRight = 3, kUp = 4, kDown = 5 };
}  // namespace diver

namespace slalom {
inline constexpr double kWidth = 160.0;
inline constexpr double kHeight = 210.0;
inline constexpr double kSkierY = 50.0;
enum Action { kLeft = 0, kRight = 1, kNoop = 2 };
}  // namespace slalom

}  // namespace grail
