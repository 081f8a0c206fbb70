#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "augbc/dataset.hpp"

namespace augbc {

enum class Heading { north = 0, east = 1, south = 2, west = 3 };

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

struct Pose {
  Cell cell;
  Heading heading = Heading::north;
  bool operator==(const Pose&) const = default;
};

// Action indices. Shoot is accepted but has no effect in this world.
inline constexpr int kActForward = 0;
inline constexpr int kActBackward = 1;
inline constexpr int kActRotateRight = 2;
inline constexpr int kActRotateLeft = 3;
inline constexpr int kActJump = 4;
inline constexpr int kActShoot = 5;
inline constexpr int kActSidestepRight = 6;
inline constexpr int kActSidestepLeft = 7;
inline constexpr int kActNoOp = 8;

inline constexpr int kEpisodeTimeout = 750;
inline constexpr int kJumpCooldownSteps = 3;

// Semantic-map symbols.
inline constexpr std::int32_t kSymEmpty = 0;
inline constexpr std::int32_t kSymGround = 1;
inline constexpr std::int32_t kSymObstacle = 2;
inline constexpr std::int32_t kSymButton = 3;
inline constexpr std::int32_t kSymDoor = 4;
inline constexpr std::int32_t kSymGoal = 5;
inline constexpr std::int32_t kSymWall = 6;
inline constexpr int kSymbolCount = 7;

/// A rectangular grid level. Cells: '.' floor, '#' wall, 'o' low obstacle
/// (jumpable), 'B' button, 'D' door, 'G' goal, 'S' agent start. The border
/// ring is wall. Pressing the button opens every door for door_open_duration
/// steps; the goal sits behind the door.
struct WorldLayout {
  std::string name;
  std::string difficulty_tag;      // easy | medium | hard
  std::vector<std::string> grid;   // row 0 is the top; grid[r][c]
  int door_open_duration = 40;

  // Derived from the grid at load time.
  Cell button_cell;
  std::vector<Cell> door_cells;
  Cell goal_cell;
  struct GoalPose {
    int x = 0;  // column
    int z = 0;  // row
    int rotation_deg = 0;
  } goal_pose;
  Pose agent_start;
  std::vector<Cell> obstacles;  // low-obstacle cells

  // Optional waypoint corridors pinning the two demonstration routes.
  std::vector<Cell> corridor_a;
  std::vector<Cell> corridor_b;

  int width() const { return grid.empty() ? 0 : static_cast<int>(grid[0].size()); }
  int height() const { return static_cast<int>(grid.size()); }
  bool in_bounds(Cell c) const {
    return c.row >= 0 && c.row < height() && c.col >= 0 && c.col < width();
  }
  char at(Cell c) const { return in_bounds(c) ? grid[c.row][c.col] : '#'; }

  /// Structural checks plus reachability: the button must be reachable from
  /// the start with doors closed, the goal from the button with doors open.
  void validate() const;
};

/// Loads one of the built-in layouts by name, or a JSON layout file by path.
WorldLayout load_layout(const std::string& name_or_path);
WorldLayout parse_layout_json(const std::string& text);
std::vector<std::string> builtin_layout_names();

struct EnvState {
  Pose pose;
  int step_count = 0;
  int door_timer = 0;           // steps the door stays open; 0 = closed
  bool button_pressed = false;  // latches once pressed this episode
  int jump_cooldown = 0;
  bool airborne = false;  // true only during the step that jumps
  bool done = false;
  bool success = false;
};

/// The observation schema every layout of the standard size publishes:
/// goal and per-entity projections plus door-timer fraction (continuous),
/// status flags plus the flattened 5x5x5 egocentric semantic map
/// (categorical).
StateSchema make_env_schema(const WorldLayout& layout);

/// Deterministic simulator. One instance per worker; no shared state.
class GridWorld {
 public:
  explicit GridWorld(WorldLayout layout);

  const WorldLayout& layout() const { return layout_; }
  const EnvState& state() const { return state_; }
  const StateSchema& schema() const { return schema_; }

  /// Starts an episode. With jitter_radius > 0 the start cell is drawn
  /// uniformly from the walkable cells within that Chebyshev radius of the
  /// nominal start (heading unchanged); the seed drives only this draw.
  StateVector reset(std::uint64_t seed, int jitter_radius = 0);

  struct StepResult {
    StateVector observation;
    bool done = false;
    bool success = false;
  };

  /// Advances one step. Throws std::logic_error after the episode ended and
  /// std::invalid_argument on an out-of-range action.
  StepResult step(int action);

  StateVector observe() const;

 private:
  WorldLayout layout_;
  StateSchema schema_;
  EnvState state_;
};

enum class PathChoice { A, B };

/// Plans the full action sequence start -> button -> door -> goal along the
/// chosen corridor, from an arbitrary start pose. Throws std::runtime_error
/// when the corridor is blocked.
std::vector<int> plan_expert_actions(const WorldLayout& layout, PathChoice path, Pose start);

/// Runs the planned actions from the nominal start and records the
/// trajectory. The result is always successful (or it throws).
Trajectory scripted_expert(const WorldLayout& layout, PathChoice path);

/// Expert demonstrations alternating path A/B per episode. With
/// jitter_radius > 0 each episode starts from a jittered pose and the expert
/// replans. Deterministic per (layout, episodes, seed, jitter_radius).
DemoDataset generate_demos(const WorldLayout& layout, std::size_t episodes, std::uint64_t seed,
                           int jitter_radius = 0);

}  // namespace augbc
