#include "augbc/env.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "augbc/rng.hpp"

namespace augbc {

namespace detail {
const std::vector<std::pair<std::string, std::string>>& builtin_layouts();
}

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw ValidationError(msg); }

constexpr std::array<int, 4> kDr = {-1, 0, 1, 0};  // N, E, S, W
constexpr std::array<int, 4> kDc = {0, 1, 0, -1};

Cell ahead(Cell c, Heading h, int dist = 1) {
  int d = static_cast<int>(h);
  return {c.row + kDr[d] * dist, c.col + kDc[d] * dist};
}

Heading turn(Heading h, int quarter_turns) {
  return static_cast<Heading>((static_cast<int>(h) + quarter_turns + 4) % 4);
}

/// Floor-level passability; low obstacles and walls block, doors depend on
/// the timer.
bool walkable(const WorldLayout& layout, Cell c, bool doors_open) {
  switch (layout.at(c)) {
    case '.':
    case 'S':
    case 'B':
    case 'G':
      return true;
    case 'D':
      return doors_open;
    default:
      return false;
  }
}

std::int32_t level_symbol(char c) {
  switch (c) {
    case '#':
      return kSymWall;
    case 'o':
      return kSymObstacle;
    case 'B':
      return kSymButton;
    case 'D':
      return kSymDoor;
    case 'G':
      return kSymGoal;
    default:
      return kSymEmpty;
  }
}

/// Shortest cell path (inclusive of endpoints) under BFS with deterministic
/// neighbor order; a jump edge crosses one low obstacle. Empty if unreachable.
std::vector<Cell> bfs_path(const WorldLayout& layout, Cell from, Cell to, bool doors_open) {
  const int w = layout.width();
  const int h = layout.height();
  auto index = [w](Cell c) { return c.row * w + c.col; };
  std::vector<int> parent(static_cast<std::size_t>(w) * h, -1);
  std::deque<Cell> queue;
  parent[index(from)] = index(from);
  queue.push_back(from);

  while (!queue.empty()) {
    Cell u = queue.front();
    queue.pop_front();
    if (u == to) break;
    auto visit = [&](Cell v) {
      if (layout.in_bounds(v) && walkable(layout, v, doors_open) && parent[index(v)] < 0) {
        parent[index(v)] = index(u);
        queue.push_back(v);
      }
    };
    for (int d = 0; d < 4; ++d) visit({u.row + kDr[d], u.col + kDc[d]});
    for (int d = 0; d < 4; ++d) {
      Cell mid{u.row + kDr[d], u.col + kDc[d]};
      Cell land{u.row + 2 * kDr[d], u.col + 2 * kDc[d]};
      if (layout.at(mid) == 'o' && layout.in_bounds(land) && walkable(layout, land, doors_open) &&
          parent[index(land)] < 0) {
        parent[index(land)] = index(u);
        queue.push_back(land);
      }
    }
  }

  if (parent[index(to)] < 0) return {};
  std::vector<Cell> path;
  for (Cell c = to;; c = {parent[index(c)] / w, parent[index(c)] % w}) {
    path.push_back(c);
    if (c == from) break;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

Cell require_cell(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
    fail(std::string("layout: ") + what + " must be a [row, col] pair");
  return {j[0].get<int>(), j[1].get<int>()};
}

}  // namespace

void WorldLayout::validate() const {
  if (grid.size() < 5) fail("layout: grid must have at least 5 rows");
  for (const std::string& row : grid) {
    if (static_cast<int>(row.size()) != width()) fail("layout: grid rows differ in length");
    for (char c : row) {
      if (std::string(".#oBDGS").find(c) == std::string::npos)
        fail(std::string("layout: unknown cell character '") + c + "'");
    }
  }
  if (width() < 5) fail("layout: grid must have at least 5 columns");
  for (int r = 0; r < height(); ++r) {
    if (grid[r][0] != '#' || grid[r][width() - 1] != '#') fail("layout: border must be wall");
  }
  for (int c = 0; c < width(); ++c) {
    if (grid[0][c] != '#' || grid[height() - 1][c] != '#') fail("layout: border must be wall");
  }

  if (difficulty_tag != "easy" && difficulty_tag != "medium" && difficulty_tag != "hard")
    fail("layout: difficulty must be easy, medium, or hard");
  if (door_open_duration < 1) fail("layout: door_open_duration must be >= 1");
  if (door_cells.empty()) fail("layout: no door cell");

  for (const std::vector<Cell>& corridor : {corridor_a, corridor_b}) {
    for (Cell c : corridor) {
      if (!in_bounds(c) || !walkable(*this, c, false)) fail("layout: corridor waypoint not walkable");
    }
  }

  if (bfs_path(*this, agent_start.cell, button_cell, false).empty())
    fail("layout: button unreachable from start");
  if (bfs_path(*this, button_cell, goal_cell, true).empty()) fail("layout: goal unreachable");
}

WorldLayout parse_layout_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(std::string("layout: malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("name") || !j.contains("grid"))
    fail("layout: need name and grid fields");

  WorldLayout L;
  L.name = j["name"].get<std::string>();
  L.difficulty_tag = j.value("difficulty", std::string("easy"));
  L.door_open_duration = j.value("door_open_duration", 40);
  if (!j["grid"].is_array()) fail("layout: grid must be an array of strings");
  for (const auto& row : j["grid"]) L.grid.push_back(row.get<std::string>());

  int starts = 0, buttons = 0, goals = 0;
  for (int r = 0; r < L.height(); ++r) {
    for (int c = 0; c < L.width(); ++c) {
      Cell cell{r, c};
      switch (L.grid[r][c]) {
        case 'S':
          L.agent_start = {cell, Heading::north};
          ++starts;
          break;
        case 'B':
          L.button_cell = cell;
          ++buttons;
          break;
        case 'G':
          L.goal_cell = cell;
          L.goal_pose = {c, r, 0};
          ++goals;
          break;
        case 'D':
          L.door_cells.push_back(cell);
          break;
        case 'o':
          L.obstacles.push_back(cell);
          break;
        default:
          break;
      }
    }
  }
  if (starts != 1) fail("layout: need exactly one start cell");
  if (buttons != 1) fail("layout: need exactly one button cell");
  if (goals != 1) fail("layout: need exactly one goal cell");

  for (const char* key : {"corridor_a", "corridor_b"}) {
    if (!j.contains(key)) continue;
    auto& dst = std::string(key) == "corridor_a" ? L.corridor_a : L.corridor_b;
    for (const auto& wp : j[key]) dst.push_back(require_cell(wp, key));
  }

  L.validate();
  return L;
}

WorldLayout load_layout(const std::string& name_or_path) {
  for (const auto& [name, text] : detail::builtin_layouts()) {
    if (name == name_or_path) return parse_layout_json(text);
  }
  std::ifstream in(name_or_path, std::ios::binary);
  if (!in) fail("cannot open layout: " + name_or_path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_layout_json(buf.str());
}

std::vector<std::string> builtin_layout_names() {
  std::vector<std::string> names;
  for (const auto& [name, text] : detail::builtin_layouts()) names.push_back(name);
  return names;
}

StateSchema make_env_schema(const WorldLayout& layout) {
  StateSchema s;
  const double w = layout.width();
  const double h = layout.height();
  const double m = std::max(w, h);

  auto projections = [&](const std::string& prefix) {
    s.continuous_names.push_back(prefix + "dx");
    s.normalization.push_back(w);
    s.continuous_names.push_back(prefix + "dz");
    s.normalization.push_back(h);
    s.continuous_names.push_back(prefix + "fwd");
    s.normalization.push_back(m);
    s.continuous_names.push_back(prefix + "lat");
    s.normalization.push_back(m);
  };
  projections("self/goal_");
  s.continuous_names.push_back("self/door_timer");
  s.normalization.push_back(layout.door_open_duration);
  projections("ent/button/");
  projections("ent/goal/");

  for (const char* flag : {"flag/on_ground", "flag/door_open", "flag/button_pressed",
                           "flag/jump_cooldown"}) {
    s.categorical_names.push_back(flag);
    s.categorical_cardinalities.push_back(2);
  }
  for (int z = 0; z < 5; ++z)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) {
        s.categorical_names.push_back("map/z" + std::to_string(z) + "_y" + std::to_string(y) +
                                      "_x" + std::to_string(x));
        s.categorical_cardinalities.push_back(kSymbolCount);
      }
  s.validate();
  return s;
}

GridWorld::GridWorld(WorldLayout layout) : layout_(std::move(layout)) {
  layout_.validate();
  schema_ = make_env_schema(layout_);
  state_.done = true;  // require reset before stepping
}

StateVector GridWorld::reset(std::uint64_t seed, int jitter_radius) {
  state_ = EnvState{};
  state_.pose = layout_.agent_start;
  if (jitter_radius > 0) {
    std::vector<Cell> candidates;
    Cell s = layout_.agent_start.cell;
    for (int r = s.row - jitter_radius; r <= s.row + jitter_radius; ++r)
      for (int c = s.col - jitter_radius; c <= s.col + jitter_radius; ++c) {
        char ch = layout_.at({r, c});
        if (ch == '.' || ch == 'S') candidates.push_back({r, c});
      }
    RngStream rng(seed);
    state_.pose.cell = candidates[rng.below(candidates.size())];
  }
  return observe();
}

GridWorld::StepResult GridWorld::step(int action) {
  if (state_.done) throw std::logic_error("step after episode end");
  if (action < 0 || action >= kActionCount) throw std::invalid_argument("action out of range");

  ++state_.step_count;
  const bool doors_open = state_.door_timer > 0;
  Pose& pose = state_.pose;
  bool jumped = false;

  auto try_move = [&](Heading dir) {
    Cell target = ahead(pose.cell, dir);
    if (walkable(layout_, target, doors_open)) pose.cell = target;
  };

  switch (action) {
    case kActForward:
      try_move(pose.heading);
      break;
    case kActBackward:
      try_move(turn(pose.heading, 2));
      break;
    case kActRotateRight:
      pose.heading = turn(pose.heading, 1);
      break;
    case kActRotateLeft:
      pose.heading = turn(pose.heading, -1);
      break;
    case kActJump: {
      Cell mid = ahead(pose.cell, pose.heading);
      Cell land = ahead(pose.cell, pose.heading, 2);
      if (state_.jump_cooldown == 0 && layout_.at(mid) == 'o' &&
          walkable(layout_, land, doors_open)) {
        pose.cell = land;
        jumped = true;
      }
      break;
    }
    case kActSidestepRight:
      try_move(turn(pose.heading, 1));
      break;
    case kActSidestepLeft:
      try_move(turn(pose.heading, -1));
      break;
    default:
      break;  // shoot and no-op change nothing
  }

  if (jumped) {
    state_.jump_cooldown = kJumpCooldownSteps;
    state_.airborne = true;
  } else {
    state_.airborne = false;
    if (state_.jump_cooldown > 0) --state_.jump_cooldown;
  }

  if (pose.cell == layout_.button_cell && state_.door_timer == 0) {
    state_.door_timer = layout_.door_open_duration;
    state_.button_pressed = true;
  } else if (state_.door_timer > 0) {
    --state_.door_timer;
  }

  if (pose.cell == layout_.goal_cell) {
    state_.success = true;
    state_.done = true;
  } else if (state_.step_count >= kEpisodeTimeout) {
    state_.done = true;
  }

  return {observe(), state_.done, state_.success};
}

StateVector GridWorld::observe() const {
  StateVector obs;
  const Pose& pose = state_.pose;
  const double w = layout_.width();
  const double h = layout_.height();
  const double m = std::max(w, h);
  const int fd = static_cast<int>(pose.heading);
  const int rd = (fd + 1) % 4;

  auto projections = [&](Cell target) {
    const double dr = target.row - pose.cell.row;
    const double dc = target.col - pose.cell.col;
    obs.continuous.push_back(static_cast<float>(dc / w));
    obs.continuous.push_back(static_cast<float>(dr / h));
    obs.continuous.push_back(static_cast<float>((dr * kDr[fd] + dc * kDc[fd]) / m));
    obs.continuous.push_back(static_cast<float>((dr * kDr[rd] + dc * kDc[rd]) / m));
  };
  projections(layout_.goal_cell);
  obs.continuous.push_back(
      static_cast<float>(static_cast<double>(state_.door_timer) / layout_.door_open_duration));
  projections(layout_.button_cell);
  projections(layout_.goal_cell);

  obs.categorical.push_back(state_.airborne ? 0 : 1);
  obs.categorical.push_back(state_.door_timer > 0 ? 1 : 0);
  obs.categorical.push_back(state_.button_pressed ? 1 : 0);
  obs.categorical.push_back(state_.jump_cooldown > 0 ? 1 : 0);

  for (int z = 0; z < 5; ++z)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) {
        const int fwd = y - 2;
        const int lat = x - 2;
        Cell cell{pose.cell.row + fwd * kDr[fd] + lat * kDr[rd],
                  pose.cell.col + fwd * kDc[fd] + lat * kDc[rd]};
        std::int32_t sym = kSymEmpty;
        if (layout_.in_bounds(cell)) {
          if (z == 1) {
            sym = kSymGround;
          } else if (z == 2) {
            sym = level_symbol(layout_.at(cell));
          } else if (z == 3 && layout_.at(cell) == '#') {
            sym = kSymWall;  // walls are tall; low obstacles are not
          }
        }
        obs.categorical.push_back(sym);
      }
  return obs;
}

std::vector<int> plan_expert_actions(const WorldLayout& layout, PathChoice path, Pose start) {
  const std::vector<Cell>& corridor = path == PathChoice::A ? layout.corridor_a : layout.corridor_b;

  // Phase 1 (doors closed): start -> corridor waypoints -> button.
  // Phase 2 (door open): button -> goal.
  std::vector<Cell> cells{start.cell};
  auto extend = [&](Cell target, bool doors_open) {
    std::vector<Cell> seg = bfs_path(layout, cells.back(), target, doors_open);
    if (seg.empty())
      throw std::runtime_error("expert: no route on layout " + layout.name + " (path " +
                               (path == PathChoice::A ? "A" : "B") + ")");
    cells.insert(cells.end(), seg.begin() + 1, seg.end());
  };
  for (Cell wp : corridor) extend(wp, false);
  extend(layout.button_cell, false);
  extend(layout.goal_cell, true);

  std::vector<int> actions;
  Heading heading = start.heading;
  int cooldown = 0;
  auto emit = [&](int a) {
    actions.push_back(a);
    if (cooldown > 0) --cooldown;
  };
  auto face = [&](Heading target) {
    int d = (static_cast<int>(target) - static_cast<int>(heading) + 4) % 4;
    if (d == 1) emit(kActRotateRight);
    if (d == 2) {
      emit(kActRotateRight);
      emit(kActRotateRight);
    }
    if (d == 3) emit(kActRotateLeft);
    heading = target;
  };

  for (std::size_t i = 1; i < cells.size(); ++i) {
    const int dr = cells[i].row - cells[i - 1].row;
    const int dc = cells[i].col - cells[i - 1].col;
    const int dist = std::abs(dr) + std::abs(dc);
    Heading dir;
    if (dr < 0)
      dir = Heading::north;
    else if (dr > 0)
      dir = Heading::south;
    else if (dc > 0)
      dir = Heading::east;
    else
      dir = Heading::west;
    face(dir);
    if (dist == 1) {
      emit(kActForward);
    } else {
      while (cooldown > 0) emit(kActNoOp);
      emit(kActJump);
      cooldown = kJumpCooldownSteps;
    }
  }
  return actions;
}

Trajectory scripted_expert(const WorldLayout& layout, PathChoice path) {
  GridWorld env(layout);
  StateVector obs = env.reset(0);
  std::vector<int> plan = plan_expert_actions(layout, path, env.state().pose);

  Trajectory t;
  t.episode_id = layout.name + (path == PathChoice::A ? "-A" : "-B");
  for (int a : plan) {
    t.transitions.push_back({obs, a});
    GridWorld::StepResult r = env.step(a);
    obs = std::move(r.observation);
    if (r.done) break;
  }
  if (!env.state().success)
    throw std::runtime_error("expert failed on layout " + layout.name);
  t.outcome = true;
  return t;
}

DemoDataset generate_demos(const WorldLayout& layout, std::size_t episodes, std::uint64_t seed,
                           int jitter_radius) {
  if (episodes < 1) fail("generate_demos: episodes must be >= 1");

  GridWorld env(layout);
  DemoDataset d;
  d.schema = env.schema();
  RngStream root(seed);

  for (std::size_t e = 0; e < episodes; ++e) {
    PathChoice path = e % 2 == 0 ? PathChoice::A : PathChoice::B;
    StateVector obs = env.reset(root.child(e).next_u64(), jitter_radius);
    std::vector<int> plan = plan_expert_actions(layout, path, env.state().pose);

    Trajectory t;
    t.episode_id = "ep" + std::to_string(e) + (path == PathChoice::A ? "a" : "b");
    for (int a : plan) {
      t.transitions.push_back({obs, a});
      GridWorld::StepResult r = env.step(a);
      obs = std::move(r.observation);
      if (r.done) break;
    }
    if (!env.state().success)
      throw std::runtime_error("expert failed during demo generation on " + layout.name);
    t.outcome = true;
    d.trajectories.push_back(std::move(t));
  }

  d.provenance = "demos layout=" + layout.name + " episodes=" + std::to_string(episodes) +
                 " seed=" + std::to_string(seed) + " jitter=" + std::to_string(jitter_radius);
  d.validate();
  return d;
}

}  // namespace augbc
