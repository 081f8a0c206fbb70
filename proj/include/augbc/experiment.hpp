#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "augbc/augment.hpp"
#include "augbc/env.hpp"
#include "augbc/policy.hpp"

namespace augbc {

/// Identifier used for the non-augmented model in trial records and reports.
inline constexpr const char* kBaselineId = "baseline";

/// Everything one sweep needs: which pipelines, how much data, how many
/// seeds, where the demonstrations live and where results go.
struct SweepConfig {
  std::vector<std::string> pipelines;  // pipeline ids; {"all"} expands to the full enumeration
  std::vector<double> data_fractions = {0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int seeds = 10;
  int clones = 3;
  std::vector<std::string> layouts = {"train", "test1", "test2", "test3", "test4"};
  int episodes_per_eval = 100;
  int eval_jitter_radius = 2;
  ScaMode sca_mode = ScaMode::centered;
  ArchitectureConfig arch = ArchitectureConfig::compact();
  TrainConfig train;
  std::string demos_path;
  std::string out_dir;
  int workers = 0;  // 0 = hardware concurrency
  std::uint64_t master_seed = 0;

  void validate() const;  // throws std::invalid_argument
  std::string json() const;
  static SweepConfig from_json_text(const std::string& text);

  /// Commodity-hardware acceptance profile: 12 pipelines, fractions
  /// {0.5, 1.0}, 3 seeds, a small compact network, centered scaling.
  static SweepConfig desk_profile(std::string demos_path, std::string out_dir);
  /// The complete grid: every pipeline up to size 3, 6 fractions, 10 seeds.
  static SweepConfig full_profile(std::string demos_path, std::string out_dir);
};

/// One (model, layout) evaluation outcome. `pipeline` is a pipeline id or
/// kBaselineId; failed trials carry the error text instead of numbers.
struct TrialResult {
  std::string pipeline;
  double data_fraction = 1.0;
  int seed = 0;
  std::string layout;
  int successes = 0;
  int episodes = 0;
  double success_rate = 0.0;
  double mean_episode_length = 0.0;
  bool failed = false;
  std::string error;

  bool operator==(const TrialResult&) const = default;
};

std::string trial_key(const std::string& pipeline, double fraction, int seed,
                      const std::string& layout);

/// Per-step action supplier for evaluation runs. `begin_episode` is called
/// after each env reset so planners can read the start state.
class ActionSource {
 public:
  virtual ~ActionSource() = default;
  virtual void begin_episode(const GridWorld& env) {}
  virtual int act(const StateVector& obs) = 0;
  /// Deterministic sources enable cycle detection: an exactly repeated
  /// environment state can never reach the goal, so the episode fails early.
  virtual bool deterministic() const { return true; }
};

/// Greedy trained policy.
class PolicySource : public ActionSource {
 public:
  PolicySource(const PolicyNet& net, const PolicyParams& params) : net_(net), params_(params) {}
  int act(const StateVector& obs) override;

 private:
  const PolicyNet& net_;
  const PolicyParams& params_;
};

/// Scripted expert replanning from each episode's start pose, alternating
/// corridors like the demonstration generator (or pinned to one corridor).
class ExpertSource : public ActionSource {
 public:
  ExpertSource(const WorldLayout& layout, std::optional<PathChoice> pinned = std::nullopt)
      : layout_(layout), pinned_(pinned) {}
  void begin_episode(const GridWorld& env) override;
  int act(const StateVector& obs) override;
  /// The plan index is state outside the environment, so a repeated world
  /// state does not imply a cycle here.
  bool deterministic() const override { return false; }

 private:
  const WorldLayout& layout_;
  std::optional<PathChoice> pinned_;
  int episode_ = -1;
  std::vector<int> plan_;
  std::size_t at_ = 0;
};

/// Uniform random actions.
class RandomSource : public ActionSource {
 public:
  explicit RandomSource(std::uint64_t seed) : rng_(seed) {}
  int act(const StateVector& obs) override;
  bool deterministic() const override { return false; }

 private:
  RngStream rng_;
};

/// Runs `episodes` independent episodes (per-episode reset seeds derived from
/// `seed`) and tallies successes. Deterministic per (source, layout, seed).
TrialResult evaluate(ActionSource& source, const WorldLayout& layout, int episodes,
                     std::uint64_t seed, int jitter_radius = 0);
TrialResult evaluate(const PolicyNet& net, const PolicyParams& params, const WorldLayout& layout,
                     int episodes, std::uint64_t seed, int jitter_radius = 0);

/// model_rate / baseline_rate, flagged undefined when the baseline never
/// succeeds (undefined values are excluded from means and counted separately).
struct RelValue {
  double value = 0.0;
  bool defined = false;
};
RelValue relative_success(double model_rate, double baseline_rate);

/// Seed-aggregated view of one (pipeline, fraction) model.
struct ModelSummary {
  std::string pipeline;
  double fraction = 1.0;
  std::map<std::string, double> mean_success;  // layout -> mean over seeds
  std::map<std::string, double> std_success;   // layout -> population std over seeds
  std::map<std::string, RelValue> relative;    // layout -> vs baseline at same fraction
  double train_success = 0.0;

  bool is_baseline() const { return pipeline == kBaselineId; }
};

struct ConsistencyRow {
  std::string pipeline;
  double fraction = 1.0;
  int envs_above_one = 0;  // out of the 5 layouts, strictly > 1
  bool complete = true;    // all layouts present
};

struct GroupStat {
  AugKind kind;
  double mean_relative = 0.0;  // over test layouts of member models, defined values only
  int model_count = 0;
  int undefined_count = 0;
  double reference = 0.0;  // published per-kind mean, for side-by-side display
};

struct ModelKey {
  std::string pipeline;
  double fraction = 1.0;
  bool operator==(const ModelKey&) const = default;
};

/// Raw trials plus every derived figure; build_report is a pure function of
/// the trial set, so each statistic is recomputable from trials.csv alone.
struct SweepReport {
  std::vector<TrialResult> trials;  // canonical order
  std::vector<ModelSummary> models;
  std::vector<ConsistencyRow> consistency;  // augmented models, descending
  std::vector<GroupStat> groups;
  std::vector<ModelKey> top_cohort;  // by mean train success, baseline appended for display
  std::vector<ModelKey> bottom_cohort;
  int baseline_failures = 0;  // (model, layout) cells with an always-failing baseline
  int jobs_executed = 0;      // training jobs actually run by the producing sweep
};

SweepReport build_report(std::vector<TrialResult> trials, int top_k = 19,
                         std::pair<double, double> bottom_band = {0.0, 0.39});

/// Appends/reads the incremental trial store (JSON lines).
void append_trial(const std::string& path, const TrialResult& t);
std::vector<TrialResult> load_trials(const std::string& path);  // empty if absent

/// subsample -> augment -> train -> evaluate over every layout, with a
/// bounded worker pool and resumable persistence in out_dir/trials.jsonl.
SweepReport run_sweep(const SweepConfig& cfg);

/// trials.csv, summary.json, consistency.csv, groups.csv and the two
/// plot-ready cohort files. Byte-stable for identical reports.
void emit_report(const SweepReport& report, const std::string& out_dir);

/// Round-trip loader for emitted trials.csv files (used by `report` and the
/// recomputability checks).
std::vector<TrialResult> parse_trials_csv(const std::string& path);

}  // namespace augbc
