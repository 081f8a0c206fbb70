#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace augbc {

/// Raised when a dataset, schema, or file violates an invariant. Messages
/// from the JSONL loader carry the offending line number.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Describes the partitioned observation layout: a continuous block and a
/// categorical block, each with ordered, unique feature names.
///
/// Feature-name prefixes carry the grouping the policy network consumes:
///   "self/..."          continuous features fed to the self encoder
///   "ent/<name>/..."    continuous features of one named entity
///   "flag/..."          categorical status flags (per-feature embedding)
///   "map/..."           categorical semantic-map voxels (shared embedding)
/// Names without a known prefix fall back to self (continuous) or flag
/// (categorical).
struct StateSchema {
  std::vector<std::string> continuous_names;
  std::vector<std::string> categorical_names;
  std::vector<int> categorical_cardinalities;  // per categorical feature, >= 2
  std::vector<double> normalization;           // per continuous feature: raw-unit scale

  int continuous_dim() const { return static_cast<int>(continuous_names.size()); }
  int categorical_dim() const { return static_cast<int>(categorical_names.size()); }

  /// Throws ValidationError on any invariant breach.
  void validate() const;

  /// Canonical JSON of the schema (fixed key order, fixed float format).
  std::string canonical_json() const;

  /// FNV-1a hash of canonical_json(), hex string. Used by checkpoints to pin
  /// the schema a policy was trained against.
  std::string hash() const;

  bool operator==(const StateSchema&) const = default;
};

/// One observation, split into the schema's two blocks. Continuous features
/// are stored in single precision; categorical features are small symbol ids
/// with 0 reserved for "empty/unknown".
struct StateVector {
  std::vector<float> continuous;
  std::vector<std::int32_t> categorical;

  bool operator==(const StateVector&) const = default;
};

inline constexpr int kActionCount = 9;

struct Transition {
  StateVector state;
  int action = 0;  // in [0, kActionCount)

  bool operator==(const Transition&) const = default;
};

struct Trajectory {
  std::string episode_id;
  std::vector<Transition> transitions;  // non-empty
  bool outcome = false;                 // episode success flag

  std::size_t size() const { return transitions.size(); }
  bool operator==(const Trajectory&) const = default;
};

/// A demonstration set: one schema, whole episodes, free-text provenance.
/// Immutable by convention once validated; operations return new datasets.
struct DemoDataset {
  StateSchema schema;
  std::vector<Trajectory> trajectories;
  std::string provenance;

  std::size_t episode_count() const { return trajectories.size(); }
  std::size_t sample_count() const;

  /// Full invariant check: schema validity, non-empty trajectories, block
  /// lengths, categorical ranges, action range, finite continuous values,
  /// unique episode ids.
  void validate() const;

  bool operator==(const DemoDataset&) const = default;
};

/// Parses the JSONL demonstration format (header line + one transition per
/// line). Validates everything; errors carry the line number.
DemoDataset load_dataset(const std::string& path);

/// Writes the JSONL format deterministically: fixed key order, floats with
/// 9 significant digits. save -> load is the identity on valid datasets,
/// and equal datasets always produce identical bytes.
void save_dataset(const DemoDataset& d, const std::string& path);

/// In-memory serialization used by save_dataset; exposed for byte-level tests.
std::string serialize_dataset(const DemoDataset& d);
DemoDataset parse_dataset(const std::string& text);

/// Keeps round(fraction * episode_count) whole episodes (round half up),
/// chosen uniformly without replacement, original order preserved.
/// fraction must lie in (0, 1] and select at least one episode.
DemoDataset subsample_episodes(const DemoDataset& d, double fraction, std::uint64_t seed);

}  // namespace augbc
