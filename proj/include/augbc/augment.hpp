#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "augbc/dataset.hpp"
#include "augbc/rng.hpp"

namespace augbc {

/// The six transform kinds, in canonical composition order. Pipelines apply
/// translations first, then scaling and mixing, and dropout last.
enum class AugKind { gauss = 0, uni, sca, sm, drc, drs };

inline constexpr std::array<AugKind, 6> kAllAugKinds = {AugKind::gauss, AugKind::uni, AugKind::sca,
                                                        AugKind::sm,    AugKind::drc, AugKind::drs};

const char* aug_kind_name(AugKind k);

// Fixed study hyperparameters. Only the Gaussian sigma and the data size are
// swept; everything else stays at these values.
inline constexpr double kDefaultGaussSigma = 0.0003;
inline constexpr std::array<double, 4> kGaussSigmaSweep = {0.03, 0.003, 0.0003, 0.00003};
inline constexpr double kDefaultUniLambda = 0.0003;
inline constexpr double kDefaultScaAlpha = 0.0003;
inline constexpr double kDefaultScaBeta = 0.0006;
inline constexpr double kDefaultSmBetaShape = 0.4;
inline constexpr int kDefaultDrcCount = 3;
inline constexpr int kDefaultDrsCount = 12;

/// Scaling has two interpretations. `literal` multiplies features by
/// U(alpha, beta) directly. `centered` multiplies by 1 + U(-beta, beta),
/// i.e. a small relative rescale around identity (alpha is ignored);
/// this is the mode the end-to-end runs use.
enum class ScaMode { literal, centered };

struct GaussParams {
  double mu = 0.0;
  double sigma = kDefaultGaussSigma;
  bool operator==(const GaussParams&) const = default;
};
struct UniParams {
  double lambda = kDefaultUniLambda;
  bool operator==(const UniParams&) const = default;
};
struct ScaParams {
  ScaMode mode = ScaMode::literal;
  double alpha = kDefaultScaAlpha;
  double beta = kDefaultScaBeta;
  bool operator==(const ScaParams&) const = default;
};
struct SmParams {
  double beta_shape = kDefaultSmBetaShape;
  bool operator==(const SmParams&) const = default;
};
struct DrcParams {
  int n = kDefaultDrcCount;
  bool operator==(const DrcParams&) const = default;
};
struct DrsParams {
  int n = kDefaultDrsCount;
  bool operator==(const DrsParams&) const = default;
};

/// One parameterized transform. The variant index matches AugKind.
struct AugmentationSpec {
  std::variant<GaussParams, UniParams, ScaParams, SmParams, DrcParams, DrsParams> params;

  AugKind kind() const { return static_cast<AugKind>(params.index()); }

  /// Bounds check on the parameters (dimension checks happen at apply time).
  void validate() const;

  /// Canonical token for the pipeline id grammar: the kind name, with a
  /// `_eX` suffix on gauss when sigma equals 3e-X.
  std::string token() const;

  bool operator==(const AugmentationSpec&) const = default;
};

/// An ordered composition of 1 to 3 transforms, at most one per kind, sorted
/// into canonical kind order at construction. gauss and uni never co-occur.
class Pipeline {
 public:
  /// Sorts `specs` into canonical order and validates the composition rules.
  explicit Pipeline(std::vector<AugmentationSpec> specs);

  /// Parses the id grammar `kind[_eX][+kind...]`, e.g. "gauss_e3+sm+drc".
  /// Bare "gauss" means sigma = 3e-4. sca tokens take `sca_mode`.
  static Pipeline parse(const std::string& id, ScaMode sca_mode = ScaMode::literal);

  const std::vector<AugmentationSpec>& specs() const { return specs_; }
  const std::string& id() const { return id_; }
  bool contains(AugKind k) const;

  bool operator==(const Pipeline&) const = default;

 private:
  std::vector<AugmentationSpec> specs_;
  std::string id_;
};

// ---------------------------------------------------------------------------
// Single transforms. Each returns a new state; the untouched block is copied
// bit-identically. `rng` is the per-(transition, spec) stream.
// ---------------------------------------------------------------------------

/// Adds i.i.d. Normal(mu, sigma) noise to every continuous feature.
StateVector apply_gauss(const StateVector& s, double mu, double sigma, RngStream& rng);

/// Adds i.i.d. Uniform(-lambda, lambda) noise to every continuous feature.
StateVector apply_uni(const StateVector& s, double lambda, RngStream& rng);

/// Multiplies every continuous feature by an i.i.d. draw (see ScaMode).
StateVector apply_sca(const StateVector& s, ScaMode mode, double alpha, double beta, RngStream& rng);

/// Convex combination eps*s + (1-eps)*s_next on the continuous block, with a
/// single eps ~ Beta(beta_shape, beta_shape) per call. Categorical block of
/// `s` is kept.
StateVector apply_sm(const StateVector& s, const StateVector& s_next, double beta_shape, RngStream& rng);

/// Deterministic mixup core used by apply_sm; exposed for forced-eps tests.
StateVector mix_states(const StateVector& s, const StateVector& s_next, double eps);

/// Zeroes n distinct uniformly-chosen continuous features.
StateVector apply_drc(const StateVector& s, int n, RngStream& rng);

/// Resets n distinct uniformly-chosen categorical features to symbol 0.
StateVector apply_drs(const StateVector& s, int n, RngStream& rng);

/// Dispatch on spec.kind(). `s_next` is only consulted by sm; sm acts as the
/// identity when it is null (last transition of a trajectory).
StateVector apply_spec(const AugmentationSpec& spec, const StateVector& s, const StateVector* s_next,
                       RngStream& rng);

/// Applies p's transforms left to right in canonical order, deriving
/// rng.child(i) for the i-th spec. The action is always preserved. The mixup
/// partner is the raw successor state `t_next`, untouched by earlier specs,
/// which keeps every output a function of this transition's stream alone.
Transition apply_pipeline(const Pipeline& p, const Transition& t, const Transition* t_next, RngStream& rng);

/// Every combination of 1..max_size kinds (max_size in [1,3]), excluding any
/// set containing both gauss and uni, expanded over `gauss_sigmas` when gauss
/// is present. Deterministic, duplicate-free, ordered lexicographically by id.
std::vector<Pipeline> enumerate_pipelines(int max_size,
                                          const std::vector<double>& gauss_sigmas = {kDefaultGaussSigma},
                                          ScaMode sca_mode = ScaMode::literal);

/// The clone-and-append dataset builder: output = base episodes (bit-identical,
/// first) followed by `clones` independently augmented copies of every base
/// episode. Sub-streams are derived per (clone, trajectory, transition), so
/// the result does not depend on work scheduling.
DemoDataset build_augmented_dataset(const DemoDataset& base, const Pipeline& p, std::size_t clones,
                                    std::uint64_t seed);

}  // namespace augbc
