#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "augbc/dataset.hpp"
#include "augbc/rng.hpp"

namespace augbc {

enum class Variant { compact, faithful };
enum class EntityPooling { mean, attention };
enum class MapEncoder { flatten_embed, conv3d };

struct ArchitectureConfig {
  Variant variant = Variant::compact;
  int embedding_dim = 128;  // d
  EntityPooling entity_pooling = EntityPooling::mean;
  MapEncoder map_encoder = MapEncoder::flatten_embed;
  std::vector<int> hidden_sizes = {256};
  int action_count = kActionCount;

  static ArchitectureConfig compact(int d = 128, std::vector<int> hidden = {256});
  static ArchitectureConfig faithful(int d = 128);

  void validate() const;  // throws std::invalid_argument
  std::string json() const;
  static ArchitectureConfig from_json(const std::string& text);
  bool operator==(const ArchitectureConfig&) const = default;
};

/// How schema feature names map onto network inputs. Continuous "ent/<name>/"
/// features form one token per entity (all entities must share a width, the
/// encoder weights are shared); everything else continuous is a self feature.
/// Categorical "map/" features share one symbol embedding; the rest are flags
/// with per-feature embeddings.
struct FeatureLayout {
  std::vector<int> self_continuous;
  std::vector<std::pair<std::string, std::vector<int>>> entities;
  std::vector<int> flag_categorical;
  std::vector<int> map_categorical;

  static FeatureLayout from_schema(const StateSchema& schema);
};

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
};

/// All weights in one flat buffer, addressed through a named registry.
struct PolicyParams {
  ArchitectureConfig arch;
  std::vector<TensorSpec> tensors;
  std::vector<double> values;

  std::size_t param_count() const { return values.size(); }
  const TensorSpec& tensor(const std::string& name) const;  // throws if absent
  double* data(const TensorSpec& t) { return values.data() + t.offset; }
  const double* data(const TensorSpec& t) const { return values.data() + t.offset; }
};

/// Binds an architecture to an observation schema and implements the math:
/// forward to a 9-way distribution, loss with analytic gradient, seeded init.
class PolicyNet {
 public:
  PolicyNet(ArchitectureConfig arch, StateSchema schema);

  const ArchitectureConfig& arch() const { return arch_; }
  const StateSchema& schema() const { return schema_; }
  const FeatureLayout& layout() const { return layout_; }

  /// Fan-in uniform init for weights, zero biases, U(-0.5, 0.5) embeddings.
  PolicyParams init_params(std::uint64_t seed) const;

  /// Action probabilities for one state. Throws on schema mismatch or
  /// non-finite parameters.
  Eigen::VectorXd forward(const PolicyParams& params, const StateVector& s) const;

  /// Mean negative log-likelihood of the labels, log-probs clamped below at
  /// log(1e-9). Fills `grad` (same length as params) when non-null.
  double bc_loss(const PolicyParams& params, const std::vector<const Transition*>& batch,
                 std::vector<double>* grad) const;
  double bc_loss(const PolicyParams& params, const std::vector<Transition>& batch,
                 std::vector<double>* grad) const;

  /// Row-per-sample action distributions for a batch.
  Eigen::MatrixXd probabilities(const PolicyParams& params,
                                const std::vector<const Transition*>& batch) const;

 private:
  struct Batch;
  void check_state(const StateVector& s) const;
  Eigen::MatrixXd run(const PolicyParams& params, const std::vector<const Transition*>& batch,
                      std::vector<double>* grad, double* loss) const;

  ArchitectureConfig arch_;
  StateSchema schema_;
  FeatureLayout layout_;
};

struct TrainConfig {
  int epochs = 300;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const;  // throws std::invalid_argument
};

struct TrainLog {
  std::vector<double> epoch_loss;  // mean sample loss per epoch
};

/// Full-batch-shuffled minibatch training with a momentum-adaptive first-order
/// optimizer. Deterministic per (dataset, arch, cfg): single-threaded, fixed
/// reduction order. Throws std::runtime_error if the loss turns non-finite.
std::pair<PolicyParams, TrainLog> train(const DemoDataset& dataset, const ArchitectureConfig& arch,
                                        const TrainConfig& cfg);

enum class ActMode { greedy, sample };

/// Greedy: argmax with lowest-index tie-break.
int greedy_action(const Eigen::VectorXd& probs);
/// Inverse-CDF draw from the distribution.
int sample_action(const Eigen::VectorXd& probs, RngStream& rng);
int act(const PolicyNet& net, const PolicyParams& params, const StateVector& s, ActMode mode,
        RngStream& rng);

/// Fraction of transitions whose greedy action matches the label.
double action_accuracy(const PolicyNet& net, const PolicyParams& params, const DemoDataset& d);

struct Checkpoint {
  PolicyParams params;
  std::string schema_hash;
  std::uint64_t seed = 0;
};

/// Single file: one JSON header line (format version, architecture, schema
/// hash, seed, tensor table) followed by the raw little-endian doubles.
void save_checkpoint(const std::string& path, const PolicyParams& params,
                     const std::string& schema_hash, std::uint64_t seed);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace augbc
