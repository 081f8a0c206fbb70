#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include "augbc/env.hpp"
#include "augbc/policy.hpp"
#include "test_util.hpp"

using namespace augbc;

namespace {

/// Schema exercising every input group: self features, two entities sharing a
/// width, per-flag embeddings and a small shared-embedding map block.
StateSchema make_policy_schema() {
  StateSchema s;
  s.continuous_names = {"self/a", "self/b", "ent/foo/x", "ent/foo/y", "ent/bar/x", "ent/bar/y"};
  s.normalization.assign(6, 1.0);
  s.categorical_names = {"flag/g0", "flag/g1", "map/z0_y0_x0", "map/z0_y0_x1",
                         "map/z0_y1_x0", "map/z0_y1_x1"};
  s.categorical_cardinalities = {2, 3, 3, 3, 3, 3};
  s.validate();
  return s;
}

StateVector random_policy_state(const StateSchema& schema, RngStream& rng) {
  StateVector s;
  for (int i = 0; i < schema.continuous_dim(); ++i)
    s.continuous.push_back(static_cast<float>(rng.uniform(-1.0, 1.0)));
  for (int i = 0; i < schema.categorical_dim(); ++i)
    s.categorical.push_back(static_cast<std::int32_t>(
        rng.below(static_cast<std::uint64_t>(schema.categorical_cardinalities[i]))));
  return s;
}

std::vector<Transition> random_batch(const StateSchema& schema, int n, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<Transition> batch;
  for (int i = 0; i < n; ++i)
    batch.push_back({random_policy_state(schema, rng),
                     static_cast<int>(rng.below(kActionCount))});
  return batch;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

/// Central-difference probe of selected flat indices of one tensor.
void fd_check_tensor(const PolicyNet& net, const PolicyParams& params,
                     const std::vector<double>& grad, const std::vector<Transition>& batch,
                     const TensorSpec& t, std::size_t stride) {
  const double h = 1e-5;
  PolicyParams probe = params;
  std::size_t n = static_cast<std::size_t>(t.rows) * t.cols;
  for (std::size_t k = 0; k < n; k += stride) {
    std::size_t i = t.offset + k;
    double keep = probe.values[i];
    probe.values[i] = keep + h;
    double up = net.bc_loss(probe, batch, nullptr);
    probe.values[i] = keep - h;
    double down = net.bc_loss(probe, batch, nullptr);
    probe.values[i] = keep;
    double numeric = (up - down) / (2.0 * h);
    INFO("tensor ", t.name, " index ", k);
    CHECK(rel_err(grad[i], numeric) < 1e-4);
  }
}

void zero_tensor(PolicyParams& p, const std::string& name) {
  const TensorSpec& t = p.tensor(name);
  std::fill(p.data(t), p.data(t) + static_cast<std::size_t>(t.rows) * t.cols, 0.0);
}

std::string temp_path(const std::string& leaf) {
  return (std::filesystem::temp_directory_path() / leaf).string();
}

}  // namespace

TEST_CASE("finite differences confirm every analytic gradient (compact)") {
  StateSchema schema = make_policy_schema();
  ArchitectureConfig arch = ArchitectureConfig::compact(8, {8});
  PolicyNet net(arch, schema);
  PolicyParams params = net.init_params(7);
  std::vector<Transition> batch = random_batch(schema, 6, 11);

  std::vector<double> grad;
  net.bc_loss(params, batch, &grad);
  REQUIRE(grad.size() == params.param_count());

  for (const TensorSpec& t : params.tensors) fd_check_tensor(net, params, grad, batch, t, 1);
}

TEST_CASE("finite differences confirm every analytic gradient (faithful)") {
  WorldLayout layout = load_layout("train");
  StateSchema schema = make_env_schema(layout);
  ArchitectureConfig arch = ArchitectureConfig::faithful(8);
  arch.hidden_sizes = {16};
  PolicyNet net(arch, schema);
  PolicyParams params = net.init_params(3);
  std::vector<Transition> batch = random_batch(schema, 2, 19);

  std::vector<double> grad;
  net.bc_loss(params, batch, &grad);
  REQUIRE(grad.size() == params.param_count());

  for (const TensorSpec& t : params.tensors) {
    std::size_t n = static_cast<std::size_t>(t.rows) * t.cols;
    std::size_t stride = 1;
    if (n > 4000) {
      stride = 997;  // prime stride walks rows and columns of the big conv kernels
    } else if (n > 500) {
      stride = 13;
    }
    fd_check_tensor(net, params, grad, batch, t, stride);
  }
}

TEST_CASE("zeroed head yields the uniform distribution and ln 9 loss") {
  StateSchema schema = make_policy_schema();
  std::vector<Transition> batch = random_batch(schema, 32, 5);

  for (ArchitectureConfig arch :
       {ArchitectureConfig::compact(8, {8}), ArchitectureConfig::compact(16, {16, 8})}) {
    PolicyNet net(arch, schema);
    PolicyParams params = net.init_params(1);
    zero_tensor(params, "head/W");
    zero_tensor(params, "head/b");

    Eigen::VectorXd probs = net.forward(params, batch[0].state);
    REQUIRE(probs.size() == kActionCount);
    for (int a = 0; a < kActionCount; ++a) CHECK(probs[a] == doctest::Approx(1.0 / 9).epsilon(1e-12));
    CHECK(net.bc_loss(params, batch, nullptr) == doctest::Approx(std::log(9.0)).epsilon(1e-12));
  }
}

TEST_CASE("zeroed head on the faithful variant is uniform too") {
  WorldLayout layout = load_layout("train");
  StateSchema schema = make_env_schema(layout);
  ArchitectureConfig arch = ArchitectureConfig::faithful(8);
  arch.hidden_sizes = {16};
  PolicyNet net(arch, schema);
  PolicyParams params = net.init_params(2);
  zero_tensor(params, "head/W");
  zero_tensor(params, "head/b");

  GridWorld env(layout);
  StateVector obs = env.reset(0);
  Eigen::VectorXd probs = net.forward(params, obs);
  REQUIRE(probs.size() == kActionCount);
  for (int a = 0; a < kActionCount; ++a) CHECK(probs[a] == doctest::Approx(1.0 / 9).epsilon(1e-12));
}

TEST_CASE("outputs stay on the probability simplex across random states") {
  StateSchema schema = make_policy_schema();
  PolicyNet net(ArchitectureConfig::compact(8, {8}), schema);
  PolicyParams params = net.init_params(21);

  RngStream rng(77);
  std::vector<Transition> states;
  for (int i = 0; i < 10000; ++i) states.push_back({random_policy_state(schema, rng), 0});

  for (std::size_t at = 0; at < states.size(); at += 500) {
    std::vector<const Transition*> chunk;
    for (std::size_t i = at; i < at + 500; ++i) chunk.push_back(&states[i]);
    Eigen::MatrixXd probs = net.probabilities(params, chunk);
    REQUIRE(probs.rows() == 500);
    REQUIRE(probs.cols() == kActionCount);
    for (int b = 0; b < probs.rows(); ++b) {
      CHECK(probs.row(b).sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(probs.row(b).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("a saturated correct head drives the loss to zero") {
  StateSchema schema = make_policy_schema();
  PolicyNet net(ArchitectureConfig::compact(8, {8}), schema);
  PolicyParams params = net.init_params(4);
  zero_tensor(params, "head/W");
  zero_tensor(params, "head/b");

  std::vector<Transition> batch = random_batch(schema, 8, 9);
  for (Transition& t : batch) t.action = 3;
  const TensorSpec& hb = params.tensor("head/b");
  params.data(hb)[3] = 60.0;

  double loss = net.bc_loss(params, batch, nullptr);
  CHECK(loss >= 0.0);
  CHECK(loss <= 1e-6);
}

TEST_CASE("the log-probability clamp bounds the loss and flattens the gradient") {
  StateSchema schema = make_policy_schema();
  PolicyNet net(ArchitectureConfig::compact(8, {8}), schema);
  PolicyParams params = net.init_params(4);
  zero_tensor(params, "head/W");
  zero_tensor(params, "head/b");

  std::vector<Transition> batch = random_batch(schema, 1, 13);
  batch[0].action = 3;
  const TensorSpec& hb = params.tensor("head/b");
  params.data(hb)[3] = -60.0;  // p(label) ~ e^-60, far below the 1e-9 clamp

  std::vector<double> grad;
  double loss = net.bc_loss(params, batch, &grad);
  CHECK(loss == doctest::Approx(-std::log(1e-9)).epsilon(1e-12));
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("parameter registry carries one shared entity encoder") {
  StateSchema schema = make_policy_schema();
  PolicyNet net(ArchitectureConfig::compact(8, {8}), schema);
  PolicyParams params = net.init_params(1);

  int ent_tensors = 0;
  for (const TensorSpec& t : params.tensors)
    if (t.name.rfind("ent/", 0) == 0) ++ent_tensors;
  CHECK(ent_tensors == 2);  // ent/W and ent/b, regardless of entity count
  CHECK(params.tensor("ent/W").rows == 8);
  CHECK(params.tensor("ent/W").cols == 2);

  std::size_t total = 0;
  for (const TensorSpec& t : params.tensors) {
    CHECK(t.offset == total);  // contiguous flat layout
    total += static_cast<std::size_t>(t.rows) * t.cols;
  }
  CHECK(total == params.param_count());
}

TEST_CASE("mean pooling with a shared encoder is symmetric in the entities") {
  StateSchema schema = make_policy_schema();
  PolicyNet net(ArchitectureConfig::compact(8, {8}), schema);
  PolicyParams params = net.init_params(6);

  RngStream rng(31);
  StateVector s = random_policy_state(schema, rng);
  StateVector swapped = s;
  std::swap(swapped.continuous[2], swapped.continuous[4]);  // ent/foo/x <-> ent/bar/x
  std::swap(swapped.continuous[3], swapped.continuous[5]);  // ent/foo/y <-> ent/bar/y

  Eigen::VectorXd a = net.forward(params, s);
  Eigen::VectorXd b = net.forward(params, swapped);
  for (int i = 0; i < kActionCount; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("training overfits a small demonstration slice") {
  WorldLayout layout = load_layout("train");
  DemoDataset demos = generate_demos(layout, 2, 90);
  Trajectory traj = demos.trajectories[0];
  traj.transitions.resize(10);
  DemoDataset tiny{demos.schema, {traj}, "overfit probe"};
  tiny.validate();

  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.seed = 17;
  auto [params, log] = train(tiny, ArchitectureConfig::compact(16, {32}), cfg);

  REQUIRE(log.epoch_loss.size() == 200);
  CHECK(log.epoch_loss.back() < log.epoch_loss.front());
  CHECK(log.epoch_loss.back() < 0.05);

  PolicyNet net(ArchitectureConfig::compact(16, {32}), tiny.schema);
  CHECK(action_accuracy(net, params, tiny) == 1.0);
}

TEST_CASE("training is bitwise deterministic in its seed") {
  WorldLayout layout = load_layout("train");
  DemoDataset demos = generate_demos(layout, 2, 90);
  Trajectory traj = demos.trajectories[0];
  traj.transitions.resize(12);
  DemoDataset tiny{demos.schema, {traj}, "determinism probe"};

  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.batch_size = 5;
  cfg.seed = 99;
  ArchitectureConfig arch = ArchitectureConfig::compact(8, {8});

  auto [p1, l1] = train(tiny, arch, cfg);
  auto [p2, l2] = train(tiny, arch, cfg);
  REQUIRE(p1.values.size() == p2.values.size());
  CHECK(std::memcmp(p1.values.data(), p2.values.data(), p1.values.size() * sizeof(double)) == 0);
  CHECK(l1.epoch_loss == l2.epoch_loss);

  cfg.seed = 100;
  auto [p3, l3] = train(tiny, arch, cfg);
  CHECK(p1.values != p3.values);
}

TEST_CASE("initialization is seeded and tensor-stream independent") {
  StateSchema schema = make_policy_schema();
  PolicyNet net(ArchitectureConfig::compact(8, {8}), schema);

  PolicyParams a = net.init_params(5);
  PolicyParams b = net.init_params(5);
  PolicyParams c = net.init_params(6);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);

  for (const TensorSpec& t : a.tensors) {
    if (t.cols == 1) {
      for (int r = 0; r < t.rows; ++r) CHECK(a.data(t)[r] == 0.0);
    } else if (t.name.rfind("flag_embed/", 0) == 0 || t.name == "map_embed") {
      for (int k = 0; k < t.rows * t.cols; ++k) {
        CHECK(std::abs(a.data(t)[k]) <= 0.5);
      }
    } else {
      double bound = 1.0 / std::sqrt(static_cast<double>(t.cols));
      for (int k = 0; k < t.rows * t.cols; ++k) CHECK(std::abs(a.data(t)[k]) <= bound);
    }
  }
}

TEST_CASE("action selection: greedy argmax, ties to the lowest index, faithful sampling") {
  Eigen::VectorXd probs(9);
  probs << 0.9, 0.1, 0, 0, 0, 0, 0, 0, 0;
  CHECK(greedy_action(probs) == 0);

  probs.setConstant(1.0 / 9);
  CHECK(greedy_action(probs) == 0);

  probs << 0.05, 0.1, 0.15, 0.2, 0.25, 0.1, 0.05, 0.05, 0.05;
  CHECK(greedy_action(probs) == 4);

  RngStream rng(123);
  std::vector<int> counts(9, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[sample_action(probs, rng)];
  for (int a = 0; a < 9; ++a) {
    double freq = static_cast<double>(counts[a]) / draws;
    CHECK(std::abs(freq - probs[a]) < 0.01);
  }
}

TEST_CASE("act routes through the policy distribution") {
  StateSchema schema = make_policy_schema();
  PolicyNet net(ArchitectureConfig::compact(8, {8}), schema);
  PolicyParams params = net.init_params(4);
  zero_tensor(params, "head/W");
  zero_tensor(params, "head/b");
  params.data(params.tensor("head/b"))[7] = 60.0;

  RngStream rng(1);
  StateVector s = random_policy_state(schema, rng);
  CHECK(act(net, params, s, ActMode::greedy, rng) == 7);
  CHECK(act(net, params, s, ActMode::sample, rng) == 7);
}

TEST_CASE("checkpoints round-trip bitwise") {
  WorldLayout layout = load_layout("train");
  StateSchema schema = make_env_schema(layout);
  ArchitectureConfig arch = ArchitectureConfig::faithful(8);
  arch.hidden_sizes = {16};
  PolicyNet net(arch, schema);
  PolicyParams params = net.init_params(42);

  std::string path = temp_path("augbc_ckpt_test.bin");
  save_checkpoint(path, params, schema.hash(), 42);
  Checkpoint ck = load_checkpoint(path);

  CHECK(ck.params.arch == arch);
  CHECK(ck.schema_hash == schema.hash());
  CHECK(ck.seed == 42);
  REQUIRE(ck.params.values.size() == params.values.size());
  CHECK(std::memcmp(ck.params.values.data(), params.values.data(),
                    params.values.size() * sizeof(double)) == 0);
  REQUIRE(ck.params.tensors.size() == params.tensors.size());
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    CHECK(ck.params.tensors[i].name == params.tensors[i].name);
    CHECK(ck.params.tensors[i].rows == params.tensors[i].rows);
    CHECK(ck.params.tensors[i].cols == params.tensors[i].cols);
    CHECK(ck.params.tensors[i].offset == params.tensors[i].offset);
  }

  Eigen::VectorXd before = net.forward(params, GridWorld(layout).reset(3));
  Eigen::VectorXd after = net.forward(ck.params, GridWorld(layout).reset(3));
  CHECK(before == after);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loading rejects damaged files") {
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), ValidationError);

  std::string path = temp_path("augbc_ckpt_bad.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "not json\n";
  }
  CHECK_THROWS_AS(load_checkpoint(path), ValidationError);

  StateSchema schema = make_policy_schema();
  PolicyNet net(ArchitectureConfig::compact(8, {8}), schema);
  PolicyParams params = net.init_params(1);
  save_checkpoint(path, params, schema.hash(), 1);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 64);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"), ValidationError);
  std::filesystem::remove(path);
}

TEST_CASE("architecture configs serialize, parse and validate") {
  ArchitectureConfig c = ArchitectureConfig::compact();
  CHECK(c.embedding_dim == 128);
  CHECK(c.hidden_sizes == std::vector<int>{256});
  CHECK(c.entity_pooling == EntityPooling::mean);
  CHECK(c.map_encoder == MapEncoder::flatten_embed);

  ArchitectureConfig f = ArchitectureConfig::faithful();
  CHECK(f.entity_pooling == EntityPooling::attention);
  CHECK(f.map_encoder == MapEncoder::conv3d);

  CHECK(ArchitectureConfig::from_json(c.json()) == c);
  CHECK(ArchitectureConfig::from_json(f.json()) == f);
  ArchitectureConfig odd = ArchitectureConfig::faithful(8);
  odd.hidden_sizes = {64, 32};
  CHECK(ArchitectureConfig::from_json(odd.json()) == odd);

  ArchitectureConfig bad = ArchitectureConfig::faithful(9);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ArchitectureConfig::compact(4);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ArchitectureConfig::compact(8, {0});
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ArchitectureConfig::compact();
  bad.action_count = 5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(ArchitectureConfig::from_json("{\"variant\":\"huge\"}"), std::invalid_argument);
}

TEST_CASE("feature layout parsing groups schema names by prefix") {
  StateSchema schema = make_policy_schema();
  FeatureLayout fl = FeatureLayout::from_schema(schema);
  CHECK(fl.self_continuous == std::vector<int>{0, 1});
  REQUIRE(fl.entities.size() == 2);
  CHECK(fl.entities[0].first == "foo");
  CHECK(fl.entities[0].second == std::vector<int>{2, 3});
  CHECK(fl.entities[1].first == "bar");
  CHECK(fl.entities[1].second == std::vector<int>{4, 5});
  CHECK(fl.flag_categorical == std::vector<int>{0, 1});
  CHECK(fl.map_categorical == std::vector<int>{2, 3, 4, 5});

  StateSchema plain = testutil::make_schema(3, 2);
  FeatureLayout fp = FeatureLayout::from_schema(plain);
  CHECK(fp.entities.empty());
  CHECK(fp.map_categorical.empty());
  CHECK(fp.self_continuous.size() == 3);
  CHECK(fp.flag_categorical.size() == 2);
}

TEST_CASE("construction rejects incompatible schemas and inputs") {
  StateSchema bad_width;
  bad_width.continuous_names = {"ent/a/x", "ent/b/x", "ent/b/y"};
  bad_width.normalization.assign(3, 1.0);
  bad_width.categorical_names = {"flag/g"};
  bad_width.categorical_cardinalities = {2};
  CHECK_THROWS_WITH_AS((PolicyNet(ArchitectureConfig::compact(8, {8}), bad_width)),
                       doctest::Contains("widths"), std::invalid_argument);

  StateSchema bad_card = make_policy_schema();
  bad_card.categorical_cardinalities[3] = 5;  // one map feature disagrees
  CHECK_THROWS_WITH_AS((PolicyNet(ArchitectureConfig::compact(8, {8}), bad_card)),
                       doctest::Contains("cardinality"), std::invalid_argument);

  CHECK_THROWS_AS((PolicyNet(ArchitectureConfig::faithful(8), testutil::make_schema(3, 2))),
                  std::invalid_argument);
  CHECK_THROWS_AS((PolicyNet(ArchitectureConfig::faithful(8), make_policy_schema())),
                  std::invalid_argument);  // map is not 5x5x5

  StateSchema schema = make_policy_schema();
  PolicyNet net(ArchitectureConfig::compact(8, {8}), schema);
  PolicyParams params = net.init_params(1);

  RngStream rng(2);
  StateVector s = random_policy_state(schema, rng);
  StateVector short_state = s;
  short_state.continuous.pop_back();
  CHECK_THROWS_AS(net.forward(params, short_state), std::invalid_argument);
  StateVector high = s;
  high.categorical[0] = 9;
  CHECK_THROWS_AS(net.forward(params, high), std::invalid_argument);

  CHECK_THROWS_WITH_AS(net.bc_loss(params, std::vector<const Transition*>{}, nullptr),
                       doctest::Contains("empty batch"), std::invalid_argument);

  PolicyParams poisoned = params;
  poisoned.values[0] = std::nan("");
  CHECK_THROWS_WITH_AS(net.forward(poisoned, s), doctest::Contains("non-finite"),
                       std::invalid_argument);

  PolicyParams other = PolicyNet(ArchitectureConfig::compact(16, {8}), schema).init_params(1);
  CHECK_THROWS_AS(net.forward(other, s), std::invalid_argument);
}

TEST_CASE("train configuration validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.beta1 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
