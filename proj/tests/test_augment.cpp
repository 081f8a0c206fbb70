#include "augbc/augment.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"

using namespace augbc;
using namespace augbc::testutil;

namespace {

StateVector wide_state(int c, int k, double lo, double hi, RngStream& rng) {
  StateVector s;
  for (int i = 0; i < c; ++i) s.continuous.push_back(static_cast<float>(rng.uniform(lo, hi)));
  for (int i = 0; i < k; ++i) s.categorical.push_back(1 + static_cast<std::int32_t>(rng.below(6)));
  return s;
}

/// Independent enumeration of valid kind sets, written against the stated
/// composition rules rather than the production code path.
std::set<std::string> brute_force_ids(int max_size, const std::vector<double>& sigmas) {
  const std::vector<std::string> names = {"gauss", "uni", "sca", "sm", "drc", "drs"};
  std::set<std::string> ids;
  for (int a = 0; a < 6; ++a)
    for (int b = -1; b < 6; ++b)
      for (int c = -1; c < 6; ++c) {
        std::vector<int> kinds = {a};
        if (b >= 0) kinds.push_back(b);
        if (c >= 0) {
          if (b < 0) continue;
          kinds.push_back(c);
        }
        std::set<int> uniq(kinds.begin(), kinds.end());
        if (uniq.size() != kinds.size()) continue;
        if (static_cast<int>(kinds.size()) > max_size) continue;
        if (uniq.count(0) && uniq.count(1)) continue;

        bool has_gauss = uniq.count(0) > 0;
        std::vector<double> sweep = has_gauss ? sigmas : std::vector<double>{0.0};
        for (double sigma : sweep) {
          std::string id;
          for (int kind : uniq) {
            if (!id.empty()) id += '+';
            if (kind == 0) {
              int x = static_cast<int>(std::lround(-std::log10(sigma / 3.0)));
              id += "gauss_e" + std::to_string(x);
            } else {
              id += names[kind];
            }
          }
          ids.insert(id);
        }
      }
  return ids;
}

}  // namespace

TEST_CASE("gaussian noise has the requested moments and spares categoricals") {
  RngStream init(1);
  StateVector s = wide_state(2000, 40, -1.0, 1.0, init);
  RngStream rng(77);
  StateVector out = apply_gauss(s, 0.01, 0.03, rng);

  REQUIRE(out.continuous.size() == s.continuous.size());
  CHECK(out.categorical == s.categorical);

  std::vector<double> diffs;
  for (std::size_t i = 0; i < s.continuous.size(); ++i)
    diffs.push_back(static_cast<double>(out.continuous[i]) - s.continuous[i]);
  CHECK(mean_of(diffs) == doctest::Approx(0.01).epsilon(0.25));
  CHECK(std::sqrt(variance_of(diffs)) == doctest::Approx(0.03).epsilon(0.05));
}

TEST_CASE("uniform noise stays inside the band") {
  RngStream init(2);
  StateVector s = wide_state(5000, 10, 0.5, 2.0, init);
  RngStream rng(78);
  const double lambda = 0.01;
  StateVector out = apply_uni(s, lambda, rng);

  std::vector<double> diffs;
  for (std::size_t i = 0; i < s.continuous.size(); ++i) {
    double d = static_cast<double>(out.continuous[i]) - s.continuous[i];
    CHECK(std::abs(d) <= lambda + 1e-6);
    diffs.push_back(d);
  }
  CHECK(mean_of(diffs) == doctest::Approx(0.0).epsilon(1.0).scale(lambda * 0.05));
  CHECK(variance_of(diffs) == doctest::Approx(lambda * lambda / 3.0).epsilon(0.1));
}

TEST_CASE("scaling multiplies features by draws from the stated interval") {
  RngStream init(3);
  StateVector s = wide_state(5000, 5, 0.5, 2.0, init);

  RngStream rng(79);
  StateVector lit = apply_sca(s, ScaMode::literal, 0.2, 0.4, rng);
  for (std::size_t i = 0; i < s.continuous.size(); ++i) {
    double ratio = lit.continuous[i] / static_cast<double>(s.continuous[i]);
    CHECK(ratio >= 0.2 - 1e-5);
    CHECK(ratio <= 0.4 + 1e-5);
  }

  RngStream rng2(80);
  StateVector cen = apply_sca(s, ScaMode::centered, 0.0, 0.25, rng2);
  std::vector<double> ratios;
  for (std::size_t i = 0; i < s.continuous.size(); ++i) {
    double ratio = cen.continuous[i] / static_cast<double>(s.continuous[i]);
    CHECK(ratio >= 0.75 - 1e-5);
    CHECK(ratio <= 1.25 + 1e-5);
    ratios.push_back(ratio);
  }
  CHECK(mean_of(ratios) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("mixup with a forced coefficient reproduces the convex combination") {
  StateVector a, b;
  a.continuous = {0.0f, 4.0f};
  b.continuous = {4.0f, 0.0f};
  a.categorical = {3};
  b.categorical = {5};

  StateVector mixed = mix_states(a, b, 0.25);
  CHECK(mixed.continuous[0] == 3.0f);
  CHECK(mixed.continuous[1] == 1.0f);
  CHECK(mixed.categorical == std::vector<std::int32_t>{3});
}

TEST_CASE("mixup coefficients follow Beta(0.4, 0.4) and apply uniformly") {
  StateVector a, b;
  for (int i = 0; i < 50; ++i) {
    a.continuous.push_back(0.25f);
    b.continuous.push_back(0.75f);
  }
  RngStream rng(81);
  std::vector<double> eps;
  for (int round = 0; round < 20000; ++round) {
    RngStream sub = rng.child(round);
    StateVector out = apply_sm(a, b, 0.4, sub);
    double e = (out.continuous[0] - 0.75) / (0.25 - 0.75);
    CHECK(e >= -1e-5);
    CHECK(e <= 1.0 + 1e-5);
    for (float v : out.continuous) CHECK(v == out.continuous[0]);
    eps.push_back(e);
  }
  CHECK(mean_of(eps) == doctest::Approx(0.5).epsilon(0.02));
  CHECK(variance_of(eps) == doctest::Approx(0.4 * 0.4 / (0.64 * 1.8)).epsilon(0.05));
}

TEST_CASE("mixup demands matching blocks") {
  StateVector a, b;
  a.continuous = {1.0f, 2.0f};
  b.continuous = {1.0f};
  RngStream rng(82);
  CHECK_THROWS_AS(apply_sm(a, b, 0.4, rng), std::invalid_argument);
}

TEST_CASE("continuous dropout zeroes exactly n features, uniformly placed") {
  RngStream init(4);
  StateVector s = wide_state(13, 0, 0.5, 2.0, init);
  RngStream rng(83);
  std::vector<std::size_t> hits(13, 0);
  const int rounds = 20000;
  for (int r = 0; r < rounds; ++r) {
    RngStream sub = rng.child(r);
    StateVector out = apply_drc(s, 3, sub);
    int zeros = 0;
    for (std::size_t i = 0; i < out.continuous.size(); ++i) {
      if (out.continuous[i] == 0.0f) {
        ++zeros;
        ++hits[i];
      } else {
        CHECK(out.continuous[i] == s.continuous[i]);
      }
    }
    REQUIRE(zeros == 3);
  }
  CHECK(chi_square_uniform(hits, static_cast<std::size_t>(rounds) * 3) < chi_square_crit_999(12));

  RngStream r2(84);
  CHECK_THROWS_AS(apply_drc(s, 14, r2), std::invalid_argument);
}

TEST_CASE("semantic dropout resets n symbols and never touches continuous") {
  RngStream init(5);
  StateVector s = wide_state(6, 30, 0.5, 2.0, init);
  RngStream rng(85);
  StateVector out = apply_drs(s, 12, rng);

  CHECK(out.continuous == s.continuous);
  int zeroed = 0;
  for (std::size_t i = 0; i < out.categorical.size(); ++i) {
    if (out.categorical[i] == 0) {
      ++zeroed;
    } else {
      CHECK(out.categorical[i] == s.categorical[i]);
    }
  }
  CHECK(zeroed == 12);

  StateVector no_cat;
  no_cat.continuous = {1.0f};
  RngStream r2(86);
  CHECK_THROWS_AS(apply_drs(no_cat, 1, r2), std::invalid_argument);
}

TEST_CASE("specs validate their parameter ranges") {
  CHECK_THROWS_AS((AugmentationSpec{GaussParams{0.0, 0.0}}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((AugmentationSpec{UniParams{-0.1}}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((AugmentationSpec{ScaParams{ScaMode::literal, 0.5, 0.4}}.validate()),
                  std::invalid_argument);
  CHECK_THROWS_AS((AugmentationSpec{SmParams{0.0}}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((AugmentationSpec{DrcParams{0}}.validate()), std::invalid_argument);
  AugmentationSpec ok{ScaParams{ScaMode::centered, 0.0, 0.25}};
  ok.validate();
}

TEST_CASE("pipelines normalize to canonical order and reject bad mixes") {
  Pipeline p({AugmentationSpec{DrcParams{}}, AugmentationSpec{GaussParams{}}});
  CHECK(p.id() == "gauss_e4+drc");
  CHECK(p.specs()[0].kind() == AugKind::gauss);
  CHECK(p.specs()[1].kind() == AugKind::drc);

  CHECK_THROWS_AS(Pipeline({AugmentationSpec{GaussParams{}}, AugmentationSpec{UniParams{}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(Pipeline({AugmentationSpec{SmParams{}}, AugmentationSpec{SmParams{}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(Pipeline({}), std::invalid_argument);
  CHECK_THROWS_AS(Pipeline({AugmentationSpec{GaussParams{}}, AugmentationSpec{ScaParams{}},
                            AugmentationSpec{SmParams{}}, AugmentationSpec{DrcParams{}}}),
                  std::invalid_argument);
}

TEST_CASE("pipeline ids parse back to the same pipeline") {
  for (const char* id : {"gauss_e2", "gauss_e4", "uni", "sca+sm+drc", "gauss_e3+sm", "drs",
                         "sm+drc", "sca+drs"}) {
    Pipeline p = Pipeline::parse(id);
    CHECK(p.id() == id);
  }

  CHECK(Pipeline::parse("gauss").id() == "gauss_e4");
  CHECK(std::get<GaussParams>(Pipeline::parse("gauss_e2").specs()[0].params).sigma ==
        doctest::Approx(0.03));
  CHECK(Pipeline::parse("gauss_s0.005").id() == "gauss_s0.005");

  CHECK_THROWS_AS(Pipeline::parse(""), std::invalid_argument);
  CHECK_THROWS_AS(Pipeline::parse("sm+"), std::invalid_argument);
  CHECK_THROWS_AS(Pipeline::parse("blur"), std::invalid_argument);
  CHECK_THROWS_AS(Pipeline::parse("gauss_e0"), std::invalid_argument);
  CHECK_THROWS_AS(Pipeline::parse("gauss+uni"), std::invalid_argument);

  Pipeline cen = Pipeline::parse("sca", ScaMode::centered);
  CHECK(std::get<ScaParams>(cen.specs()[0].params).mode == ScaMode::centered);
}

TEST_CASE("enumeration matches a brute-force census of valid combinations") {
  auto check_against = [](int max_size, const std::vector<double>& sigmas) {
    std::vector<Pipeline> got = enumerate_pipelines(max_size, sigmas);
    std::set<std::string> expect = brute_force_ids(max_size, sigmas);
    REQUIRE(got.size() == expect.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(expect.count(got[i].id()) == 1);
      if (i > 0) CHECK(got[i - 1].id() < got[i].id());
    }
  };

  check_against(1, {kDefaultGaussSigma});
  check_against(2, {kDefaultGaussSigma});
  check_against(3, {kDefaultGaussSigma});
  check_against(3, {kGaussSigmaSweep.begin(), kGaussSigmaSweep.end()});

  CHECK(enumerate_pipelines(1).size() == 6);
  CHECK(enumerate_pipelines(2).size() == 20);
  CHECK(enumerate_pipelines(3).size() == 36);
  // 25 gauss-free sets plus 11 gauss-bearing sets expanded over 4 sigmas.
  CHECK(enumerate_pipelines(3, {kGaussSigmaSweep.begin(), kGaussSigmaSweep.end()}).size() == 69);

  CHECK_THROWS_AS(enumerate_pipelines(0), std::invalid_argument);
  CHECK_THROWS_AS(enumerate_pipelines(4), std::invalid_argument);
}

TEST_CASE("composed pipelines equal the stepwise application on child streams") {
  RngStream init(6);
  StateVector s = wide_state(13, 20, -1.0, 1.0, init);
  StateVector s2 = wide_state(13, 20, -1.0, 1.0, init);
  Transition t{s, 4};
  Transition t_next{s2, 2};

  Pipeline p = Pipeline::parse("gauss_e2+sm+drc");
  RngStream stream(4242);
  Transition fused = apply_pipeline(p, t, &t_next, stream);

  StateVector cur = t.state;
  for (std::size_t i = 0; i < p.specs().size(); ++i) {
    RngStream sub = stream.child(i);
    cur = apply_spec(p.specs()[i], cur, &t_next.state, sub);
  }
  CHECK(fused.state == cur);
  CHECK(fused.action == t.action);
}

TEST_CASE("mixup acts as the identity on a trajectory's last transition") {
  RngStream init(7);
  StateVector s = wide_state(8, 4, -1.0, 1.0, init);
  Transition t{s, 1};

  Pipeline p = Pipeline::parse("sm");
  RngStream stream(55);
  Transition out = apply_pipeline(p, t, nullptr, stream);
  CHECK(out.state == t.state);
  CHECK(out.action == 1);
}

TEST_CASE("pipelines only touch the blocks their kinds own") {
  RngStream init(8);
  StateVector s = wide_state(13, 129, -1.0, 1.0, init);
  StateVector nxt = wide_state(13, 129, -1.0, 1.0, init);
  Transition t{s, 3};
  Transition t_next{nxt, 6};

  for (const char* id : {"gauss_e2", "uni", "sca", "sm", "drc", "gauss_e2+sm+drc"}) {
    RngStream stream(90);
    Transition out = apply_pipeline(Pipeline::parse(id), t, &t_next, stream);
    CHECK(out.state.categorical == s.categorical);
  }

  RngStream stream(91);
  Transition out = apply_pipeline(Pipeline::parse("drs"), t, &t_next, stream);
  CHECK(out.state.continuous == s.continuous);
  CHECK(out.state.categorical != s.categorical);
}

TEST_CASE("cloning appends independent copies after the untouched base") {
  DemoDataset base = random_dataset(make_schema(13, 20), 10, 3, 8, 1010);
  std::size_t base_samples = base.sample_count();
  Pipeline p = Pipeline::parse("gauss_e2+sm");

  DemoDataset out = build_augmented_dataset(base, p, 3, 2024);
  CHECK(out.episode_count() == 40);
  CHECK(out.sample_count() == 4 * base_samples);

  for (std::size_t i = 0; i < base.trajectories.size(); ++i)
    CHECK(out.trajectories[i] == base.trajectories[i]);

  CHECK(out.trajectories[10].episode_id == base.trajectories[0].episode_id + "~c1");
  CHECK(out.trajectories[30].episode_id == base.trajectories[0].episode_id + "~c3");
  CHECK(out.trajectories[10].outcome == base.trajectories[0].outcome);

  // Clones carry the base action sequence but perturbed states.
  CHECK(out.trajectories[10].transitions[0].action == base.trajectories[0].transitions[0].action);
  CHECK(out.trajectories[10].transitions[0].state != base.trajectories[0].transitions[0].state);
  CHECK(out.trajectories[10].transitions[0].state != out.trajectories[20].transitions[0].state);

  CHECK(out.provenance.find("gauss_e2+sm") != std::string::npos);

  DemoDataset again = build_augmented_dataset(base, p, 3, 2024);
  CHECK(again == out);
  DemoDataset other = build_augmented_dataset(base, p, 3, 2025);
  CHECK(other != out);

  DemoDataset none = build_augmented_dataset(base, p, 0, 2024);
  CHECK(none.trajectories == base.trajectories);
}
