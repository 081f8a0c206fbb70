#include "augbc/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>
#include <unordered_set>

#include <json.hpp>

namespace augbc {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) { throw std::invalid_argument(msg); }

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

const char* sca_mode_name(ScaMode m) { return m == ScaMode::literal ? "literal" : "centered"; }

ScaMode parse_sca_mode(const std::string& s) {
  if (s == "literal") return ScaMode::literal;
  if (s == "centered") return ScaMode::centered;
  bad("unknown scaling mode: " + s);
}

json train_to_json(const TrainConfig& t) {
  return json{{"epochs", t.epochs},         {"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate}, {"beta1", t.beta1},
              {"beta2", t.beta2},           {"adam_eps", t.adam_eps},
              {"seed", t.seed},             {"shuffle", t.shuffle}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.epochs = j.at("epochs").get<int>();
  t.batch_size = j.at("batch_size").get<int>();
  t.learning_rate = j.at("learning_rate").get<double>();
  t.beta1 = j.at("beta1").get<double>();
  t.beta2 = j.at("beta2").get<double>();
  t.adam_eps = j.at("adam_eps").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.shuffle = j.at("shuffle").get<bool>();
  return t;
}

}  // namespace

void SweepConfig::validate() const {
  if (seeds < 1) bad("sweep: seeds must be >= 1");
  if (episodes_per_eval < 1) bad("sweep: episodes_per_eval must be >= 1");
  if (clones < 0) bad("sweep: clones must be >= 0");
  if (eval_jitter_radius < 0) bad("sweep: eval_jitter_radius must be >= 0");
  if (workers < 0) bad("sweep: workers must be >= 0");
  if (data_fractions.empty()) bad("sweep: data_fractions must be non-empty");
  for (double f : data_fractions)
    if (!(f > 0.0 && f <= 1.0)) bad("sweep: data fractions must lie in (0, 1]");
  if (layouts.empty()) bad("sweep: layouts must be non-empty");
  if (demos_path.empty()) bad("sweep: demos_path is required");
  if (out_dir.empty()) bad("sweep: out_dir is required");
  arch.validate();
  train.validate();

  std::set<std::string> seen;
  for (const std::string& id : pipelines) {
    if (id == kBaselineId) bad("sweep: the baseline is implicit, do not list it");
    if (id != "all") Pipeline::parse(id, sca_mode);
    if (!seen.insert(id).second) bad("sweep: duplicate pipeline id " + id);
  }
}

std::string SweepConfig::json() const {
  nlohmann::json j;
  j["pipelines"] = pipelines;
  j["data_fractions"] = data_fractions;
  j["seeds"] = seeds;
  j["clones"] = clones;
  j["layouts"] = layouts;
  j["episodes_per_eval"] = episodes_per_eval;
  j["eval_jitter_radius"] = eval_jitter_radius;
  j["sca_mode"] = sca_mode_name(sca_mode);
  j["arch"] = nlohmann::json::parse(arch.json());
  j["train"] = train_to_json(train);
  j["demos_path"] = demos_path;
  j["out_dir"] = out_dir;
  j["workers"] = workers;
  j["master_seed"] = master_seed;
  return j.dump(2) + "\n";
}

SweepConfig SweepConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("sweep config: malformed JSON: ") + e.what());
  }
  SweepConfig c;
  c.pipelines = j.at("pipelines").get<std::vector<std::string>>();
  if (j.contains("data_fractions")) c.data_fractions = j["data_fractions"].get<std::vector<double>>();
  if (j.contains("seeds")) c.seeds = j["seeds"].get<int>();
  if (j.contains("clones")) c.clones = j["clones"].get<int>();
  if (j.contains("layouts")) c.layouts = j["layouts"].get<std::vector<std::string>>();
  if (j.contains("episodes_per_eval")) c.episodes_per_eval = j["episodes_per_eval"].get<int>();
  if (j.contains("eval_jitter_radius")) c.eval_jitter_radius = j["eval_jitter_radius"].get<int>();
  if (j.contains("sca_mode")) c.sca_mode = parse_sca_mode(j["sca_mode"].get<std::string>());
  if (j.contains("arch")) c.arch = ArchitectureConfig::from_json(j["arch"].dump());
  if (j.contains("train")) c.train = train_from_json(j["train"]);
  c.demos_path = j.at("demos_path").get<std::string>();
  c.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("workers")) c.workers = j["workers"].get<int>();
  if (j.contains("master_seed")) c.master_seed = j["master_seed"].get<std::uint64_t>();
  c.validate();
  return c;
}

SweepConfig SweepConfig::desk_profile(std::string demos_path, std::string out_dir) {
  SweepConfig c;
  c.pipelines = {"gauss_e4", "uni",    "sca",    "sm",          "drc",          "drs",
                 "sca+sm",   "sca+drc", "sm+drc", "gauss_e4+sm", "gauss_e4+drc", "sca+sm+drc"};
  c.data_fractions = {0.5, 1.0};
  c.seeds = 3;
  c.clones = 3;
  c.episodes_per_eval = 100;
  c.eval_jitter_radius = 2;
  c.sca_mode = ScaMode::centered;
  c.arch = ArchitectureConfig::compact(32, {64});
  c.train.epochs = 60;
  c.demos_path = std::move(demos_path);
  c.out_dir = std::move(out_dir);
  return c;
}

SweepConfig SweepConfig::full_profile(std::string demos_path, std::string out_dir) {
  SweepConfig c;
  c.pipelines = {"all"};
  c.sca_mode = ScaMode::centered;
  c.demos_path = std::move(demos_path);
  c.out_dir = std::move(out_dir);
  return c;
}

std::string trial_key(const std::string& pipeline, double fraction, int seed,
                      const std::string& layout) {
  return pipeline + "|" + fmt_real(fraction) + "|" + std::to_string(seed) + "|" + layout;
}

int PolicySource::act(const StateVector& obs) {
  return greedy_action(net_.forward(params_, obs));
}

void ExpertSource::begin_episode(const GridWorld& env) {
  ++episode_;
  PathChoice path = pinned_ ? *pinned_ : (episode_ % 2 == 0 ? PathChoice::A : PathChoice::B);
  plan_ = plan_expert_actions(layout_, path, env.state().pose);
  at_ = 0;
}

int ExpertSource::act(const StateVector&) {
  if (at_ >= plan_.size()) return kActNoOp;
  return plan_[at_++];
}

int RandomSource::act(const StateVector&) {
  return static_cast<int>(rng_.below(kActionCount));
}

TrialResult evaluate(ActionSource& source, const WorldLayout& layout, int episodes,
                     std::uint64_t seed, int jitter_radius) {
  if (episodes < 1) bad("evaluate: episodes must be >= 1");
  GridWorld env(layout);
  RngStream root(seed);

  TrialResult r;
  r.layout = layout.name;
  r.episodes = episodes;
  long long total_steps = 0;
  for (int e = 0; e < episodes; ++e) {
    StateVector obs = env.reset(root.child(static_cast<std::uint64_t>(e)).next_u64(), jitter_radius);
    source.begin_episode(env);

    // A deterministic source in a deterministic world repeats forever once an
    // exact environment state recurs, so such episodes fail immediately.
    std::unordered_set<std::uint64_t> seen;
    bool success = false;
    int steps = 0;
    while (true) {
      if (source.deterministic()) {
        const EnvState& s = env.state();
        std::uint64_t key = (static_cast<std::uint64_t>(s.pose.cell.row) << 40) |
                            (static_cast<std::uint64_t>(s.pose.cell.col) << 32) |
                            (static_cast<std::uint64_t>(s.pose.heading) << 28) |
                            (static_cast<std::uint64_t>(s.door_timer) << 12) |
                            (static_cast<std::uint64_t>(s.button_pressed) << 8) |
                            static_cast<std::uint64_t>(s.jump_cooldown);
        if (!seen.insert(key).second) break;
      }
      GridWorld::StepResult res = env.step(source.act(obs));
      obs = std::move(res.observation);
      ++steps;
      if (res.done) {
        success = res.success;
        break;
      }
    }
    total_steps += steps;
    if (success) ++r.successes;
  }
  r.success_rate = static_cast<double>(r.successes) / r.episodes;
  r.mean_episode_length = static_cast<double>(total_steps) / r.episodes;
  return r;
}

TrialResult evaluate(const PolicyNet& net, const PolicyParams& params, const WorldLayout& layout,
                     int episodes, std::uint64_t seed, int jitter_radius) {
  if (!(net.schema() == make_env_schema(layout)))
    bad("evaluate: policy schema does not match the layout observation schema");
  PolicySource source(net, params);
  return evaluate(source, layout, episodes, seed, jitter_radius);
}

RelValue relative_success(double model_rate, double baseline_rate) {
  if (baseline_rate > 0.0) return {model_rate / baseline_rate, true};
  return {0.0, false};
}

void append_trial(const std::string& path, const TrialResult& t) {
  json j;
  j["pipeline"] = t.pipeline;
  j["fraction"] = t.data_fraction;
  j["seed"] = t.seed;
  j["layout"] = t.layout;
  j["successes"] = t.successes;
  j["episodes"] = t.episodes;
  j["success_rate"] = t.success_rate;
  j["mean_episode_length"] = t.mean_episode_length;
  j["failed"] = t.failed;
  j["error"] = t.error;
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw ValidationError("cannot open trial store for append: " + path);
  out << j.dump() << "\n";
  if (!out) throw ValidationError("I/O failure appending to " + path);
}

std::vector<TrialResult> load_trials(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<TrialResult> trials;
  if (!in) return trials;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("trial store line " + std::to_string(line_no) + ": " + e.what());
    }
    TrialResult t;
    t.pipeline = j.at("pipeline").get<std::string>();
    t.data_fraction = j.at("fraction").get<double>();
    t.seed = j.at("seed").get<int>();
    t.layout = j.at("layout").get<std::string>();
    t.successes = j.at("successes").get<int>();
    t.episodes = j.at("episodes").get<int>();
    t.success_rate = j.at("success_rate").get<double>();
    t.mean_episode_length = j.at("mean_episode_length").get<double>();
    t.failed = j.at("failed").get<bool>();
    t.error = j.at("error").get<std::string>();
    trials.push_back(std::move(t));
  }
  return trials;
}

namespace {

struct SweepJob {
  std::string pipeline;  // kBaselineId or a pipeline id
  double fraction = 1.0;
  int seed = 0;
  std::vector<std::size_t> missing_layouts;  // indices into the layout list
};

std::uint64_t derived_seed(std::uint64_t master, const std::string& tag) {
  return fnv1a64(std::to_string(master) + "|" + tag);
}

}  // namespace

SweepReport run_sweep(const SweepConfig& cfg) {
  cfg.validate();
  DemoDataset demos = load_dataset(cfg.demos_path);

  std::vector<std::string> ids;
  for (const std::string& id : cfg.pipelines) {
    if (id == "all") {
      for (const Pipeline& p : enumerate_pipelines(3, {kDefaultGaussSigma}, cfg.sca_mode))
        ids.push_back(p.id());
    } else {
      ids.push_back(Pipeline::parse(id, cfg.sca_mode).id());
    }
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  std::vector<WorldLayout> layouts;
  for (const std::string& name : cfg.layouts) {
    layouts.push_back(load_layout(name));
    if (!(make_env_schema(layouts.back()) == demos.schema))
      bad("sweep: demos schema does not match layout " + name);
  }

  std::filesystem::create_directories(cfg.out_dir);
  const std::string store = cfg.out_dir + "/trials.jsonl";
  std::set<std::string> done;
  for (const TrialResult& t : load_trials(store))
    done.insert(trial_key(t.pipeline, t.data_fraction, t.seed, t.layout));

  std::vector<SweepJob> jobs;
  std::vector<std::string> model_ids = ids;
  model_ids.insert(model_ids.begin(), kBaselineId);
  for (const std::string& pid : model_ids)
    for (double frac : cfg.data_fractions)
      for (int seed = 0; seed < cfg.seeds; ++seed) {
        SweepJob job{pid, frac, seed, {}};
        for (std::size_t li = 0; li < layouts.size(); ++li)
          if (!done.count(trial_key(pid, frac, seed, layouts[li].name)))
            job.missing_layouts.push_back(li);
        if (!job.missing_layouts.empty()) jobs.push_back(std::move(job));
      }

  std::mutex writer;
  std::atomic<std::size_t> next{0};
  std::atomic<int> executed{0};
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const SweepJob& job = jobs[i];
      const std::string frac_tag = fmt_real(job.fraction) + "|" + std::to_string(job.seed);
      try {
        DemoDataset base =
            job.fraction < 1.0
                ? subsample_episodes(demos, job.fraction,
                                     derived_seed(cfg.master_seed, "subsample|" + frac_tag))
                : demos;
        DemoDataset train_set =
            job.pipeline == kBaselineId
                ? std::move(base)
                : build_augmented_dataset(
                      base, Pipeline::parse(job.pipeline, cfg.sca_mode),
                      static_cast<std::size_t>(cfg.clones),
                      derived_seed(cfg.master_seed, "augment|" + job.pipeline + "|" + frac_tag));

        TrainConfig tc = cfg.train;
        tc.seed = derived_seed(cfg.master_seed, "train|" + job.pipeline + "|" + frac_tag);
        auto [params, log] = train(train_set, cfg.arch, tc);
        executed.fetch_add(1);

        PolicyNet net(cfg.arch, train_set.schema);
        for (std::size_t li : job.missing_layouts) {
          TrialResult r = evaluate(
              net, params, layouts[li], cfg.episodes_per_eval,
              derived_seed(cfg.master_seed,
                           "eval|" + job.pipeline + "|" + frac_tag + "|" + layouts[li].name),
              cfg.eval_jitter_radius);
          r.pipeline = job.pipeline;
          r.data_fraction = job.fraction;
          r.seed = job.seed;
          std::lock_guard<std::mutex> lock(writer);
          append_trial(store, r);
        }
      } catch (const std::exception& e) {
        for (std::size_t li : job.missing_layouts) {
          TrialResult r;
          r.pipeline = job.pipeline;
          r.data_fraction = job.fraction;
          r.seed = job.seed;
          r.layout = layouts[li].name;
          r.failed = true;
          r.error = e.what();
          std::lock_guard<std::mutex> lock(writer);
          append_trial(store, r);
        }
      }
    }
  };

  int n_workers = cfg.workers > 0 ? cfg.workers
                                  : std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  n_workers = std::min<int>(n_workers, std::max<std::size_t>(jobs.size(), 1));
  std::vector<std::thread> pool;
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();

  SweepReport report = build_report(load_trials(store));
  report.jobs_executed = executed.load();
  return report;
}

}  // namespace augbc
