#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "augbc/augment.hpp"
#include "augbc/dataset.hpp"
#include "augbc/env.hpp"
#include "augbc/experiment.hpp"
#include "augbc/policy.hpp"
#include "augbc/rng.hpp"

namespace {

using namespace augbc;

// AUGBC_SEED provides the default for every --seed / --master-seed flag.
std::uint64_t default_seed() {
  const char* v = std::getenv("AUGBC_SEED");
  if (!v || !*v) return 0;
  char* end = nullptr;
  std::uint64_t s = std::strtoull(v, &end, 10);
  if (end == v || *end) throw std::invalid_argument("AUGBC_SEED must be a non-negative integer");
  return s;
}

ScaMode parse_sca_mode(const std::string& name) {
  if (name == "literal") return ScaMode::literal;
  if (name == "centered") return ScaMode::centered;
  throw std::invalid_argument("sca mode must be literal or centered");
}

int cmd_env_validate(const std::string& layout_arg) {
  WorldLayout layout = load_layout(layout_arg);
  std::printf("layout %s: %dx%d, difficulty %s, %zu obstacle(s), door opens for %d steps\n",
              layout.name.c_str(), layout.width(), layout.height(), layout.difficulty_tag.c_str(),
              layout.obstacles.size(), layout.door_open_duration);
  std::printf("ok\n");
  return 0;
}

int cmd_demos_generate(const std::string& layout_arg, int episodes, std::uint64_t seed, int jitter,
                       const std::string& out) {
  WorldLayout layout = load_layout(layout_arg);
  DemoDataset demos = generate_demos(layout, static_cast<std::size_t>(episodes), seed, jitter);
  save_dataset(demos, out);
  std::printf("wrote %s: %zu episodes, %zu samples\n", out.c_str(), demos.episode_count(),
              demos.sample_count());
  return 0;
}

int cmd_augment(const std::string& in, const std::string& pipeline_id, int clones,
                std::uint64_t seed, const std::string& sca_mode, const std::string& out) {
  DemoDataset base = load_dataset(in);
  Pipeline p = Pipeline::parse(pipeline_id, parse_sca_mode(sca_mode));
  DemoDataset augmented = build_augmented_dataset(base, p, static_cast<std::size_t>(clones), seed);
  save_dataset(augmented, out);
  std::printf("wrote %s: %zu episodes, %zu samples (%zu base + clones)\n", out.c_str(),
              augmented.episode_count(), augmented.sample_count(), base.sample_count());
  return 0;
}

struct TrainArgs {
  std::string demos;
  std::string pipeline = kBaselineId;
  int clones = 3;
  double data_frac = 1.0;
  std::uint64_t seed = 0;
  std::string sca_mode = "centered";
  std::string arch = "compact";
  int dim = 128;
  std::vector<int> hidden = {256};
  int epochs = 300;
  int batch = 256;
  double lr = 1e-3;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  DemoDataset data = load_dataset(a.demos);
  RngStream root(a.seed);
  if (a.data_frac < 1.0) {
    RngStream sub = root.child(0);
    data = subsample_episodes(data, a.data_frac, sub.next_u64());
  }
  if (a.pipeline != kBaselineId) {
    Pipeline p = Pipeline::parse(a.pipeline, parse_sca_mode(a.sca_mode));
    RngStream aug = root.child(1);
    data = build_augmented_dataset(data, p, static_cast<std::size_t>(a.clones), aug.next_u64());
  }

  ArchitectureConfig arch;
  if (a.arch == "compact") {
    arch = ArchitectureConfig::compact(a.dim, a.hidden);
  } else if (a.arch == "faithful") {
    arch = ArchitectureConfig::faithful(a.dim);
    arch.hidden_sizes = a.hidden;
  } else {
    throw std::invalid_argument("arch must be compact or faithful");
  }

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.learning_rate = a.lr;
  cfg.seed = a.seed;

  std::printf("training on %zu samples (%zu episodes), pipeline %s\n", data.sample_count(),
              data.episode_count(), a.pipeline.c_str());
  auto [params, log] = train(data, arch, cfg);
  PolicyNet net(arch, data.schema);
  double acc = action_accuracy(net, params, data);
  save_checkpoint(a.out, params, data.schema.hash(), a.seed);
  std::printf("wrote %s: final loss %.6f, action accuracy %.4f\n", a.out.c_str(),
              log.epoch_loss.back(), acc);
  return 0;
}

int cmd_eval(const std::string& model, const std::string& layout_arg, int episodes,
             std::uint64_t seed, int jitter) {
  Checkpoint ckpt = load_checkpoint(model);
  WorldLayout layout = load_layout(layout_arg);
  StateSchema schema = make_env_schema(layout);
  if (schema.hash() != ckpt.schema_hash)
    throw ValidationError("checkpoint schema hash " + ckpt.schema_hash +
                          " does not match layout schema " + schema.hash());
  PolicyNet net(ckpt.params.arch, schema);
  TrialResult r = evaluate(net, ckpt.params, layout, episodes, seed, jitter);
  std::printf("%s on %s: %d/%d success (%.4f), mean episode length %.1f\n", model.c_str(),
              layout.name.c_str(), r.successes, r.episodes, r.success_rate,
              r.mean_episode_length);
  return 0;
}

int cmd_sweep(const std::string& profile, const std::string& config_path, std::string demos,
              std::string out, int workers, std::uint64_t master_seed, bool master_seed_set) {
  SweepConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config: " + config_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    cfg = SweepConfig::from_json_text(buf.str());
    if (!demos.empty()) cfg.demos_path = demos;
    if (!out.empty()) cfg.out_dir = out;
  } else if (profile == "desk") {
    cfg = SweepConfig::desk_profile(demos, out);
  } else if (profile == "full") {
    cfg = SweepConfig::full_profile(demos, out);
  } else {
    throw std::invalid_argument("pass --config FILE or --profile desk|full");
  }
  if (workers > 0) cfg.workers = workers;
  if (master_seed_set) cfg.master_seed = master_seed;

  SweepReport report = run_sweep(cfg);
  emit_report(report, cfg.out_dir);
  std::printf("sweep done: %zu trials (%d new jobs), %zu models, report in %s\n",
              report.trials.size(), report.jobs_executed, report.models.size(), cfg.out_dir.c_str());
  return 0;
}

int cmd_report(std::string trials_path, const std::string& out) {
  if (trials_path.empty()) trials_path = out + "/trials.jsonl";
  std::vector<TrialResult> trials = load_trials(trials_path);
  SweepReport report = build_report(trials);
  emit_report(report, out);
  std::printf("report on %zu trials (%zu models) written to %s\n", report.trials.size(),
              report.models.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grid-world behavioral cloning with feature-space augmentation"};
  app.require_subcommand(1);

  std::uint64_t seed_default = 0;
  try {
    seed_default = default_seed();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  auto* env_cmd = app.add_subcommand("env", "environment utilities");
  env_cmd->require_subcommand(1);
  auto* env_validate = env_cmd->add_subcommand("validate", "load a layout and check invariants");
  std::string ev_layout;
  env_validate->add_option("layout", ev_layout, "built-in name or JSON file")->required();

  auto* demos_cmd = app.add_subcommand("demos", "demonstration utilities");
  demos_cmd->require_subcommand(1);
  auto* demos_gen = demos_cmd->add_subcommand("generate", "record scripted-expert episodes");
  std::string dg_layout = "train", dg_out;
  int dg_episodes = 78, dg_jitter = 2;
  std::uint64_t dg_seed = seed_default;
  demos_gen->add_option("--layout", dg_layout, "layout name or file")->capture_default_str();
  demos_gen->add_option("--episodes", dg_episodes, "episode count")->capture_default_str();
  demos_gen->add_option("--seed", dg_seed, "generation seed")->capture_default_str();
  demos_gen->add_option("--jitter", dg_jitter, "start-pose jitter radius")->capture_default_str();
  demos_gen->add_option("--out", dg_out, "output JSONL path")->required();

  auto* augment_cmd = app.add_subcommand("augment", "apply a pipeline to a demo set");
  std::string ag_in, ag_pipeline, ag_out, ag_sca = "centered";
  int ag_clones = 3;
  std::uint64_t ag_seed = seed_default;
  augment_cmd->add_option("--in", ag_in, "input JSONL")->required();
  augment_cmd->add_option("--pipeline", ag_pipeline, "pipeline id, e.g. sca+sm")->required();
  augment_cmd->add_option("--clones", ag_clones, "clones per transition")->capture_default_str();
  augment_cmd->add_option("--seed", ag_seed, "augmentation seed")->capture_default_str();
  augment_cmd->add_option("--sca-mode", ag_sca, "literal or centered")->capture_default_str();
  augment_cmd->add_option("--out", ag_out, "output JSONL path")->required();

  auto* train_cmd = app.add_subcommand("train", "train a policy on (augmented) demos");
  TrainArgs ta;
  ta.seed = seed_default;
  train_cmd->add_option("--demos", ta.demos, "demo JSONL")->required();
  train_cmd->add_option("--pipeline", ta.pipeline, "pipeline id or baseline")->capture_default_str();
  train_cmd->add_option("--clones", ta.clones, "clones per transition")->capture_default_str();
  train_cmd->add_option("--data-frac", ta.data_frac, "episode fraction in (0,1]")
      ->capture_default_str();
  train_cmd->add_option("--seed", ta.seed, "seed for subsample/augment/init/shuffle")
      ->capture_default_str();
  train_cmd->add_option("--sca-mode", ta.sca_mode, "literal or centered")->capture_default_str();
  train_cmd->add_option("--arch", ta.arch, "compact or faithful")->capture_default_str();
  train_cmd->add_option("--dim", ta.dim, "embedding dim d")->capture_default_str();
  train_cmd->add_option("--hidden", ta.hidden, "hidden layer sizes")->capture_default_str();
  train_cmd->add_option("--epochs", ta.epochs, "training epochs")->capture_default_str();
  train_cmd->add_option("--batch", ta.batch, "minibatch size")->capture_default_str();
  train_cmd->add_option("--lr", ta.lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--out", ta.out, "checkpoint path")->required();

  auto* eval_cmd = app.add_subcommand("eval", "run a checkpoint in an environment");
  std::string el_model, el_layout;
  int el_episodes = 100, el_jitter = 0;
  std::uint64_t el_seed = seed_default;
  eval_cmd->add_option("--model", el_model, "checkpoint path")->required();
  eval_cmd->add_option("--layout", el_layout, "layout name or file")->required();
  eval_cmd->add_option("--episodes", el_episodes, "episode count")->capture_default_str();
  eval_cmd->add_option("--seed", el_seed, "evaluation seed")->capture_default_str();
  eval_cmd->add_option("--jitter", el_jitter, "start-pose jitter radius")->capture_default_str();

  auto* sweep_cmd = app.add_subcommand("sweep", "run a pipeline x fraction x seed study");
  std::string sw_profile, sw_config, sw_demos, sw_out;
  int sw_workers = 0;
  std::uint64_t sw_master = seed_default;
  sweep_cmd->add_option("--profile", sw_profile, "desk or full");
  sweep_cmd->add_option("--config", sw_config, "JSON config (mirrors the sweep settings)");
  sweep_cmd->add_option("--demos", sw_demos, "demo JSONL path");
  sweep_cmd->add_option("--out", sw_out, "output directory");
  sweep_cmd->add_option("--workers", sw_workers, "worker threads (0 = auto)");
  auto* sw_master_opt = sweep_cmd->add_option("--master-seed", sw_master, "study master seed");

  auto* report_cmd = app.add_subcommand("report", "rebuild report files from a trial store");
  std::string rp_trials, rp_out;
  report_cmd->add_option("--trials", rp_trials, "trials.jsonl path (default <out>/trials.jsonl)");
  report_cmd->add_option("--out", rp_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (env_validate->parsed()) return cmd_env_validate(ev_layout);
    if (demos_gen->parsed()) return cmd_demos_generate(dg_layout, dg_episodes, dg_seed, dg_jitter, dg_out);
    if (augment_cmd->parsed())
      return cmd_augment(ag_in, ag_pipeline, ag_clones, ag_seed, ag_sca, ag_out);
    if (train_cmd->parsed()) return cmd_train(ta);
    if (eval_cmd->parsed()) return cmd_eval(el_model, el_layout, el_episodes, el_seed, el_jitter);
    if (sweep_cmd->parsed())
      return cmd_sweep(sw_profile, sw_config, sw_demos, sw_out, sw_workers, sw_master,
                       !sw_master_opt->empty() || seed_default != 0);
    if (report_cmd->parsed()) return cmd_report(rp_trials, rp_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
