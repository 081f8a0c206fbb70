#include "augbc/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace augbc {
namespace {

using nlohmann::json;

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_label(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Published per-kind mean relative success over the test environments,
/// shown next to the locally computed column.
double reference_group_mean(AugKind k) {
  switch (k) {
    case AugKind::gauss: return 1.25;
    case AugKind::uni: return 1.02;
    case AugKind::sca: return 1.27;
    case AugKind::sm: return 1.26;
    case AugKind::drc: return 1.26;
    case AugKind::drs: return 0.50;
  }
  return 0.0;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open for write: " + path);
  out << content;
  if (!out) throw ValidationError("I/O failure writing " + path);
}

}  // namespace

SweepReport build_report(std::vector<TrialResult> trials, int top_k,
                         std::pair<double, double> bottom_band) {
  SweepReport rep;

  // Append-log semantics: the first completed record for a key wins.
  std::set<std::string> seen;
  for (TrialResult& t : trials) {
    if (seen.insert(trial_key(t.pipeline, t.data_fraction, t.seed, t.layout)).second)
      rep.trials.push_back(std::move(t));
  }
  auto order = [](const TrialResult& a, const TrialResult& b) {
    return std::tie(a.pipeline, a.data_fraction, a.seed, a.layout) <
           std::tie(b.pipeline, b.data_fraction, b.seed, b.layout);
  };
  std::sort(rep.trials.begin(), rep.trials.end(), order);

  std::set<std::string> layout_universe;
  using Key = std::pair<std::string, double>;
  std::map<Key, std::map<std::string, std::vector<double>>> rates;
  for (const TrialResult& t : rep.trials) {
    layout_universe.insert(t.layout);
    if (!t.failed) rates[{t.pipeline, t.data_fraction}][t.layout].push_back(t.success_rate);
  }

  for (const auto& [key, by_layout] : rates) {
    ModelSummary m;
    m.pipeline = key.first;
    m.fraction = key.second;
    for (const auto& [layout, values] : by_layout) {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      m.mean_success[layout] = mean;
      m.std_success[layout] = std::sqrt(var / static_cast<double>(values.size()));
    }
    auto train_it = m.mean_success.find("train");
    m.train_success = train_it == m.mean_success.end() ? 0.0 : train_it->second;
    rep.models.push_back(std::move(m));
  }

  std::map<double, const ModelSummary*> baselines;
  for (const ModelSummary& m : rep.models)
    if (m.is_baseline()) baselines[m.fraction] = &m;

  for (ModelSummary& m : rep.models) {
    const ModelSummary* base =
        baselines.count(m.fraction) ? baselines.at(m.fraction) : nullptr;
    for (const std::string& layout : layout_universe) {
      auto mine = m.mean_success.find(layout);
      if (mine == m.mean_success.end()) continue;
      double base_rate =
          base != nullptr && base->mean_success.count(layout) ? base->mean_success.at(layout) : 0.0;
      RelValue rel = relative_success(mine->second, base_rate);
      m.relative[layout] = rel;
      if (!m.is_baseline() && !rel.defined) ++rep.baseline_failures;
    }
  }

  for (const ModelSummary& m : rep.models) {
    if (m.is_baseline()) continue;
    ConsistencyRow row;
    row.pipeline = m.pipeline;
    row.fraction = m.fraction;
    for (const auto& [layout, rel] : m.relative)
      if (rel.defined && rel.value > 1.0) ++row.envs_above_one;
    row.complete = m.relative.size() == layout_universe.size();
    rep.consistency.push_back(std::move(row));
  }
  std::sort(rep.consistency.begin(), rep.consistency.end(),
            [](const ConsistencyRow& a, const ConsistencyRow& b) {
              return std::tie(b.envs_above_one, a.pipeline, a.fraction) <
                     std::tie(a.envs_above_one, b.pipeline, b.fraction);
            });

  for (AugKind kind : kAllAugKinds) {
    GroupStat g;
    g.kind = kind;
    g.reference = reference_group_mean(kind);
    double sum = 0.0;
    int count = 0;
    for (const ModelSummary& m : rep.models) {
      if (m.is_baseline()) continue;
      Pipeline p = Pipeline::parse(m.pipeline);
      if (!p.contains(kind)) continue;
      ++g.model_count;
      for (const auto& [layout, rel] : m.relative) {
        if (layout == "train") continue;
        if (rel.defined) {
          sum += rel.value;
          ++count;
        } else {
          ++g.undefined_count;
        }
      }
    }
    g.mean_relative = count > 0 ? sum / count : 0.0;
    rep.groups.push_back(g);
  }

  std::vector<const ModelSummary*> ranked;
  for (const ModelSummary& m : rep.models)
    if (!m.is_baseline()) ranked.push_back(&m);
  std::sort(ranked.begin(), ranked.end(), [](const ModelSummary* a, const ModelSummary* b) {
    return std::tie(b->train_success, a->pipeline, a->fraction) <
           std::tie(a->train_success, b->pipeline, b->fraction);
  });
  std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(std::max(top_k, 0)),
                                           ranked.size());
  for (std::size_t i = 0; i < take; ++i)
    rep.top_cohort.push_back({ranked[i]->pipeline, ranked[i]->fraction});
  for (const auto& [fraction, base] : baselines)
    rep.top_cohort.push_back({base->pipeline, fraction});

  for (const ModelSummary* m : ranked) {
    auto rel = m->relative.find("train");
    if (rel == m->relative.end() || !rel->second.defined) continue;
    if (rel->second.value >= bottom_band.first && rel->second.value <= bottom_band.second)
      rep.bottom_cohort.push_back({m->pipeline, m->fraction});
  }
  std::sort(rep.bottom_cohort.begin(), rep.bottom_cohort.end(),
            [](const ModelKey& a, const ModelKey& b) {
              return std::tie(a.pipeline, a.fraction) < std::tie(b.pipeline, b.fraction);
            });

  return rep;
}

namespace {

json rel_to_json(const RelValue& r) {
  return json{{"value", r.value}, {"defined", r.defined}};
}

std::string plot_csv(const SweepReport& rep, const std::vector<ModelKey>& cohort) {
  std::set<std::string> layouts;
  for (const TrialResult& t : rep.trials) layouts.insert(t.layout);

  std::string out = "label,layout,relative\r\n";
  for (const ModelKey& key : cohort) {
    auto it = std::find_if(rep.models.begin(), rep.models.end(), [&](const ModelSummary& m) {
      return m.pipeline == key.pipeline && m.fraction == key.fraction;
    });
    if (it == rep.models.end()) continue;
    std::string label = key.pipeline + "@" + fmt_label(key.fraction);
    for (const std::string& layout : layouts) {
      auto rel = it->relative.find(layout);
      out += csv_escape(label) + "," + layout + ",";
      if (rel != it->relative.end() && rel->second.defined) out += fmt_real(rel->second.value);
      out += "\r\n";
    }
  }
  return out;
}

}  // namespace

void emit_report(const SweepReport& rep, const std::string& out_dir) {
  if (rep.trials.empty()) throw ValidationError("no trials");
  std::filesystem::create_directories(out_dir);

  std::string trials_csv =
      "pipeline,data_fraction,seed,layout,successes,episodes,success_rate,"
      "mean_episode_length,failed,error\r\n";
  for (const TrialResult& t : rep.trials) {
    trials_csv += csv_escape(t.pipeline) + "," + fmt_real(t.data_fraction) + "," +
                  std::to_string(t.seed) + "," + csv_escape(t.layout) + "," +
                  std::to_string(t.successes) + "," + std::to_string(t.episodes) + "," +
                  fmt_real(t.success_rate) + "," + fmt_real(t.mean_episode_length) + "," +
                  (t.failed ? "true" : "false") + "," + csv_escape(t.error) + "\r\n";
  }
  write_file(out_dir + "/trials.csv", trials_csv);

  json models = json::array();
  for (const ModelSummary& m : rep.models) {
    json jm;
    jm["pipeline"] = m.pipeline;
    jm["fraction"] = m.fraction;
    jm["train_success"] = m.train_success;
    jm["mean_success"] = m.mean_success;
    jm["std_success"] = m.std_success;
    json rels;
    for (const auto& [layout, rel] : m.relative) rels[layout] = rel_to_json(rel);
    jm["relative"] = std::move(rels);
    models.push_back(std::move(jm));
  }
  json cohorts_top = json::array(), cohorts_bottom = json::array();
  for (const ModelKey& k : rep.top_cohort)
    cohorts_top.push_back({{"pipeline", k.pipeline}, {"fraction", k.fraction}});
  for (const ModelKey& k : rep.bottom_cohort)
    cohorts_bottom.push_back({{"pipeline", k.pipeline}, {"fraction", k.fraction}});
  json consistency = json::array();
  for (const ConsistencyRow& row : rep.consistency)
    consistency.push_back({{"pipeline", row.pipeline},
                           {"fraction", row.fraction},
                           {"envs_above_one", row.envs_above_one},
                           {"complete", row.complete}});
  json groups = json::array();
  for (const GroupStat& g : rep.groups)
    groups.push_back({{"kind", aug_kind_name(g.kind)},
                      {"mean_relative", g.mean_relative},
                      {"model_count", g.model_count},
                      {"undefined_count", g.undefined_count},
                      {"reference", g.reference}});
  json summary;
  summary["models"] = std::move(models);
  summary["top_cohort"] = std::move(cohorts_top);
  summary["bottom_cohort"] = std::move(cohorts_bottom);
  summary["consistency"] = std::move(consistency);
  summary["groups"] = std::move(groups);
  summary["baseline_failures"] = rep.baseline_failures;
  summary["jobs_executed"] = rep.jobs_executed;
  summary["trial_count"] = rep.trials.size();
  write_file(out_dir + "/summary.json", summary.dump(2) + "\n");

  std::string consistency_csv = "pipeline,data_fraction,envs_above_one,complete\r\n";
  for (const ConsistencyRow& row : rep.consistency)
    consistency_csv += csv_escape(row.pipeline) + "," + fmt_real(row.fraction) + "," +
                       std::to_string(row.envs_above_one) + "," +
                       (row.complete ? "true" : "false") + "\r\n";
  write_file(out_dir + "/consistency.csv", consistency_csv);

  std::string groups_csv = "kind,mean_relative,model_count,undefined_count,reference\r\n";
  for (const GroupStat& g : rep.groups)
    groups_csv += std::string(aug_kind_name(g.kind)) + "," + fmt_real(g.mean_relative) + "," +
                  std::to_string(g.model_count) + "," + std::to_string(g.undefined_count) + "," +
                  fmt_real(g.reference) + "\r\n";
  write_file(out_dir + "/groups.csv", groups_csv);

  write_file(out_dir + "/plot_top_models.csv", plot_csv(rep, rep.top_cohort));
  write_file(out_dir + "/plot_bottom_models.csv", plot_csv(rep, rep.bottom_cohort));
}

std::vector<TrialResult> parse_trials_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      record.push_back(std::move(field));
      field.clear();
      records.push_back(std::move(record));
      record.clear();
      ++i;
    } else if (c == '\n') {
      record.push_back(std::move(field));
      field.clear();
      records.push_back(std::move(record));
      record.clear();
    } else {
      field += c;
    }
  }
  if (!field.empty() || !record.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }

  if (records.empty()) throw ValidationError("trials.csv: empty file");
  const std::vector<std::string> header = {
      "pipeline", "data_fraction", "seed",  "layout", "successes",
      "episodes", "success_rate",  "mean_episode_length", "failed", "error"};
  if (records[0] != header) throw ValidationError("trials.csv: unexpected header");

  std::vector<TrialResult> trials;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() == 1 && rec[0].empty()) continue;
    if (rec.size() != header.size())
      throw ValidationError("trials.csv: record " + std::to_string(r) + " has " +
                            std::to_string(rec.size()) + " fields");
    TrialResult t;
    t.pipeline = rec[0];
    t.data_fraction = std::stod(rec[1]);
    t.seed = std::stoi(rec[2]);
    t.layout = rec[3];
    t.successes = std::stoi(rec[4]);
    t.episodes = std::stoi(rec[5]);
    t.success_rate = std::stod(rec[6]);
    t.mean_episode_length = std::stod(rec[7]);
    t.failed = rec[8] == "true";
    t.error = rec[9];
    trials.push_back(std::move(t));
  }
  return trials;
}

}  // namespace augbc
