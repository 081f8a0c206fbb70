#include "augbc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "augbc/format.hpp"
#include "augbc/rng.hpp"

namespace augbc {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw ValidationError(msg); }

[[noreturn]] void fail_line(std::size_t line, const std::string& msg) {
  fail("line " + std::to_string(line) + ": " + msg);
}

void check_unique(const std::vector<std::string>& names, const char* block) {
  std::unordered_set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) fail(std::string(block) + " feature name duplicated: " + n);
  }
}

std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

void append_string_array(std::string& out, const std::vector<std::string>& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += '"';
    out += json_escape(v[i]);
    out += '"';
  }
  out += ']';
}

template <class T, class Fmt>
void append_array(std::string& out, const std::vector<T>& v, Fmt fmt) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt(v[i]);
  }
  out += ']';
}

}  // namespace

void StateSchema::validate() const {
  if (continuous_names.empty()) fail("schema: continuous_dim must be >= 1");
  if (categorical_names.empty()) fail("schema: categorical_dim must be >= 1");
  check_unique(continuous_names, "continuous");
  check_unique(categorical_names, "categorical");
  if (categorical_cardinalities.size() != categorical_names.size())
    fail("schema: cardinalities size must match categorical feature count");
  for (int c : categorical_cardinalities)
    if (c < 2) fail("schema: categorical cardinality must be >= 2");
  if (normalization.size() != continuous_names.size())
    fail("schema: normalization size must match continuous feature count");
  for (double s : normalization)
    if (!std::isfinite(s) || s <= 0.0) fail("schema: normalization scales must be finite and > 0");
}

std::string StateSchema::canonical_json() const {
  std::string out = "{\"format_version\":1,\"continuous_names\":";
  append_string_array(out, continuous_names);
  out += ",\"categorical_names\":";
  append_string_array(out, categorical_names);
  out += ",\"categorical_cardinalities\":";
  append_array(out, categorical_cardinalities, [](int v) { return std::to_string(v); });
  out += ",\"normalization\":";
  append_array(out, normalization, [](double v) { return format_float(v); });
  out += '}';
  return out;
}

std::string StateSchema::hash() const {
  const std::string s = canonical_json();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::size_t DemoDataset::sample_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.size();
  return n;
}

void DemoDataset::validate() const {
  schema.validate();
  if (trajectories.empty()) fail("trajectory must be non-empty: dataset has no episodes");
  std::unordered_set<std::string> ids;
  for (const auto& traj : trajectories) {
    if (traj.transitions.empty())
      fail("trajectory must be non-empty: episode '" + traj.episode_id + "' has no transitions");
    if (!ids.insert(traj.episode_id).second)
      fail("episode id duplicated across trajectories: " + traj.episode_id);
    for (const auto& tr : traj.transitions) {
      if (static_cast<int>(tr.state.continuous.size()) != schema.continuous_dim())
        fail("continuous block length mismatch in episode '" + traj.episode_id + "'");
      if (static_cast<int>(tr.state.categorical.size()) != schema.categorical_dim())
        fail("categorical block length mismatch in episode '" + traj.episode_id + "'");
      for (float v : tr.state.continuous)
        if (!std::isfinite(v)) fail("non-finite continuous value in episode '" + traj.episode_id + "'");
      for (int k = 0; k < schema.categorical_dim(); ++k) {
        const std::int32_t v = tr.state.categorical[static_cast<std::size_t>(k)];
        if (v < 0 || v >= schema.categorical_cardinalities[static_cast<std::size_t>(k)])
          fail("categorical value out of range in episode '" + traj.episode_id + "'");
      }
      if (tr.action < 0 || tr.action >= kActionCount)
        fail("action index out of range in episode '" + traj.episode_id + "'");
    }
  }
}

std::string serialize_dataset(const DemoDataset& d) {
  d.validate();
  std::string out = "{\"format_version\":1,\"continuous_names\":";
  append_string_array(out, d.schema.continuous_names);
  out += ",\"categorical_names\":";
  append_string_array(out, d.schema.categorical_names);
  out += ",\"categorical_cardinalities\":";
  append_array(out, d.schema.categorical_cardinalities, [](int v) { return std::to_string(v); });
  out += ",\"normalization\":";
  append_array(out, d.schema.normalization, [](double v) { return format_float(v); });
  out += ",\"provenance\":\"";
  out += json_escape(d.provenance);
  out += "\"}\n";

  for (const auto& traj : d.trajectories) {
    for (std::size_t step = 0; step < traj.transitions.size(); ++step) {
      const Transition& tr = traj.transitions[step];
      out += "{\"episode_id\":\"";
      out += json_escape(traj.episode_id);
      out += "\",\"step\":";
      out += std::to_string(step);
      out += ",\"continuous\":";
      append_array(out, tr.state.continuous, [](float v) { return format_float(v); });
      out += ",\"categorical\":";
      append_array(out, tr.state.categorical, [](std::int32_t v) { return std::to_string(v); });
      out += ",\"action\":";
      out += std::to_string(tr.action);
      out += ",\"success\":";
      out += traj.outcome ? "true" : "false";
      out += "}\n";
    }
  }
  return out;
}

DemoDataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;

  DemoDataset d;
  if (!std::getline(in, line)) fail("empty file: missing schema header line");
  ++line_no;
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    fail_line(line_no, std::string("malformed header: ") + e.what());
  }
  try {
    if (!header.contains("format_version") || header["format_version"].get<int>() != 1)
      fail_line(line_no, "unsupported or missing format_version (expected 1)");
    d.schema.continuous_names = header.at("continuous_names").get<std::vector<std::string>>();
    d.schema.categorical_names = header.at("categorical_names").get<std::vector<std::string>>();
    d.schema.categorical_cardinalities = header.at("categorical_cardinalities").get<std::vector<int>>();
    d.schema.normalization = header.at("normalization").get<std::vector<double>>();
    d.provenance = header.value("provenance", std::string());
  } catch (const json::exception& e) {
    fail_line(line_no, std::string("malformed header: ") + e.what());
  }
  try {
    d.schema.validate();
  } catch (const ValidationError& e) {
    fail_line(line_no, e.what());
  }

  Trajectory current;
  bool have_current = false;
  std::size_t expected_step = 0;

  auto flush = [&]() {
    if (have_current) {
      d.trajectories.push_back(std::move(current));
      current = Trajectory{};
      have_current = false;
    }
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      fail_line(line_no, std::string("malformed record: ") + e.what());
    }

    std::string ep;
    std::size_t step = 0;
    Transition tr;
    bool success = false;
    try {
      ep = rec.at("episode_id").get<std::string>();
      step = rec.at("step").get<std::size_t>();
      const auto cont = rec.at("continuous").get<std::vector<double>>();
      tr.state.continuous.assign(cont.begin(), cont.end());
      tr.state.categorical = rec.at("categorical").get<std::vector<std::int32_t>>();
      tr.action = rec.at("action").get<int>();
      success = rec.value("success", false);
    } catch (const json::exception& e) {
      fail_line(line_no, std::string("malformed record: ") + e.what());
    }

    if (static_cast<int>(tr.state.continuous.size()) != d.schema.continuous_dim())
      fail_line(line_no, "schema mismatch: continuous block has " +
                             std::to_string(tr.state.continuous.size()) + " values, header declares " +
                             std::to_string(d.schema.continuous_dim()));
    if (static_cast<int>(tr.state.categorical.size()) != d.schema.categorical_dim())
      fail_line(line_no, "schema mismatch: categorical block has " +
                             std::to_string(tr.state.categorical.size()) + " values, header declares " +
                             std::to_string(d.schema.categorical_dim()));
    for (int k = 0; k < d.schema.categorical_dim(); ++k) {
      const std::int32_t v = tr.state.categorical[static_cast<std::size_t>(k)];
      const int card = d.schema.categorical_cardinalities[static_cast<std::size_t>(k)];
      if (v < 0 || v >= card)
        fail_line(line_no, "categorical value out of range: feature " + std::to_string(k) + " has value " +
                               std::to_string(v) + ", cardinality " + std::to_string(card));
    }
    if (tr.action < 0 || tr.action >= kActionCount)
      fail_line(line_no, "action index out of range: " + std::to_string(tr.action));

    if (!have_current || ep != current.episode_id) {
      flush();
      current.episode_id = ep;
      current.outcome = success;
      have_current = true;
      expected_step = 0;
    }
    if (step != expected_step)
      fail_line(line_no, "step out of sequence: expected " + std::to_string(expected_step) + ", found " +
                             std::to_string(step));
    if (success != current.outcome) fail_line(line_no, "success flag changes within episode '" + ep + "'");
    current.transitions.push_back(std::move(tr));
    ++expected_step;
  }
  flush();

  if (d.trajectories.empty()) fail("trajectory must be non-empty: file has a header but no transitions");
  d.validate();
  return d;
}

DemoDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open dataset file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

void save_dataset(const DemoDataset& d, const std::string& path) {
  const std::string text = serialize_dataset(d);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot open file for writing: " + path);
  out << text;
  if (!out) fail("I/O failure writing dataset: " + path);
}

DemoDataset subsample_episodes(const DemoDataset& d, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    fail("subsample fraction must lie in (0, 1], got " + format_float(fraction));
  const std::size_t n = d.episode_count();
  const std::size_t keep =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));  // round half up
  if (keep == 0) fail("subsample fraction selects no episodes");
  if (keep == n) return d;

  RngStream rng(seed);
  auto chosen = rng.sample_indices(n, keep);
  std::sort(chosen.begin(), chosen.end());  // keep original episode order

  DemoDataset out;
  out.schema = d.schema;
  out.provenance = d.provenance + " | subsample fraction=" + format_float(fraction) +
                   " seed=" + std::to_string(seed);
  out.trajectories.reserve(keep);
  for (std::size_t i : chosen) out.trajectories.push_back(d.trajectories[i]);
  return out;
}

}  // namespace augbc
