#include "augbc/augment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>
#include <stdexcept>

#include "augbc/format.hpp"

namespace augbc {
namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

/// Maps sigma to X when sigma == 3e-X for an integer X, else nullopt.
std::optional<int> sigma_exponent(double sigma) {
  for (int x = 1; x <= 12; ++x) {
    double ref = 3.0 * std::pow(10.0, -x);
    if (std::abs(sigma - ref) <= ref * 1e-9) return x;
  }
  return std::nullopt;
}

AugmentationSpec default_spec(AugKind kind, double gauss_sigma, ScaMode sca_mode) {
  switch (kind) {
    case AugKind::gauss:
      return {GaussParams{0.0, gauss_sigma}};
    case AugKind::uni:
      return {UniParams{}};
    case AugKind::sca:
      return {ScaParams{sca_mode, kDefaultScaAlpha, kDefaultScaBeta}};
    case AugKind::sm:
      return {SmParams{}};
    case AugKind::drc:
      return {DrcParams{}};
    case AugKind::drs:
      return {DrsParams{}};
  }
  fail("unknown augmentation kind");
}

AugmentationSpec parse_token(const std::string& token, ScaMode sca_mode) {
  for (AugKind kind : {AugKind::uni, AugKind::sca, AugKind::sm, AugKind::drc, AugKind::drs}) {
    if (token == aug_kind_name(kind)) return default_spec(kind, kDefaultGaussSigma, sca_mode);
  }
  if (token == "gauss") return {GaussParams{}};
  if (token.rfind("gauss_e", 0) == 0) {
    const std::string digits = token.substr(7);
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
      fail("pipeline id: bad sigma exponent in token '" + token + "'");
    int x = std::stoi(digits);
    if (x < 1 || x > 12) fail("pipeline id: sigma exponent out of range in token '" + token + "'");
    return {GaussParams{0.0, 3.0 * std::pow(10.0, -x)}};
  }
  if (token.rfind("gauss_s", 0) == 0) {
    std::size_t pos = 0;
    double sigma = 0.0;
    const std::string num = token.substr(7);
    try {
      sigma = std::stod(num, &pos);
    } catch (const std::exception&) {
      fail("pipeline id: bad sigma in token '" + token + "'");
    }
    if (pos != num.size()) fail("pipeline id: bad sigma in token '" + token + "'");
    return {GaussParams{0.0, sigma}};
  }
  fail("pipeline id: unknown token '" + token + "'");
}

void check_continuous(const StateVector& s, const char* op) {
  if (s.continuous.empty()) fail(std::string(op) + ": state has no continuous features");
}

}  // namespace

const char* aug_kind_name(AugKind k) {
  switch (k) {
    case AugKind::gauss:
      return "gauss";
    case AugKind::uni:
      return "uni";
    case AugKind::sca:
      return "sca";
    case AugKind::sm:
      return "sm";
    case AugKind::drc:
      return "drc";
    case AugKind::drs:
      return "drs";
  }
  return "?";
}

void AugmentationSpec::validate() const {
  switch (kind()) {
    case AugKind::gauss: {
      const auto& p = std::get<GaussParams>(params);
      if (!std::isfinite(p.mu)) fail("gauss: mu must be finite");
      if (!(p.sigma > 0.0) || !std::isfinite(p.sigma)) fail("gauss: sigma must be positive");
      break;
    }
    case AugKind::uni: {
      const auto& p = std::get<UniParams>(params);
      if (!(p.lambda > 0.0) || !std::isfinite(p.lambda)) fail("uni: lambda must be positive");
      break;
    }
    case AugKind::sca: {
      const auto& p = std::get<ScaParams>(params);
      if (p.mode == ScaMode::literal) {
        if (!(p.alpha > 0.0) || !(p.alpha <= p.beta)) fail("sca: requires 0 < alpha <= beta");
      } else {
        if (!(p.beta > 0.0) || !(p.beta < 1.0)) fail("sca: centered mode requires 0 < beta < 1");
      }
      if (!std::isfinite(p.beta)) fail("sca: beta must be finite");
      break;
    }
    case AugKind::sm: {
      const auto& p = std::get<SmParams>(params);
      if (!(p.beta_shape > 0.0) || !std::isfinite(p.beta_shape)) fail("sm: beta shape must be positive");
      break;
    }
    case AugKind::drc: {
      if (std::get<DrcParams>(params).n < 1) fail("drc: n must be >= 1");
      break;
    }
    case AugKind::drs: {
      if (std::get<DrsParams>(params).n < 1) fail("drs: n must be >= 1");
      break;
    }
  }
}

std::string AugmentationSpec::token() const {
  if (kind() != AugKind::gauss) return aug_kind_name(kind());
  const auto& p = std::get<GaussParams>(params);
  if (auto x = sigma_exponent(p.sigma)) return "gauss_e" + std::to_string(*x);
  return "gauss_s" + format_float(p.sigma);
}

Pipeline::Pipeline(std::vector<AugmentationSpec> specs) : specs_(std::move(specs)) {
  if (specs_.empty() || specs_.size() > 3) fail("pipeline must contain 1 to 3 transforms");
  std::stable_sort(specs_.begin(), specs_.end(), [](const AugmentationSpec& a, const AugmentationSpec& b) {
    return static_cast<int>(a.kind()) < static_cast<int>(b.kind());
  });
  for (std::size_t i = 1; i < specs_.size(); ++i) {
    if (specs_[i - 1].kind() == specs_[i].kind()) fail("pipeline repeats a transform kind");
  }
  if (contains(AugKind::gauss) && contains(AugKind::uni))
    fail("pipeline combines gauss and uni noise");
  for (const auto& s : specs_) s.validate();
  for (const auto& s : specs_) {
    if (!id_.empty()) id_ += '+';
    id_ += s.token();
  }
}

Pipeline Pipeline::parse(const std::string& id, ScaMode sca_mode) {
  if (id.empty()) fail("pipeline id is empty");
  std::vector<AugmentationSpec> specs;
  std::size_t start = 0;
  while (start <= id.size()) {
    std::size_t plus = id.find('+', start);
    if (plus == std::string::npos) plus = id.size();
    if (plus == start) fail("pipeline id: empty token in '" + id + "'");
    specs.push_back(parse_token(id.substr(start, plus - start), sca_mode));
    start = plus + 1;
  }
  return Pipeline(std::move(specs));
}

bool Pipeline::contains(AugKind k) const {
  return std::any_of(specs_.begin(), specs_.end(),
                     [k](const AugmentationSpec& s) { return s.kind() == k; });
}

StateVector apply_gauss(const StateVector& s, double mu, double sigma, RngStream& rng) {
  check_continuous(s, "gauss");
  StateVector out = s;
  for (float& v : out.continuous) v = static_cast<float>(v + rng.normal(mu, sigma));
  return out;
}

StateVector apply_uni(const StateVector& s, double lambda, RngStream& rng) {
  check_continuous(s, "uni");
  StateVector out = s;
  for (float& v : out.continuous) v = static_cast<float>(v + rng.uniform(-lambda, lambda));
  return out;
}

StateVector apply_sca(const StateVector& s, ScaMode mode, double alpha, double beta, RngStream& rng) {
  check_continuous(s, "sca");
  StateVector out = s;
  for (float& v : out.continuous) {
    double m = mode == ScaMode::literal ? rng.uniform(alpha, beta) : 1.0 + rng.uniform(-beta, beta);
    v = static_cast<float>(v * m);
  }
  return out;
}

StateVector mix_states(const StateVector& s, const StateVector& s_next, double eps) {
  if (s.continuous.size() != s_next.continuous.size() ||
      s.categorical.size() != s_next.categorical.size())
    fail("sm: states have mismatched feature blocks");
  StateVector out = s;
  for (std::size_t i = 0; i < out.continuous.size(); ++i)
    out.continuous[i] = static_cast<float>(eps * s.continuous[i] + (1.0 - eps) * s_next.continuous[i]);
  return out;
}

StateVector apply_sm(const StateVector& s, const StateVector& s_next, double beta_shape, RngStream& rng) {
  check_continuous(s, "sm");
  return mix_states(s, s_next, rng.beta(beta_shape, beta_shape));
}

StateVector apply_drc(const StateVector& s, int n, RngStream& rng) {
  check_continuous(s, "drc");
  if (n < 1 || static_cast<std::size_t>(n) > s.continuous.size())
    fail("drc: n exceeds continuous dimension");
  StateVector out = s;
  for (std::size_t i : rng.sample_indices(out.continuous.size(), static_cast<std::size_t>(n)))
    out.continuous[i] = 0.0f;
  return out;
}

StateVector apply_drs(const StateVector& s, int n, RngStream& rng) {
  if (s.categorical.empty()) fail("drs: state has no categorical features");
  if (n < 1 || static_cast<std::size_t>(n) > s.categorical.size())
    fail("drs: n exceeds categorical dimension");
  StateVector out = s;
  for (std::size_t i : rng.sample_indices(out.categorical.size(), static_cast<std::size_t>(n)))
    out.categorical[i] = 0;
  return out;
}

StateVector apply_spec(const AugmentationSpec& spec, const StateVector& s, const StateVector* s_next,
                       RngStream& rng) {
  switch (spec.kind()) {
    case AugKind::gauss: {
      const auto& p = std::get<GaussParams>(spec.params);
      return apply_gauss(s, p.mu, p.sigma, rng);
    }
    case AugKind::uni:
      return apply_uni(s, std::get<UniParams>(spec.params).lambda, rng);
    case AugKind::sca: {
      const auto& p = std::get<ScaParams>(spec.params);
      return apply_sca(s, p.mode, p.alpha, p.beta, rng);
    }
    case AugKind::sm:
      if (s_next == nullptr) return s;
      return apply_sm(s, *s_next, std::get<SmParams>(spec.params).beta_shape, rng);
    case AugKind::drc:
      return apply_drc(s, std::get<DrcParams>(spec.params).n, rng);
    case AugKind::drs:
      return apply_drs(s, std::get<DrsParams>(spec.params).n, rng);
  }
  fail("unknown augmentation kind");
}

Transition apply_pipeline(const Pipeline& p, const Transition& t, const Transition* t_next,
                          RngStream& rng) {
  Transition out;
  out.action = t.action;
  const StateVector* raw_next = t_next ? &t_next->state : nullptr;
  StateVector cur = t.state;
  for (std::size_t i = 0; i < p.specs().size(); ++i) {
    RngStream sub = rng.child(i);
    cur = apply_spec(p.specs()[i], cur, raw_next, sub);
  }
  out.state = std::move(cur);
  return out;
}

std::vector<Pipeline> enumerate_pipelines(int max_size, const std::vector<double>& gauss_sigmas,
                                          ScaMode sca_mode) {
  if (max_size < 1 || max_size > 3) fail("enumerate_pipelines: max_size must be in [1, 3]");
  if (gauss_sigmas.empty()) fail("enumerate_pipelines: need at least one gauss sigma");

  std::vector<Pipeline> out;
  for (unsigned mask = 1; mask < (1u << kAllAugKinds.size()); ++mask) {
    int size = std::popcount(mask);
    if (size > max_size) continue;
    bool has_gauss = mask & (1u << static_cast<int>(AugKind::gauss));
    bool has_uni = mask & (1u << static_cast<int>(AugKind::uni));
    if (has_gauss && has_uni) continue;

    const std::vector<double> one{kDefaultGaussSigma};
    for (double sigma : has_gauss ? gauss_sigmas : one) {
      std::vector<AugmentationSpec> specs;
      for (AugKind kind : kAllAugKinds) {
        if (mask & (1u << static_cast<int>(kind))) specs.push_back(default_spec(kind, sigma, sca_mode));
      }
      out.emplace_back(std::move(specs));
      if (!has_gauss) break;
    }
  }

  std::sort(out.begin(), out.end(),
            [](const Pipeline& a, const Pipeline& b) { return a.id() < b.id(); });
  std::set<std::string> ids;
  for (const auto& p : out) {
    if (!ids.insert(p.id()).second) fail("enumerate_pipelines: duplicate id " + p.id());
  }
  return out;
}

DemoDataset build_augmented_dataset(const DemoDataset& base, const Pipeline& p, std::size_t clones,
                                    std::uint64_t seed) {
  base.validate();
  DemoDataset out;
  out.schema = base.schema;
  out.trajectories = base.trajectories;
  out.trajectories.reserve(base.trajectories.size() * (1 + clones));

  RngStream root(seed);
  for (std::size_t c = 0; c < clones; ++c) {
    RngStream clone_stream = root.child(c);
    for (std::size_t i = 0; i < base.trajectories.size(); ++i) {
      const Trajectory& src = base.trajectories[i];
      RngStream traj_stream = clone_stream.child(i);
      Trajectory copy;
      copy.episode_id = src.episode_id + "~c" + std::to_string(c + 1);
      copy.outcome = src.outcome;
      copy.transitions.reserve(src.transitions.size());
      for (std::size_t k = 0; k < src.transitions.size(); ++k) {
        const Transition* next = k + 1 < src.transitions.size() ? &src.transitions[k + 1] : nullptr;
        RngStream step_stream = traj_stream.child(k);
        copy.transitions.push_back(apply_pipeline(p, src.transitions[k], next, step_stream));
      }
      out.trajectories.push_back(std::move(copy));
    }
  }

  out.provenance = base.provenance + " | augment pipeline=" + p.id() +
                   " clones=" + std::to_string(clones) + " seed=" + std::to_string(seed);
  out.validate();
  return out;
}

}  // namespace augbc
