// SPDX-License-Identifier: Apache-2.0
#include "rway/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "rway/attention.hpp"
#include "rway/error.hpp"
#include "rway/ops.hpp"
#include "rway/rewiring.hpp"
#include "rway/rng.hpp"
#include "rway/theory.hpp"

namespace rway {

void to_json(nlohmann::json& j, const CheckRecord& rec) {
  j = nlohmann::json{{"check", rec.check},         {"variant", rec.variant},
                     {"seed", rec.seed},           {"inputs_hash", rec.inputs_hash},
                     {"measured", rec.measured},   {"bound", rec.bound},
                     {"passed", rec.passed},       {"asserted", rec.asserted},
                     {"note", rec.note}};
}

void to_json(nlohmann::json& j, const VerifyConfig& c) {
  j = nlohmann::json{{"seeds", c.seeds},
                     {"base_seed", c.base_seed},
                     {"n_tokens", c.n_tokens},
                     {"max_depth", c.max_depth},
                     {"softmax_rows", c.softmax_rows},
                     {"positivity_forwards", c.positivity_forwards},
                     {"rewiring_instances", c.rewiring_instances},
                     {"runway_max_n", c.runway_max_n},
                     {"rewired_sensitivity", c.rewired_sensitivity},
                     {"full_gradient", c.full_gradient}};
}

void from_json(const nlohmann::json& j, VerifyConfig& c) {
  if (!j.is_object()) throw ConfigError("verify config must be a JSON object");
  const nlohmann::json defaults = VerifyConfig{};
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown verify config field '" + key + "'");
  }
  try {
    VerifyConfig out;
    out.seeds = j.value("seeds", out.seeds);
    out.base_seed = j.value("base_seed", out.base_seed);
    out.n_tokens = j.value("n_tokens", out.n_tokens);
    out.max_depth = j.value("max_depth", out.max_depth);
    out.softmax_rows = j.value("softmax_rows", out.softmax_rows);
    out.positivity_forwards = j.value("positivity_forwards", out.positivity_forwards);
    out.rewiring_instances = j.value("rewiring_instances", out.rewiring_instances);
    out.runway_max_n = j.value("runway_max_n", out.runway_max_n);
    out.rewired_sensitivity = j.value("rewired_sensitivity", out.rewired_sensitivity);
    out.full_gradient = j.value("full_gradient", out.full_gradient);
    c = out;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("verify config: ") + e.what());
  }
}

std::size_t VerifyReport::failed() const {
  return static_cast<std::size_t>(std::count_if(
      checks.begin(), checks.end(), [](const CheckRecord& c) { return c.asserted && !c.passed; }));
}

nlohmann::json VerifyReport::to_json() const {
  std::size_t asserted = 0;
  for (const auto& c : checks) asserted += c.asserted ? 1 : 0;
  return nlohmann::json{{"schema_version", 1},
                        {"config", config},
                        {"summary",
                         {{"total", checks.size()},
                          {"asserted", asserted},
                          {"failed", failed()},
                          {"passed", all_passed()}}},
                        {"checks", checks}};
}

ModelConfig theory_toy_config(AttentionKind kind, std::uint64_t seed) {
  ModelConfig cfg = ModelConfig::from_scale(1, kind, 64, 16);
  cfg.n_layers = 3;
  cfg.seed = seed;
  return cfg;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return mix64(base ^ mix64(index + 0x9e3779b97f4a7c15ULL));
}

namespace {

class Hasher {
 public:
  explicit Hasher(std::string_view label) { bytes(label.data(), label.size()); }
  Hasher& bytes(const void* data, std::size_t size) {
    h_ = fnv1a64(data, size, h_);
    return *this;
  }
  Hasher& value(std::uint64_t v) { return bytes(&v, sizeof(v)); }
  Hasher& tensor(const Tensor& t) {
    return bytes(t.data().data(), t.numel() * sizeof(double));
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

AttentionWeights random_weights(Rng& rng, std::size_t d_model, double stddev) {
  auto mat = [&] { return Tensor::randn({d_model, d_model}, rng, stddev); };
  auto vec = [&] { return Tensor::randn({d_model}, rng, stddev); };
  return {mat(), vec(), mat(), vec(), mat(), vec(), mat(), vec()};
}

std::vector<std::size_t> random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<std::size_t> t(n);
  for (auto& x : t) x = rng.uniform_int(vocab);
  return t;
}

/// Minimum over the causal support of every head's mixing weights.
double min_supported(const Tensor& w) {
  const std::size_t heads = w.dim(0), n = w.dim(1);
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) m = std::min(m, w(h, i, j));
    }
  }
  return m;
}

struct BlindspotCase {
  AttentionWeights weights;
  Tensor keys, query, common, residual;
};

BlindspotCase blindspot_case(std::uint64_t seed, double residual_scale) {
  const ModelConfig cfg = theory_toy_config(AttentionKind::standard, seed);
  const Model model(cfg);
  Rng rng = Rng(seed).split("blindspot");
  const std::size_t n = 6, dm = cfg.d_model;
  BlindspotCase c;
  c.weights = model.layer(0).attn;
  c.keys = Tensor::randn({n, dm}, rng);
  c.query = Tensor::randn({dm}, rng);
  const Tensor delta = Tensor::randn({n, dm}, rng);
  const auto split = split_perturbation(delta);
  c.common = split.common;
  c.residual = affine(split.residual, residual_scale);
  return c;
}

}  // namespace

CheckRecord check_softmax_shift(std::uint64_t seed, std::size_t rows) {
  Rng rng = Rng(seed).split("softmax_shift");
  Hasher hash("softmax_shift");
  double worst = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t n = 1 + rng.uniform_int(16);
    const Tensor x = Tensor::randn({1, n}, rng, 3.0);
    const double shift = 100.0 * (rng.uniform() - 0.5);
    hash.tensor(x).bytes(&shift, sizeof(shift));
    const Tensor a = softmax_rows(x);
    const Tensor b = softmax_rows(affine(x, 1.0, shift));
    worst = std::max(worst, max_abs_diff(a, b));
  }
  CheckRecord rec{"softmax_shift_invariance", "", seed, hash.hex(),
                  {{"max_abs_diff", worst}, {"rows", rows}}, 1e-12, worst <= 1e-12, true, ""};
  return rec;
}

CheckRecord check_attention_positivity(std::uint64_t seed, AttentionKind kind,
                                       std::size_t forwards) {
  Rng rng = Rng(seed).split("positivity");
  Hasher hash("attention_positivity");
  double worst = std::numeric_limits<double>::infinity();
  std::size_t supported = 0;
  std::optional<Model> model;
  NoGradGuard no_grad;
  for (std::size_t f = 0; f < forwards; ++f) {
    if (f % 100 == 0) {
      ModelConfig cfg = ModelConfig::from_scale(1, kind, 64, 16);
      cfg.seed = rng.next_u64();
      hash.value(cfg.seed);
      model.emplace(cfg);
    }
    const auto tokens = random_tokens(rng, 1 + rng.uniform_int(16), 64);
    hash.bytes(tokens.data(), tokens.size() * sizeof(std::size_t));
    const auto res = model->forward(tokens, {true, false});
    for (const auto& layer : res.records) {
      worst = std::min(worst, min_supported(layer.attention.weights_A));
      if (layer.rewiring) worst = std::min(worst, min_supported(layer.rewiring->e_hat));
      const std::size_t n = tokens.size();
      supported += layer.attention.weights_A.dim(0) * n * (n + 1) / 2;
    }
  }
  return CheckRecord{"attention_positivity",
                     std::string(to_string(kind)),
                     seed,
                     hash.hex(),
                     {{"min_supported_weight", worst},
                      {"forwards", forwards},
                      {"supported_entries", supported}},
                     0.0,
                     worst > 0.0,
                     true,
                     "witness only: no uniform lower bound is claimed"};
}

std::vector<CheckRecord> check_blindspot(std::uint64_t seed) {
  std::vector<CheckRecord> out;
  {
    BlindspotCase c = blindspot_case(seed, 0.0);
    const auto res = blindspot_check(c.keys, c.common, c.residual, c.query, c.weights);
    const std::string h = Hasher("blindspot_exact").tensor(c.keys).tensor(c.common).hex();
    out.push_back({"blindspot", "common_mode_only", seed, h,
                   {{"weight_gap", res.weight_gap}}, 1e-10, res.weight_gap <= 1e-10, true, ""});
  }
  {
    BlindspotCase c = blindspot_case(seed, 1e-2);
    const auto res = blindspot_check(c.keys, c.common, c.residual, c.query, c.weights);
    const std::string h =
        Hasher("blindspot_bound").tensor(c.keys).tensor(c.common).tensor(c.residual).hex();
    out.push_back({"blindspot",
                   "residual_bound",
                   seed,
                   h,
                   {{"weight_gap", res.weight_gap},
                    {"projection_factor", res.projection_factor},
                    {"local_softmax_norm", res.local_softmax_norm}},
                   {{"bound", res.bound}, {"softmax_lipschitz", res.softmax_lipschitz}},
                   res.satisfied,
                   true,
                   ""});
  }
  {
    BlindspotCase base = blindspot_case(seed, 1.0);
    const Tensor zero = Tensor::zeros({base.common.numel()});
    nlohmann::json slopes = nlohmann::json::array();
    bool ok = true;
    double limit = 0.0;
    for (double t : {1e-3, 1e-4}) {
      const auto res =
          blindspot_check(base.keys, zero, affine(base.residual, t), base.query, base.weights);
      const double slope = res.weight_gap / t;
      limit = res.bound / t;
      slopes.push_back({{"t", t}, {"slope", slope}});
      ok = ok && slope <= limit * (1.0 + 1e-9);
    }
    const std::string h = Hasher("blindspot_slope").tensor(base.keys).tensor(base.residual).hex();
    out.push_back({"blindspot", "slope", seed, h, slopes, limit, ok, true, ""});
  }
  return out;
}

std::vector<CheckRecord> check_cascade(std::uint64_t seed) {
  std::vector<CheckRecord> out;
  BlindspotCase c = blindspot_case(seed, 1e-2);
  const Tensor zero_c = Tensor::zeros({c.common.numel()});
  const Tensor zero_r = Tensor::zeros(c.residual.shape());
  const std::string h = Hasher("cascade").tensor(c.keys).tensor(c.common).tensor(c.residual).hex();

  const double zero_common = cascade_check(c.keys, zero_c, c.residual, c.query, c.weights);
  out.push_back({"cascade", "no_common_mode", seed, h, {{"residual", zero_common}}, 1e-9,
                 zero_common <= 1e-9, true, ""});
  const double only_common = cascade_check(c.keys, c.common, zero_r, c.query, c.weights);
  out.push_back({"cascade", "common_mode_only", seed, h, {{"residual", only_common}}, 1e-10,
                 only_common <= 1e-10, true, ""});
  const double both = cascade_check(c.keys, c.common, c.residual, c.query, c.weights);
  out.push_back({"cascade", "standard", seed, h, {{"residual", both}}, 1e-9, both <= 1e-9, true,
                 ""});
  const double rewired = cascade_check_rewired(c.keys, c.common, c.residual, c.weights);
  out.push_back({"cascade", "rewired_dot", seed, h, {{"residual", rewired}}, nullptr, true, false,
                 "reported only: runway coefficients move with the common mode"});
  return out;
}

std::vector<CheckRecord> check_sensitivity(std::uint64_t seed, AttentionKind kind,
                                           std::size_t n_tokens, std::size_t max_depth,
                                           bool full_gradient) {
  const Model model(theory_toy_config(kind, seed));
  Rng rng = Rng(seed).split("sensitivity");
  const auto tokens = random_tokens(rng, n_tokens, model.config().vocab_size);
  const std::string h = Hasher("sensitivity")
                            .value(seed)
                            .bytes(tokens.data(), tokens.size() * sizeof(std::size_t))
                            .hex();
  std::vector<CheckRecord> out;
  for (std::size_t depth = 1; depth <= max_depth; ++depth) {
    const auto reports = sensitivity_bound_sweep(model, tokens, 0, depth, {full_gradient});
    nlohmann::json pairs = nlohmann::json::array();
    bool ok = true;
    double worst_ratio = 0.0;
    for (const auto& r : reports) {
      nlohmann::json p{{"s", r.source},
                       {"d", r.destination},
                       {"measured_norm", r.measured_norm},
                       {"bound_matrix_entry", r.bound_matrix_entry},
                       {"bound", r.bound},
                       {"satisfied", r.satisfied}};
      if (r.full_gradient_norm) p["full_gradient_norm"] = *r.full_gradient_norm;
      pairs.push_back(std::move(p));
      ok = ok && r.satisfied;
      if (r.bound > 0.0) worst_ratio = std::max(worst_ratio, r.measured_norm / r.bound);
    }
    out.push_back({"sensitivity_bound",
                   std::string(to_string(kind)) + "/depth=" + std::to_string(depth),
                   seed,
                   h,
                   {{"pairs", pairs}, {"worst_ratio", worst_ratio}},
                   {{"lipschitz", reports.front().lipschitz}, {"tolerance", 1e-9}},
                   ok,
                   true,
                   "attention detached"});
  }

  std::vector<Tensor> mixing;
  {
    NoGradGuard no_grad;
    const auto res = model.forward(tokens, {true, false});
    for (const auto& layer : res.records) {
      mixing.push_back(layer.mixing().reshape({n_tokens, n_tokens}));
    }
  }
  double worst = 0.0, min_self = std::numeric_limits<double>::infinity();
  for (std::size_t depth = 1; depth <= std::min(max_depth, mixing.size()); ++depth) {
    for (std::size_t d = 0; d < n_tokens; ++d) {
      for (std::size_t s = 0; s < n_tokens; ++s) {
        const auto split = direct_runway_split(mixing, s, d, depth);
        worst = std::max(worst, split.recombination_error());
        if (s == d) min_self = std::min(min_self, split.self_term);
      }
    }
  }
  out.push_back({"runway_split",
                 std::string(to_string(kind)),
                 seed,
                 h,
                 {{"max_recombination_error", worst}, {"min_diagonal_self_term", min_self}},
                 {{"recombination", 1e-10}, {"diagonal_self_term_min", 1.0}},
                 worst <= 1e-10 && min_self >= 1.0,
                 true,
                 ""});
  return out;
}

CheckRecord check_runway_enumeration(std::size_t max_n) {
  bool ok = true;
  std::size_t pairs = 0, mismatches = 0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    for (std::size_t d = 0; d < n; ++d) {
      for (std::size_t s = 0; s <= d; ++s) {
        const auto set = enumerate_runway(s, d, n);
        std::set<std::vector<std::size_t>> unique(set.paths.begin(), set.paths.end());
        bool good = set.paths.size() == runway_count(s, d) && unique.size() == set.paths.size();
        for (const auto& p : set.paths) {
          good = good && p.size() >= 3 && p.front() == s && p.back() == d &&
                 std::adjacent_find(p.begin(), p.end(), std::greater_equal<>()) == p.end();
        }
        ++pairs;
        if (!good) ++mismatches;
        ok = ok && good;
      }
    }
  }
  return {"runway_enumeration", "", 0, Hasher("runway").value(max_n).hex(),
          {{"pairs", pairs}, {"mismatches", mismatches}}, {{"max_n", max_n}}, ok, true, ""};
}

CheckRecord check_rewiring_invariants(std::uint64_t seed, std::size_t instances) {
  Rng rng = Rng(seed).split("rewiring_invariants");
  Hasher hash("rewiring_invariants");
  double worst_row = 0.0;
  std::size_t keep_violations = 0, support_violations = 0, monotone_violations = 0,
              short_mismatches = 0;
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t n = 1 + rng.uniform_int(10), heads = 1 + rng.uniform_int(3);
    std::vector<Tensor> parts;
    for (std::size_t h = 0; h < heads; ++h) {
      parts.push_back(softmax_rows(Tensor::randn({n, n}, rng, 2.0), Mask::causal(n)));
    }
    const Tensor e = detail::stack(parts);
    const Tensor r = sigmoid(Tensor::randn({n, n}, rng, 2.0));
    hash.tensor(e).tensor(r);
    const auto rec = rewire(e, r);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double v = rec.e_hat(h, i, j);
          s += v;
          if (j > i && v != 0.0) ++support_violations;
        }
        worst_row = std::max(worst_row, std::abs(s - 1.0));
        for (std::size_t a = 0; a <= i; ++a) {
          for (std::size_t b = 0; b <= i; ++b) {
            const double ba = rec.beta(i, a), bb = rec.beta(i, b);
            if (ba - bb > 1e-12) {
              const double ra = rec.e_hat(h, i, a) / e(h, i, a);
              const double rb = rec.e_hat(h, i, b) / e(h, i, b);
              if (!(ra > rb)) ++monotone_violations;
            }
          }
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (!is_eligible_edge(i, j) && rec.beta(i, j) != 1.0) ++keep_violations;
      }
    }

    const std::size_t short_n = 1 + rng.uniform_int(2);
    const std::size_t short_heads = 1 + rng.uniform_int(2);
    const AttentionConfig cfg{short_heads, 4 * short_heads, 10000.0};
    const AttentionWeights w = random_weights(rng, cfg.d_model, 0.5);
    const Tensor x = Tensor::randn({short_n, cfg.d_model}, rng);
    hash.tensor(x);
    const Tensor plain = causal_attention(x, w, cfg).out;
    const Tensor rewired = rewired_attention(x, w, cfg, RewiringMode{}).out;
    if (!bit_equal(plain, rewired)) ++short_mismatches;
  }
  const bool ok = worst_row <= 1e-10 && keep_violations == 0 && support_violations == 0 &&
                  monotone_violations == 0 && short_mismatches == 0;
  return {"rewiring_invariants",
          "",
          seed,
          hash.hex(),
          {{"instances", instances},
           {"max_row_sum_error", worst_row},
           {"keep_mask_violations", keep_violations},
           {"support_violations", support_violations},
           {"monotonicity_violations", monotone_violations},
           {"short_sequence_mismatches", short_mismatches}},
          {{"row_sum", 1e-10}},
          ok,
          true,
          ""};
}

VerifyReport run_verify(const VerifyConfig& cfg) {
  if (cfg.seeds == 0) throw ConfigError("verify needs at least one seed");
  if (cfg.n_tokens < 1) throw ConfigError("verify needs at least one token");
  if (cfg.max_depth > 3) throw ConfigError("toy model has 3 layers; max_depth must be <= 3");
  VerifyReport report{cfg, {}};
  auto append = [&](std::vector<CheckRecord> recs) {
    for (auto& r : recs) report.checks.push_back(std::move(r));
  };
  report.checks.push_back(check_runway_enumeration(cfg.runway_max_n));
  for (std::size_t k = 0; k < cfg.seeds; ++k) {
    const std::uint64_t seed = derive_seed(cfg.base_seed, k);
    report.checks.push_back(check_softmax_shift(seed, cfg.softmax_rows));
    report.checks.push_back(
        check_attention_positivity(seed, AttentionKind::standard, cfg.positivity_forwards));
    report.checks.push_back(
        check_attention_positivity(seed, AttentionKind::rewired_dot, cfg.positivity_forwards));
    append(check_blindspot(seed));
    append(check_cascade(seed));
    append(check_sensitivity(seed, AttentionKind::standard, cfg.n_tokens, cfg.max_depth,
                             cfg.full_gradient));
    if (cfg.rewired_sensitivity) {
      append(check_sensitivity(seed, AttentionKind::rewired_dot, cfg.n_tokens, cfg.max_depth,
                               cfg.full_gradient));
    }
    report.checks.push_back(check_rewiring_invariants(seed, cfg.rewiring_instances));
  }
  return report;
}

}  // namespace rway
