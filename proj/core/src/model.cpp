// SPDX-License-Identifier: Apache-2.0
#include "rway/model.hpp"

#include <cmath>
#include <set>
#include <string>

#include "rway/error.hpp"
#include "rway/ops.hpp"
#include "rway/rng.hpp"

namespace rway {

std::string_view to_string(AttentionKind kind) noexcept {
  switch (kind) {
    case AttentionKind::standard: return "standard";
    case AttentionKind::rewired_dot: return "rewired_dot";
    case AttentionKind::rewired_bilinear: return "rewired_bilinear";
  }
  return "standard";
}

AttentionKind parse_attention_kind(std::string_view text) {
  if (text == "standard") return AttentionKind::standard;
  if (text == "rewired_dot" || text == "rewired-dot") return AttentionKind::rewired_dot;
  if (text == "rewired_bilinear" || text == "rewired-bilinear") {
    return AttentionKind::rewired_bilinear;
  }
  throw ConfigError("unknown attention kind '" + std::string(text) + "'");
}

namespace {

std::string_view to_string(RunwaySource source) {
  return source == RunwaySource::hidden ? "hidden" : "last_head_values";
}

RunwaySource parse_runway_source(std::string_view text) {
  if (text == "last_head_values") return RunwaySource::last_head_values;
  if (text == "hidden") return RunwaySource::hidden;
  throw ConfigError("unknown runway source '" + std::string(text) + "'");
}

}  // namespace

ModelConfig ModelConfig::from_scale(std::size_t d, AttentionKind kind, std::size_t vocab_size,
                                    std::size_t max_seq_len) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.n_layers = d;
  cfg.n_heads = d;
  cfg.d_model = 64 * d;
  cfg.vocab_size = vocab_size;
  cfg.max_seq_len = max_seq_len;
  cfg.attention_kind = kind;
  return cfg;
}

std::size_t ModelConfig::mlp_hidden() const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(d_model)));
}

bool ModelConfig::follows_scale_rule() const {
  return n_layers == d && n_heads == d && d_model == 64 * d;
}

void ModelConfig::validate() const {
  if (d < 1) throw ConfigError("model scale d must be at least 1");
  if (n_layers < 1) throw ConfigError("n_layers must be at least 1");
  attention().validate();
  if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) throw ConfigError("mlp_ratio must be positive");
  if (vocab_size < 1) throw ConfigError("vocab_size must be at least 1");
  if (max_seq_len < 1) throw ConfigError("max_seq_len must be at least 1");
  if (!(init_std >= 0.0) || !(bilinear_init_std >= 0.0)) {
    throw ConfigError("init standard deviations must be non-negative");
  }
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
  if (attention_kind == AttentionKind::rewired_bilinear && runway_source == RunwaySource::hidden) {
    throw ConfigError("hidden-state runway source supports rewired_dot only");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = nlohmann::json{{"d", cfg.d},
                     {"n_layers", cfg.n_layers},
                     {"n_heads", cfg.n_heads},
                     {"d_model", cfg.d_model},
                     {"mlp_ratio", cfg.mlp_ratio},
                     {"vocab_size", cfg.vocab_size},
                     {"max_seq_len", cfg.max_seq_len},
                     {"attention_kind", std::string(to_string(cfg.attention_kind))},
                     {"tie_embeddings", cfg.tie_embeddings},
                     {"rope_theta", cfg.rope_theta},
                     {"init_std", cfg.init_std},
                     {"bilinear_init_std", cfg.bilinear_init_std},
                     {"ln_eps", cfg.ln_eps},
                     {"runway_source", std::string(to_string(cfg.runway_source))},
                     {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::set<std::string> known{
      "d",        "n_layers",       "n_heads", "d_model",           "mlp_ratio",
      "vocab_size", "max_seq_len",  "attention_kind", "tie_embeddings", "rope_theta",
      "init_std", "bilinear_init_std", "ln_eps", "runway_source", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown model config field '" + key + "'");
  }
  try {
    const auto d = j.value("d", std::size_t{1});
    ModelConfig out = ModelConfig::from_scale(d);
    out.n_layers = j.value("n_layers", out.n_layers);
    out.n_heads = j.value("n_heads", out.n_heads);
    out.d_model = j.value("d_model", out.d_model);
    out.mlp_ratio = j.value("mlp_ratio", out.mlp_ratio);
    out.vocab_size = j.value("vocab_size", out.vocab_size);
    out.max_seq_len = j.value("max_seq_len", out.max_seq_len);
    if (j.contains("attention_kind")) {
      out.attention_kind = parse_attention_kind(j.at("attention_kind").get<std::string>());
    }
    out.tie_embeddings = j.value("tie_embeddings", out.tie_embeddings);
    out.rope_theta = j.value("rope_theta", out.rope_theta);
    out.init_std = j.value("init_std", out.init_std);
    out.bilinear_init_std = j.value("bilinear_init_std", out.bilinear_init_std);
    out.ln_eps = j.value("ln_eps", out.ln_eps);
    if (j.contains("runway_source")) {
      out.runway_source = parse_runway_source(j.at("runway_source").get<std::string>());
    }
    out.seed = j.value("seed", out.seed);
    cfg = out;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

std::size_t count_params(const ModelConfig& cfg) {
  const std::size_t dm = cfg.d_model, v = cfg.vocab_size, hidden = cfg.mlp_hidden();
  std::size_t per_layer = 2 * dm                  // ln1
                          + 4 * (dm * dm + dm)     // q, k, v, o
                          + 2 * dm                 // ln2
                          + dm * hidden + hidden   // fc
                          + hidden * dm + dm;      // proj
  if (cfg.attention_kind == AttentionKind::rewired_bilinear) {
    per_layer += cfg.head_dim() * cfg.head_dim();
  }
  std::size_t total = v * dm + cfg.n_layers * per_layer + 2 * dm;
  if (!cfg.tie_embeddings) total += v * dm;
  return total;
}

namespace {

Tensor leaf(Tensor t) {
  t.requires_grad_();
  return t;
}

std::string layer_prefix(std::size_t i) { return "layers." + std::to_string(i) + "."; }

Tensor bilinear_init(const ModelConfig& cfg, std::size_t layer) {
  const std::size_t hd = cfg.head_dim();
  Rng rng = Rng(cfg.seed).split(layer_prefix(layer) + "rewire.bilinear");
  Tensor noise = Tensor::randn({hd, hd}, rng, cfg.bilinear_init_std);
  std::vector<double> data(noise.data().begin(), noise.data().end());
  for (std::size_t i = 0; i < hd; ++i) data[i * hd + i] += 1.0;
  return leaf(Tensor({hd, hd}, std::move(data)));
}

}  // namespace

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const Rng root(cfg_.seed);
  const std::size_t dm = cfg_.d_model, hidden = cfg_.mlp_hidden();
  auto normal = [&](const std::string& name, Shape shape) {
    Rng rng = root.split(name);
    return leaf(Tensor::randn(std::move(shape), rng, cfg_.init_std));
  };
  auto zeros = [](Shape shape) { return leaf(Tensor::zeros(std::move(shape))); };
  auto ones = [](Shape shape) { return leaf(Tensor::ones(std::move(shape))); };

  tok_emb_ = normal("tok_emb", {cfg_.vocab_size, dm});
  layers_.reserve(cfg_.n_layers);
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = layer_prefix(i);
    LayerParams l;
    l.ln1_g = ones({dm});
    l.ln1_b = zeros({dm});
    l.attn.w_q = normal(p + "attn.w_q", {dm, dm});
    l.attn.b_q = zeros({dm});
    l.attn.w_k = normal(p + "attn.w_k", {dm, dm});
    l.attn.b_k = zeros({dm});
    l.attn.w_v = normal(p + "attn.w_v", {dm, dm});
    l.attn.b_v = zeros({dm});
    l.attn.w_o = normal(p + "attn.w_o", {dm, dm});
    l.attn.b_o = zeros({dm});
    if (cfg_.attention_kind == AttentionKind::rewired_bilinear) l.bilinear = bilinear_init(cfg_, i);
    l.ln2_g = ones({dm});
    l.ln2_b = zeros({dm});
    l.w_fc = normal(p + "mlp.w_fc", {dm, hidden});
    l.b_fc = zeros({hidden});
    l.w_proj = normal(p + "mlp.w_proj", {hidden, dm});
    l.b_proj = zeros({dm});
    layers_.push_back(std::move(l));
  }
  lnf_g_ = ones({dm});
  lnf_b_ = zeros({dm});
  if (!cfg_.tie_embeddings) lm_head_ = normal("lm_head", {cfg_.vocab_size, dm});
}

Model::Model(const Model& other) : cfg_(other.cfg_) {
  tok_emb_ = other.tok_emb_.clone();
  layers_ = other.layers_;
  lnf_g_ = other.lnf_g_.clone();
  lnf_b_ = other.lnf_b_.clone();
  if (other.lm_head_.defined()) lm_head_ = other.lm_head_.clone();
  for (auto& l : layers_) {
    for (Tensor* t : {&l.ln1_g, &l.ln1_b, &l.attn.w_q, &l.attn.b_q, &l.attn.w_k, &l.attn.b_k,
                      &l.attn.w_v, &l.attn.b_v, &l.attn.w_o, &l.attn.b_o, &l.bilinear, &l.ln2_g,
                      &l.ln2_b, &l.w_fc, &l.b_fc, &l.w_proj, &l.b_proj}) {
      if (t->defined()) *t = t->clone();
    }
  }
}

Model& Model::operator=(const Model& other) {
  if (this != &other) *this = Model(other);
  return *this;
}

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"tok_emb", tok_emb_});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = layer_prefix(i);
    const auto& l = layers_[i];
    out.push_back({p + "ln1.g", l.ln1_g});
    out.push_back({p + "ln1.b", l.ln1_b});
    out.push_back({p + "attn.w_q", l.attn.w_q});
    out.push_back({p + "attn.b_q", l.attn.b_q});
    out.push_back({p + "attn.w_k", l.attn.w_k});
    out.push_back({p + "attn.b_k", l.attn.b_k});
    out.push_back({p + "attn.w_v", l.attn.w_v});
    out.push_back({p + "attn.b_v", l.attn.b_v});
    out.push_back({p + "attn.w_o", l.attn.w_o});
    out.push_back({p + "attn.b_o", l.attn.b_o});
    if (l.bilinear.defined()) out.push_back({p + "rewire.bilinear", l.bilinear});
    out.push_back({p + "ln2.g", l.ln2_g});
    out.push_back({p + "ln2.b", l.ln2_b});
    out.push_back({p + "mlp.w_fc", l.w_fc});
    out.push_back({p + "mlp.b_fc", l.b_fc});
    out.push_back({p + "mlp.w_proj", l.w_proj});
    out.push_back({p + "mlp.b_proj", l.b_proj});
  }
  out.push_back({"ln_f.g", lnf_g_});
  out.push_back({"ln_f.b", lnf_b_});
  if (lm_head_.defined()) out.push_back({"lm_head", lm_head_});
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

void Model::set_trainable(bool flag) {
  for (auto& p : parameters()) p.tensor.requires_grad_(flag);
}

Tensor Model::embed(std::span<const std::size_t> tokens) const {
  if (tokens.empty()) throw InputError("empty token sequence");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= cfg_.vocab_size) {
      throw InputError("token id " + std::to_string(tokens[i]) + " at position " +
                       std::to_string(i) + " is outside the vocabulary of " +
                       std::to_string(cfg_.vocab_size));
    }
  }
  return gather_rows(tok_emb_, tokens);
}

Tensor Model::layer_forward(std::size_t layer, const Tensor& h, const ForwardOptions& options,
                            LayerRecord* record) const {
  return update_map(layer, attention_residual(layer, h, options, record));
}

Tensor Model::attention_residual(std::size_t layer, const Tensor& h,
                                 const ForwardOptions& options, LayerRecord* record) const {
  const auto& l = layers_.at(layer);
  const AttentionOptions attn_options{record != nullptr, options.detach_attention};
  const Tensor a = layer_norm(h, l.ln1_g, l.ln1_b, cfg_.ln_eps);
  Tensor attended;
  if (cfg_.rewired()) {
    RewiringMode mode;
    mode.source = cfg_.runway_source;
    if (cfg_.attention_kind == AttentionKind::rewired_bilinear) {
      mode.kind = RewiringKind::bilinear;
      mode.bilinear = l.bilinear;
    }
    auto res = rewired_attention(a, l.attn, cfg_.attention(), mode, attn_options);
    attended = std::move(res.out);
    if (record) *record = LayerRecord{std::move(*res.attention), std::move(res.rewiring)};
  } else {
    auto res = causal_attention(a, l.attn, cfg_.attention(), attn_options);
    attended = std::move(res.out);
    if (record) *record = LayerRecord{std::move(*res.record), std::nullopt};
  }
  return add(h, attended);
}

Tensor Model::update_map(std::size_t layer, const Tensor& u) const {
  const auto& l = layers_.at(layer);
  const Tensor m = layer_norm(u, l.ln2_g, l.ln2_b, cfg_.ln_eps);
  const Tensor hidden = gelu(add_row(matmul(m, l.w_fc), l.b_fc));
  return add(u, add_row(matmul(hidden, l.w_proj), l.b_proj));
}

Tensor Model::message_map(std::size_t layer, const Tensor& h) const {
  if (cfg_.n_heads != 1) throw ConfigError("message_map needs a single-head model");
  const auto& l = layers_.at(layer);
  const Tensor a = layer_norm(h, l.ln1_g, l.ln1_b, cfg_.ln_eps);
  const Tensor v = add_row(matmul(a, l.attn.w_v), l.attn.b_v);
  return add_row(matmul(v, l.attn.w_o), l.attn.b_o);
}

Tensor Model::run_layers(const Tensor& h, std::size_t first, std::size_t last,
                         const ForwardOptions& options,
                         std::vector<LayerRecord>* records) const {
  if (first > last || last > layers_.size()) {
    throw DimensionError("layer range [" + std::to_string(first) + ", " + std::to_string(last) +
                         ") outside " + std::to_string(layers_.size()) + " layers");
  }
  Tensor x = h;
  for (std::size_t i = first; i < last; ++i) {
    if (records) {
      LayerRecord rec;
      x = layer_forward(i, x, options, &rec);
      records->push_back(std::move(rec));
    } else {
      x = layer_forward(i, x, options, nullptr);
    }
  }
  return x;
}

Tensor Model::lm_head(const Tensor& h) const {
  const Tensor x = layer_norm(h, lnf_g_, lnf_b_, cfg_.ln_eps);
  return matmul(x, transpose(lm_head_.defined() ? lm_head_ : tok_emb_));
}

ForwardResult Model::forward(std::span<const std::size_t> tokens,
                             const ForwardOptions& options) const {
  ForwardResult result;
  const Tensor h = embed(tokens);
  const Tensor x =
      run_layers(h, 0, layers_.size(), options, options.record ? &result.records : nullptr);
  result.logits = lm_head(x);
  return result;
}

Model Model::with_attention_kind(AttentionKind kind) const {
  Model out(*this);
  out.cfg_.attention_kind = kind;
  out.cfg_.validate();
  for (std::size_t i = 0; i < out.layers_.size(); ++i) {
    auto& l = out.layers_[i];
    if (kind == AttentionKind::rewired_bilinear) {
      if (!l.bilinear.defined()) l.bilinear = bilinear_init(out.cfg_, i);
    } else {
      l.bilinear = Tensor();
    }
  }
  return out;
}

}  // namespace rway
