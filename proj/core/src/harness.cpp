// SPDX-License-Identifier: Apache-2.0
#include "rway/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "rway/checkpoint.hpp"
#include "rway/data.hpp"
#include "rway/error.hpp"
#include "rway/evaluate.hpp"
#include "rway/passkey.hpp"
#include "rway/rewiring_stats.hpp"
#include "rway/verify.hpp"

namespace rway {

namespace fs = std::filesystem;

namespace {

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void check_vocab(std::span<const std::size_t> tokens, const ModelConfig& cfg) {
  for (auto t : tokens) {
    if (t >= cfg.vocab_size) {
      throw InputError("data token " + std::to_string(t) + " exceeds vocab_size " +
                       std::to_string(cfg.vocab_size));
    }
  }
}

TrainState open_checkpoint(const fs::path& path, const std::optional<AttentionKind>& kind) {
  TrainState state = load_checkpoint(path);
  if (kind && *kind != state.model.config().attention_kind) {
    state.model = state.model.with_attention_kind(*kind);
  }
  return state;
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "model" && key != "train") throw ConfigError("unknown run config section '" + key + "'");
  }
  RunConfig rc;
  if (j.contains("model")) rc.model = j.at("model").get<ModelConfig>();
  if (j.contains("train")) rc.train = j.at("train").get<TrainConfig>();
  rc.model.validate();
  rc.train.validate();
  return rc;
}

RunConfig load_run_config(const fs::path& path) { return parse_run_config(read_json(path)); }

void write_attention_records(const Model& model, std::span<const std::size_t> tokens,
                             const fs::path& path) {
  NoGradGuard no_grad;
  const auto res = model.forward(tokens, {true, false});
  auto tensor_json = [](const Tensor& t) {
    return nlohmann::json{{"shape", t.shape()},
                          {"data", std::vector<double>(t.data().begin(), t.data().end())}};
  };
  auto layers = nlohmann::json::array();
  for (const auto& rec : res.records) {
    nlohmann::json layer{{"weights_A", tensor_json(rec.attention.weights_A)},
                         {"logits", tensor_json(rec.attention.logits)}};
    if (rec.rewiring) {
      layer["r"] = tensor_json(rec.rewiring->r);
      layer["beta"] = tensor_json(rec.rewiring->beta);
      layer["e_tilde"] = tensor_json(rec.rewiring->e_tilde);
      layer["e_hat"] = tensor_json(rec.rewiring->e_hat);
    }
    layers.push_back(std::move(layer));
  }
  write_json(path, {{"tokens", std::vector<std::size_t>(tokens.begin(), tokens.end())},
                    {"attention_kind", to_string(model.config().attention_kind)},
                    {"layers", layers}});
}

int cmd_train(const TrainOptions& opt, std::ostream& log) {
  RunConfig rc = opt.config ? load_run_config(*opt.config) : RunConfig{};
  if (opt.seed) {
    rc.model.seed = *opt.seed;
    rc.train.data_seed = *opt.seed;
  }
  if (opt.attention) rc.model.attention_kind = *opt.attention;
  if (opt.steps) rc.train.steps = *opt.steps;
  rc.model.validate();
  rc.train.validate();
  if (rc.train.seq_len > rc.model.max_seq_len) {
    throw ConfigError("train seq_len " + std::to_string(rc.train.seq_len) +
                      " exceeds model max_seq_len " + std::to_string(rc.model.max_seq_len));
  }

  const auto tokens = load_tokens(opt.data);
  check_vocab(tokens, rc.model);
  const DataSplit split = split_tokens(tokens, rc.train.val_fraction);

  std::optional<TrainState> state;
  if (opt.resume) {
    state.emplace(load_checkpoint(*opt.resume));
    if (opt.steps) state->config.steps = *opt.steps;
  } else {
    state.emplace(Model(rc.model), rc.train);
  }
  const TrainConfig& tc = state->config;
  fs::create_directories(opt.out);
  const fs::path ckpt = opt.out / "checkpoint.rway";

  auto loss_csv = open_out(opt.out / "loss.csv");
  loss_csv << "step,loss,lr,tokens\n";
  const std::size_t tokens_per_step = tc.batch_size * tc.seq_len;
  for (std::size_t s = 0; s < state->loss_history.size(); ++s) {
    loss_csv << s + 1 << ',' << num(state->loss_history[s]) << ',' << num(learning_rate(tc, s))
             << ',' << (s + 1) * tokens_per_step << '\n';
  }
  auto val_csv = open_out(opt.out / "val.csv");
  val_csv << "step,val_loss,val_ppl\n";
  auto evaluate_val = [&](const TrainState& st) {
    const auto rec = evaluate_loss(st.model, split.val, tc.seq_len, tc.eval_windows);
    val_csv << st.step << ',' << num(rec.loss) << ',' << num(rec.perplexity) << '\n';
    val_csv.flush();
    return rec;
  };

  log << "training " << to_string(state->model.config().attention_kind) << " model with "
      << state->model.parameter_count() << " parameters for " << tc.steps << " steps\n";
  train_until(*state, split.train, tc.steps, [&](const TrainState& st, const StepResult& res) {
    loss_csv << st.step << ',' << num(res.loss) << ',' << num(res.lr) << ','
             << st.step * tokens_per_step << '\n';
    if (opt.log_every && st.step % opt.log_every == 0) {
      log << "step " << st.step << " loss " << res.loss << " lr " << res.lr << '\n';
    }
    if (tc.eval_every && st.step % tc.eval_every == 0 && st.step < tc.steps) evaluate_val(st);
    if (tc.checkpoint_every && st.step % tc.checkpoint_every == 0) save_checkpoint(st, ckpt);
  });
  loss_csv.flush();

  const auto final_val = evaluate_val(*state);
  save_checkpoint(*state, ckpt);
  if (opt.record_attention) {
    const std::size_t n = std::min(tc.seq_len, split.val.size());
    write_attention_records(state->model, std::span(split.val).first(n),
                            opt.out / "attention_records.json");
  }
  write_json(opt.out / "summary.json",
             {{"steps", state->step},
              {"parameters", state->model.parameter_count()},
              {"attention_kind", to_string(state->model.config().attention_kind)},
              {"final_train_loss",
               state->loss_history.empty() ? nlohmann::json(nullptr)
                                           : nlohmann::json(state->loss_history.back())},
              {"final_val_loss", final_val.loss},
              {"final_val_ppl", final_val.perplexity}});
  log << "final val loss " << final_val.loss << " (ppl " << final_val.perplexity << ")\n";
  return 0;
}

int cmd_passkey(const PasskeyOptions& opt, std::ostream& log) {
  if (opt.seq_lens.empty() || opt.depths.empty() || opt.trials == 0) {
    throw ConfigError("passkey needs seq_lens, depths and at least one trial");
  }
  const auto filler = load_tokens(opt.filler);
  std::optional<TrainState> state;
  std::optional<TransformerLM> transformer;
  OracleStub oracle;
  std::optional<RandomDigitStub> random;
  const LanguageModel* lm = nullptr;
  if (opt.stub) {
    if (*opt.stub == "oracle") {
      lm = &oracle;
    } else if (*opt.stub == "random") {
      lm = &random.emplace(opt.seed);
    } else {
      throw ConfigError("unknown passkey stub '" + *opt.stub + "'");
    }
  } else {
    if (!opt.checkpoint) throw ConfigError("passkey needs a checkpoint or a stub");
    state.emplace(open_checkpoint(*opt.checkpoint, opt.attention));
    transformer.emplace(state->model);
    lm = &*transformer;
  }
  if (lm->vocab_size() < kByteVocab) throw ConfigError("passkey retrieval needs a byte vocabulary");

  const auto trials = run_passkey(*lm, filler, opt.seq_lens, opt.depths, opt.trials, opt.seed);
  auto csv = open_out(opt.out / "passkey.csv");
  csv << "seq_len,depth,trial,passkey,predicted,exact\n";
  for (const auto& t : trials) {
    csv << t.seq_len << ',' << num(t.depth) << ',' << t.trial << ',' << t.passkey << ','
        << csv_field(t.predicted) << ',' << (t.exact ? 1 : 0) << '\n';
  }
  auto summary = open_out(opt.out / "passkey_summary.csv");
  summary << "seq_len,depth,trials,accuracy\n";
  for (const auto& c : passkey_accuracy(trials)) {
    summary << c.seq_len << ',' << num(c.depth) << ',' << c.trials << ',' << num(c.accuracy)
            << '\n';
    log << "seq_len " << c.seq_len << " depth " << c.depth << " accuracy " << c.accuracy << '\n';
  }
  return 0;
}

int cmd_extrapolate(const ExtrapolateOptions& opt, std::ostream& log) {
  const TrainState state = open_checkpoint(opt.checkpoint, opt.attention);
  const auto tokens = load_tokens(opt.data);
  check_vocab(tokens, state.model.config());
  const DataSplit split = split_tokens(tokens, state.config.val_fraction);
  const std::size_t train_len = opt.train_len.value_or(state.config.seq_len);
  std::vector<std::size_t> lens = opt.eval_lens;
  if (lens.empty()) lens = {train_len, 2 * train_len};
  const std::size_t windows = opt.windows.value_or(state.config.eval_windows);

  const auto records = extrapolation_sweep(state.model, split.val, lens, windows);
  auto csv = open_out(opt.out / "extrapolate.csv");
  csv << "eval_len,loss,ppl\n";
  auto positions = open_out(opt.out / "extrapolate_positions.csv");
  positions << "eval_len,position,loss\n";
  for (const auto& r : records) {
    csv << r.seq_len << ',' << num(r.loss) << ',' << num(r.perplexity) << '\n';
    for (std::size_t p = 0; p < r.position_losses.size(); ++p) {
      positions << r.seq_len << ',' << p << ',' << num(r.position_losses[p]) << '\n';
    }
    log << "eval_len " << r.seq_len << (r.seq_len > train_len ? " (extrapolated)" : "")
        << " loss " << r.loss << " ppl " << r.perplexity << '\n';
  }
  if (opt.record_attention) {
    const std::size_t n = std::min(lens.back(), split.val.size());
    write_attention_records(state.model, std::span(split.val).first(n),
                            opt.out / "attention_records.json");
  }
  return 0;
}

int cmd_analyze_rewiring(const AnalyzeOptions& opt, std::ostream& log) {
  const TrainState state = open_checkpoint(opt.checkpoint, opt.attention);
  const auto tokens = load_tokens(opt.data);
  check_vocab(tokens, state.model.config());
  const DataSplit split = split_tokens(tokens, state.config.val_fraction);
  const std::size_t n = opt.seq_len.value_or(state.config.seq_len);
  const auto stats = analyze_rewiring(state.model, split.val, n, opt.n_batches);
  write_json(opt.out / "rewiring_stats.json", to_json(stats));
  auto csv = open_out(opt.out / "rewiring_positions.csv");
  csv << "position,source_mean,source_std,destination_mean,destination_std\n";
  auto cell = [](const std::optional<double>& x) { return x ? num(*x) : std::string(); };
  for (std::size_t p = 0; p < n; ++p) {
    csv << p << ',' << cell(stats.source_mean[p]) << ',' << cell(stats.source_std[p]) << ','
        << cell(stats.destination_mean[p]) << ',' << cell(stats.destination_std[p]) << '\n';
  }
  log << "analysed " << stats.windows << " windows of " << n << " tokens over " << stats.layers
      << " layers\n";
  return 0;
}

int cmd_verify(const VerifyOptions& opt, std::ostream& log) {
  VerifyConfig cfg;
  if (opt.config) cfg = read_json(*opt.config).get<VerifyConfig>();
  if (opt.seeds) cfg.seeds = *opt.seeds;
  if (opt.seed) cfg.base_seed = *opt.seed;
  const VerifyReport report = run_verify(cfg);
  write_json(opt.out / "verify_report.json", report.to_json());
  for (const auto& c : report.checks) {
    if (c.asserted && !c.passed) {
      log << "FAILED " << c.check << (c.variant.empty() ? "" : " [" + c.variant + "]")
          << " seed " << c.seed << '\n';
    }
  }
  log << report.checks.size() << " checks, " << report.failed() << " failed\n";
  return report.all_passed() ? 0 : 1;
}

}  // namespace rway
