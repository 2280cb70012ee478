// SPDX-License-Identifier: Apache-2.0
// Command line driver: train, passkey, extrapolate, analyze-rewiring, verify, corpus.
#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rway/data.hpp"
#include "rway/error.hpp"
#include "rway/harness.hpp"

namespace {

const std::map<std::string, rway::AttentionKind> kAttentionKinds{
    {"standard", rway::AttentionKind::standard},
    {"rewired-dot", rway::AttentionKind::rewired_dot},
    {"rewired-bilinear", rway::AttentionKind::rewired_bilinear}};

void add_attention(CLI::App* cmd, std::optional<rway::AttentionKind>& target) {
  cmd->add_option_function<std::string>(
         "--attention", [&target](const std::string& s) { target = kAttentionKinds.at(s); },
         "Attention variant")
      ->check(CLI::IsMember({"standard", "rewired-dot", "rewired-bilinear"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale transformer with runway-aware rewired attention"};
  app.require_subcommand(1);

  rway::TrainOptions train;
  std::string train_config;
  auto* t = app.add_subcommand("train", "Train a byte-level language model");
  t->add_option("--config", train_config, "Run config JSON {model, train}")->check(CLI::ExistingFile);
  t->add_option("--data", train.data, "UTF-8 text or .ids token stream")->required()->check(CLI::ExistingFile);
  t->add_option("--out", train.out, "Output directory");
  t->add_option("--seed", train.seed, "Seed for init and batch sampling");
  t->add_option("--steps", train.steps, "Override the number of steps");
  t->add_option("--resume", train.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  t->add_option("--log-every", train.log_every, "Progress line interval (0 = quiet)");
  t->add_flag("--record-attention", train.record_attention, "Dump attention of one val window");
  add_attention(t, train.attention);

  rway::PasskeyOptions passkey;
  auto* p = app.add_subcommand("passkey", "Passkey retrieval over lengths and depths");
  p->add_option("--checkpoint", passkey.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  p->add_option("--stub", passkey.stub, "Scoring stub instead of a model")
      ->check(CLI::IsMember({"oracle", "random"}));
  p->add_option("--seq-lens", passkey.seq_lens, "Sequence lengths")->delimiter(',');
  p->add_option("--depths", passkey.depths, "Needle depths in [0, 1]")->delimiter(',');
  p->add_option("--trials", passkey.trials, "Trials per cell");
  p->add_option("--filler", passkey.filler, "Filler text")->required()->check(CLI::ExistingFile);
  p->add_option("--out", passkey.out, "Output directory");
  p->add_option("--seed", passkey.seed, "Seed for passkeys and filler offsets");
  add_attention(p, passkey.attention);

  rway::ExtrapolateOptions extra;
  auto* e = app.add_subcommand("extrapolate", "Validation perplexity at several lengths");
  e->add_option("--checkpoint", extra.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--data", extra.data, "Corpus; its validation split is used")->required()->check(CLI::ExistingFile);
  e->add_option("--eval-lens", extra.eval_lens, "Evaluation lengths")->delimiter(',');
  e->add_option("--train-len", extra.train_len, "Training length (default from checkpoint)");
  e->add_option("--windows", extra.windows, "Evaluation windows per length");
  e->add_option("--out", extra.out, "Output directory");
  e->add_flag("--record-attention", extra.record_attention, "Dump attention of the longest window");
  add_attention(e, extra.attention);

  rway::AnalyzeOptions analyze;
  auto* a = app.add_subcommand("analyze-rewiring", "Down-scaling statistics of a rewired model");
  a->add_option("--checkpoint", analyze.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  a->add_option("--data", analyze.data, "Corpus; its validation split is used")->required()->check(CLI::ExistingFile);
  a->add_option("--n-batches", analyze.n_batches, "Number of windows");
  a->add_option("--seq-len", analyze.seq_len, "Window length (default from checkpoint)");
  a->add_option("--out", analyze.out, "Output directory");
  add_attention(a, analyze.attention);

  rway::VerifyOptions verify;
  auto* v = app.add_subcommand("verify", "Run the theory verification suite");
  v->add_option("--config", verify.config, "Verify config JSON")->check(CLI::ExistingFile);
  v->add_option("--seeds", verify.seeds, "Number of seeded repetitions");
  v->add_option("--seed", verify.seed, "Base seed");
  v->add_option("--out", verify.out, "Output directory");

  std::size_t corpus_bytes = 2'000'000;
  std::uint64_t corpus_seed = 0;
  std::string corpus_path;
  auto* c = app.add_subcommand("corpus", "Write a synthetic English-like byte corpus");
  c->add_option("--bytes", corpus_bytes, "Corpus size");
  c->add_option("--seed", corpus_seed, "Generator seed");
  c->add_option("--out", corpus_path, "Output file")->required();

  CLI11_PARSE(app, argc, argv);
  if (!train_config.empty()) train.config = train_config;

  try {
    if (t->parsed()) return rway::cmd_train(train, std::cout);
    if (p->parsed()) return rway::cmd_passkey(passkey, std::cout);
    if (e->parsed()) return rway::cmd_extrapolate(extra, std::cout);
    if (a->parsed()) return rway::cmd_analyze_rewiring(analyze, std::cout);
    if (v->parsed()) return rway::cmd_verify(verify, std::cout);
    if (c->parsed()) {
      std::ofstream out(corpus_path, std::ios::binary);
      if (!out) throw rway::InputError("cannot write " + corpus_path);
      out << rway::synthetic_corpus(corpus_bytes, corpus_seed);
      return 0;
    }
  } catch (const rway::TrainingError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  }
  return 0;
}
