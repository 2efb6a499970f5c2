#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fdvae/cli.hpp"

namespace {

using fdvae::CommandOptions;

void add_shared(CLI::App* cmd, CommandOptions& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--seed", o.seed, "random seed (overrides the config)");
  cmd->add_option("--out-dir", o.out_dir, "directory for artifacts")->capture_default_str();
  cmd->add_option("--corpus", o.corpus, "directory with train.txt, dev.txt, test.txt (default: synthetic)");
  cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint");
}

void add_training(CLI::App* cmd, CommandOptions& o) {
  cmd->add_option("--epochs", o.epochs);
  cmd->add_option("--lr", o.learning_rate, "Adam learning rate");
  cmd->add_option("--alpha", o.alpha, "fraternal penalty weight, 0 disables the twin passes");
  cmd->add_option("--keep-prob", o.keep_prob, "word keep probability b for the fraternal masks");
  cmd->add_option("--free-bits", o.free_bits, "free-bits threshold lambda, 0 disables");
  cmd->add_option("--pretrain-epochs", o.pretrain_epochs, "autoencoder epochs before the decoder reset");
  cmd->add_option("--batch-size", o.batch_size);
  cmd->add_option("--warmup-steps", o.warmup_steps, "KL annealing length in steps, 0 = ten epochs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fdvae: sentence VAEs with fraternal dropout"};
  app.require_subcommand(1);
  CommandOptions o;
  int (*command)(const CommandOptions&, std::ostream&) = nullptr;

  auto* train = app.add_subcommand("train", "train a model and write checkpoints, log and manifest");
  add_shared(train, o);
  add_training(train, o);
  train->add_flag("--log-wall-time", o.log_wall_time, "record elapsed seconds in the log (breaks byte equality)");
  train->callback([&] { command = fdvae::cmd_train; });

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint: NLL, PPL, AU, MI, BLEU");
  add_shared(eval, o);
  eval->add_option("--split", o.split, "train, dev or test")->capture_default_str();
  eval->add_option("--vocab", o.vocab, "vocabulary file that must match the checkpoint");
  eval->callback([&] { command = fdvae::cmd_eval; });

  auto* sweep = app.add_subcommand("sweep", "train and evaluate one model per alpha");
  add_shared(sweep, o);
  add_training(sweep, o);
  sweep->add_option("--alphas", o.alphas, "comma-separated alpha values")->delimiter(',')->capture_default_str();
  sweep->callback([&] { command = fdvae::cmd_sweep; });

  auto* interp = app.add_subcommand("interpolate", "decode along a line between two prior samples");
  add_shared(interp, o);
  interp->add_option("--steps", o.steps)->capture_default_str();
  interp->callback([&] { command = fdvae::cmd_interpolate; });

  auto* sample = app.add_subcommand("sample", "decode sentences from prior samples");
  add_shared(sample, o);
  sample->add_option("--count", o.count)->capture_default_str();
  sample->callback([&] { command = fdvae::cmd_sample; });

  auto* selfcheck = app.add_subcommand("selfcheck", "gradient, KL and BLEU self-tests");
  add_shared(selfcheck, o);
  selfcheck->add_option("--corrupt-op", o.corrupt_op, "scale one op's backward rule (negative control)");
  selfcheck->callback([&] { command = fdvae::cmd_selfcheck; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return fdvae::kExitConfig;
  }
  return fdvae::run_guarded(command, o, std::cout, std::cerr);
}
