#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pvgc/commands.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string precision;
  bool synthetic = false;
  std::string preset;
  std::optional<std::size_t> epochs;
  std::string checkpoint;
  std::string split;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key = value config file");
  cmd->add_option("--set", f.sets, "override, key=value (repeatable)")->take_all();
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--precision", f.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_flag("--synthetic", f.synthetic, "use generated stripe data");
  cmd->add_option("--preset", f.preset, "tiny or micro")->check(CLI::IsMember({"tiny", "micro"}));
}

pvgc::CommandOptions to_options(const CommonFlags& f) {
  pvgc::CommandOptions o;
  if (!f.config.empty()) o.config = f.config;
  if (!f.preset.empty()) o.preset = f.preset;
  if (!f.checkpoint.empty()) o.checkpoint = f.checkpoint;
  // Dedicated flags rank with --set and come after it, so they win.
  o.overrides = f.sets;
  if (f.seed) o.overrides.push_back("seed=" + std::to_string(*f.seed));
  if (!f.out.empty()) o.overrides.push_back("out_dir=" + f.out);
  if (!f.precision.empty()) o.overrides.push_back("precision=" + f.precision);
  if (f.synthetic) o.overrides.push_back("synthetic=true");
  if (f.epochs) o.overrides.push_back("epochs=" + std::to_string(*f.epochs));
  if (!f.split.empty()) o.overrides.push_back("eval_split=" + f.split);
  o.quiet = f.quiet;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pvgc: pyramid vision graph network with a capsule head"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* train = app.add_subcommand("train", "train a model and write resolved.cfg, history.tsv, best.ckpt, metrics.txt");
  add_common(train, flags);
  train->add_option("--epochs", flags.epochs, "number of epochs");
  train->add_flag("--quiet", flags.quiet, "suppress progress output");

  auto* eval = app.add_subcommand("eval", "report metrics of a checkpoint");
  add_common(eval, flags);
  eval->add_option("--checkpoint", flags.checkpoint, "checkpoint file")->required();
  eval->add_option("--split", flags.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

  auto* gradcheck = app.add_subcommand("gradcheck", "compare reverse-mode gradients with finite differences");
  add_common(gradcheck, flags);

  auto* inspect = app.add_subcommand("inspect", "print stage shapes, parameter and FLOP counts");
  add_common(inspect, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pvgc::kExitConfig;
  }

  const pvgc::CommandOptions options = to_options(flags);
  if (train->parsed()) return pvgc::cmd_train(options, std::cout, std::cerr);
  if (eval->parsed()) return pvgc::cmd_eval(options, std::cout, std::cerr);
  if (gradcheck->parsed()) return pvgc::cmd_gradcheck(options, std::cout, std::cerr);
  return pvgc::cmd_inspect(options, std::cout, std::cerr);
}
