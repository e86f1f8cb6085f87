#include <CLI11.hpp>
#include <iostream>

#include "mgpvae/cli.hpp"
#include "mgpvae/errors.hpp"

using namespace mgpvae;

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal GP-prior VAE: synthetic data, staged training, imputation"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI configuration file");
    sub->add_option("--seed", seed, "Override run.seed");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset");
  add_common(gen);
  std::string out;
  gen->add_option("--out", out, "Output dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Run staged training");
  add_common(tr);
  cli::TrainArgs targs;
  std::optional<std::string> resume, log;
  tr->add_option("--data-dir", targs.data_dir, "Dataset directory")->required();
  tr->add_option("--out", targs.out_checkpoint, "Checkpoint path")->required();
  tr->add_option("--resume", resume, "Continue from this checkpoint");
  tr->add_option("--max-epochs", targs.max_epochs, "Stop after this many epochs (0 = all)");
  tr->add_option("--log", log, "Per-epoch loss log (TSV)");

  auto* im = app.add_subcommand("impute", "Impute absent cells from a checkpoint");
  cli::ImputeArgs iargs;
  std::optional<std::string> targets;
  std::string hide;
  im->add_option("--checkpoint", iargs.checkpoint, "Trained checkpoint")->required();
  im->add_option("--data-dir", iargs.data_dir, "Dataset directory")->required();
  im->add_option("--targets", targets, "Cells p:m,p:m,... (default: every absent cell)");
  im->add_option("--hide", hide, "Present cells p:m,... to treat as absent");
  im->add_option("--out", iargs.out_dir, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Aggregate metric rows into a report");
  cli::EvalArgs eargs;
  std::optional<std::string> structured;
  ev->add_option("files", eargs.metric_files, "metrics.tsv files");
  ev->add_option("--structured", structured, "Also write the report as TSV rows");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check on a tiny model");
  cli::GradCheckArgs gargs;
  gc->add_option("--seed", gargs.seed, "Random seed");
  gc->add_option("--tolerance", gargs.tolerance, "Maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help and version requests keep CLI11's own success code.
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kValidation;
  }

  cli::Streams io{std::cout, std::cerr};
  return cli::guarded(std::cerr, [&]() -> int {
    if (gen->parsed())
      return cli::gen_data({cli::resolve_config(config_path, seed), out}, io);
    if (tr->parsed()) {
      if (config_path || seed) targs.config = cli::resolve_config(config_path, seed);
      targs.resume = resume;
      targs.log_path = log;
      return cli::train(targs, io);
    }
    if (im->parsed()) {
      if (targets) iargs.targets = cli::parse_cells(*targets);
      if (!hide.empty()) iargs.hide = cli::parse_cells(hide);
      return cli::impute(iargs, io);
    }
    if (ev->parsed()) {
      eargs.structured_out = structured;
      return cli::eval(eargs, io);
    }
    return cli::gradcheck(gargs, io);
  });
}
