#pragma once

// Subcommands behind the mgpvae tool. Each returns a process exit code:
// 0 success, 1 validation failure, 2 numerical failure, 3 I/O failure.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mgpvae/config.hpp"
#include "mgpvae/gp.hpp"

namespace mgpvae::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kNumerical = 2, kIo = 3 };

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

/// Loads `path` if given, otherwise defaults; then applies a seed override.
config::Config resolve_config(const std::optional<std::string>& path,
                              std::optional<std::uint64_t> seed);

/// "p:m,p:m,..."; throws ValidationError naming the bad item.
std::vector<gp::Cell> parse_cells(const std::string& list);

struct GenDataArgs {
  config::Config config;
  std::string out_dir;
};
int gen_data(const GenDataArgs& args, Streams io);

struct TrainArgs {
  std::optional<config::Config> config;  // required unless resuming
  std::string data_dir;
  std::string out_checkpoint;
  std::optional<std::string> resume;
  std::size_t max_epochs = 0;  // 0 = run to completion
  std::optional<std::string> log_path;
};
int train(const TrainArgs& args, Streams io);

struct ImputeArgs {
  std::string checkpoint;
  std::string data_dir;
  std::optional<std::vector<gp::Cell>> targets;  // default: every absent cell
  std::vector<gp::Cell> hide;  // present cells treated as absent for this run
  std::string out_dir;
};
int impute(const ImputeArgs& args, Streams io);

struct EvalArgs {
  std::vector<std::string> metric_files;
  std::optional<std::string> structured_out;
};
int eval(const EvalArgs& args, Streams io);

struct GroupCheck {
  std::string group;
  std::size_t probes = 0;
  double rel_error = 0.0;
  bool ok = true;
  std::string failure;
};

/// Gradient check of the full loss on a tiny model (P=2, M=2, S=8, L=4),
/// summarized per parameter group.
std::vector<GroupCheck> tiny_gradcheck(std::uint64_t seed, double tolerance);

struct GradCheckArgs {
  std::uint64_t seed = 0;
  double tolerance = 1e-3;
};
int gradcheck(const GradCheckArgs& args, Streams io);

/// Runs `body`, mapping exceptions onto exit codes with a message on `err`.
int guarded(std::ostream& err, const std::function<int()>& body);

}  // namespace mgpvae::cli
