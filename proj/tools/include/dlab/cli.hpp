#pragma once

// The `dlab` command line: pretrain, rl-train, decode, eval and analyze.
//
// Run directory layout:
//   config.echo           resolved configuration
//   checkpoints/          final.ckpt, plus latest.ckpt / latest.rlstate for rl-train
//   logs/*.csv            pretrain.csv, metrics.csv, passk_<mode>.csv, ...
//   traces/*.jsonl        decode traces and rollout logs
//   data/                 vocabulary and instance files

#include <iosfwd>
#include <string>
#include <vector>

namespace dlab::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitNumeric = 3,
};

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dlab::cli
