#pragma once

// The command-line verbs as library calls. Each returns a process exit code
// (0 ok); validation problems throw ValidationError and numerical failures
// throw NumericalError, which run_cli maps to exit codes 1 and 2.
//
// Output layout under --out:
//   gen-data   <out>/<stage>/{train,eval}/manifest.txt + PNM images
//   train      <out>/<stage>.ckpt, <stage>_loss.csv, <stage>_heldout.csv
//   sample     <out>/lr.ppm (dual pipeline), <out>/hr.ppm
//   eval       <out>/eval.csv
//   ablate     <out>/ablate.csv, <out>/cells/<model>.ckpt
//   grad-check report on stdout

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dsvton/config.hpp"
#include "dsvton/synthdata.hpp"

namespace dsvton {

struct CommandOptions {
  std::optional<DatasetStage> stage;
  std::string out;            // empty: verb default
  bool force_resume = false;  // train: ignore a config-hash mismatch
  std::string inject_fault;   // grad-check: layer group whose gradient is corrupted
};

int cmd_gen_data(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log);
int cmd_train(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log);
int cmd_sample(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log);
int cmd_eval(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log);
int cmd_ablate(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log);
int cmd_grad_check(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log);

/// Parses argv, loads the config and dispatches. Errors are reported on
/// `err`; the return value is the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dsvton
