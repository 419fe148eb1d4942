#pragma once

// Command-line surface: analyze | sweep | train | upscale | eval.
//
// All run parameters live in a RunConfig populated from (in order) built-in
// defaults, a key=value config file, and command-line overrides — later
// sources win. Commands throw the srkit error types; run_cli maps them onto
// process exit codes (usage=1, data=2, numeric=3).

#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "srkit/checkpoint.hpp"
#include "srkit/network.hpp"
#include "srkit/train.hpp"

namespace srkit {

struct RunConfig {
  // Network structure (mirrors NetworkSpec).
  std::string variant = "carn";
  int blocks = 3;
  int units = 3;
  int channels = 64;
  int group_size = 1;
  bool eblock = false;
  bool recursive = false;
  bool local_cascading = true;
  bool global_cascading = true;
  std::vector<int> scales = {2, 3, 4};

  // Training (mirrors TrainConfig).
  int patch_size_lr = 64;
  int batch_size = 64;
  double lr0 = 1e-4;
  std::int64_t halve_every = 400000;
  std::int64_t total_steps = 600000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool augment = true;
  std::int64_t checkpoint_every = 0;
  std::int64_t log_every = 1;

  // Run-level settings.
  std::string dataset;
  std::string out_dir = ".";
  int hr_width = 1280;
  int hr_height = 720;
  int scale = 0;  // 0 = every scale the variant supports

  // Keys assigned by a file or an override (drives preset reconciliation).
  std::set<std::string> set_keys;

  bool is_set(const std::string& key) const { return set_keys.count(key) > 0; }
};

// One `key=value` assignment; unknown keys and malformed values raise
// UsageError. `where` names the source for error messages.
void apply_key_value(RunConfig& cfg, const std::string& key, const std::string& value,
                     const std::string& where);

// Applies a whole file of assignments (UTF-8, one per line, `#` comments).
void load_config_file(RunConfig& cfg, const std::string& path);

// Applies `key=value` tokens in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

// Projections onto the library configs. to_network_spec starts from the
// variant preset and applies only explicitly-set structure keys, so
// `variant=carn-m channels=32` keeps the preset's flags.
NetworkSpec to_network_spec(const RunConfig& cfg);
TrainConfig to_train_config(const RunConfig& cfg);

// Recovers the architecture from a checkpoint alone: entry names and weight
// shapes pin channels, blocks, units, grouping, sharing, and heads.
NetworkSpec infer_spec(const RawCheckpoint& raw);

// Subcommand bodies. Human-readable progress goes to `out`; files are only
// written where a path argument asks for them.
void cmd_analyze(const RunConfig& cfg, const std::string& out_csv, std::ostream& out);
void cmd_sweep(const RunConfig& cfg, const std::vector<int>& groups,
               const std::string& recursive_mode, bool with_train, const std::string& out_csv,
               std::ostream& out);
void cmd_train(const RunConfig& cfg, bool resume, std::ostream& out);
void cmd_upscale(const std::string& ckpt, const std::string& in_png, int scale,
                 const std::string& out_png, std::ostream& out);
void cmd_eval(const RunConfig& cfg, const std::string& ckpt, const std::string& out_csv,
              std::ostream& out);

// Full argument parsing + dispatch + error-to-exit-code mapping. `args`
// excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace srkit
