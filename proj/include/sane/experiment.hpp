#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "sane/data.hpp"
#include "sane/eval.hpp"
#include "sane/trainer.hpp"

namespace sane {

struct RunConfig {
  std::string input;       // interactions file
  char delimiter = ',';
  std::string categories;  // optional `item,category` file; empty = learned clusters
  std::string output_dir = "out";

  double base_fraction = 0.6;
  std::size_t n_incremental = 4;
  double val_fraction = 0.05;
  SplitMode split_mode = SplitMode::standard;

  IncrementalOptions options;
  std::vector<std::size_t> cutoffs{5, 10, 15, 20};
  bool dump_reservoir = false;
  bool log_timings = false;  // wall-clock column of the train logs

  // Every key with its effective value, sorted by key.
  std::map<std::string, std::string> canonical() const;
};

// Flat `key = value` text; '#' starts a comment. Unknown keys and bad values
// are errors naming the key. Relative paths resolve against `base_dir`.
RunConfig parse_config(std::istream& in, const std::string& base_dir = "");
RunConfig load_config(const std::string& path);

// FNV-1a over the canonical `key=value` lines, as 16 hex digits.
std::string config_digest(const RunConfig& config);

// Outcome of training one block and evaluating it on the following range.
struct BlockOutcome {
  std::size_t block = 0;
  EmbeddingState state;
  std::vector<TrainRecord> records;
  ReservoirState reservoir;
  CategoryMap categories;
  EvalRequest request;  // empty when the block has no test range
  std::vector<MetricRow> rows;
};

// Base block, then incremental blocks 1..n-1, each evaluated on its test range.
// The final block is used only as block n-1's test range. `on_block` sees each
// outcome as soon as it is ready.
std::vector<BlockOutcome> run_blocks(const InteractionLog& log, const BlockSchedule& schedule,
                                     const IncrementalOptions& options,
                                     const std::vector<std::size_t>& cutoffs,
                                     const TrainerHooks& hooks = {},
                                     const std::function<void(const BlockOutcome&)>& on_block = {});

// Full run from a config: writes metrics.csv, summary.json, per-block train
// logs and checkpoints into the output directory.
void run_experiment(const RunConfig& config);

// Metrics of a checkpoint trained on block t, evaluated on that block's test range.
std::vector<MetricRow> evaluate_checkpoint(const RunConfig& config, const std::string& checkpoint,
                                           std::size_t block);

void write_summary_json(std::ostream& out, const RunConfig& config,
                        const std::vector<MetricRow>& rows);

}  // namespace sane
