// Command-line front end: split, synth, train, evaluate.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sane/data.hpp"
#include "sane/eval.hpp"
#include "sane/experiment.hpp"

namespace {

std::ofstream open_or_throw(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw sane::Error("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental recommendation with a personalised negative reservoir"};
  app.require_subcommand(1);

  auto* split = app.add_subcommand("split", "Partition a log into blocks and print the schedule");
  std::string split_input, split_output, split_mode = "standard", split_delim = ",";
  double base_fraction = 0.6, val_fraction = 0.05;
  std::size_t n_incremental = 4;
  split->add_option("--input", split_input, "user,item,timestamp file")->required();
  split->add_option("--delimiter", split_delim, "field delimiter (one character or 'tab')");
  split->add_option("--base-fraction", base_fraction);
  split->add_option("--n-incremental", n_incremental);
  split->add_option("--val-fraction", val_fraction);
  split->add_option("--mode", split_mode)->check(CLI::IsMember({"standard", "tuning"}));
  split->add_option("--output", split_output, "write the summary here instead of stdout");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic interest-drift dataset");
  std::size_t s_users = 200, s_items = 300, s_k = 4, s_flip = 2, s_blocks = 4, s_epb = 10;
  double s_drift = 0.3, s_dom = 0.7;
  std::uint64_t s_seed = 0;
  std::string s_out, s_cat_out;
  synth->add_option("--users", s_users);
  synth->add_option("--items", s_items);
  synth->add_option("--categories", s_k, "number of true categories");
  synth->add_option("--drift", s_drift, "fraction of users that switch category");
  synth->add_option("--flip-block", s_flip, "first incremental period after the switch");
  synth->add_option("--blocks", s_blocks, "number of incremental periods");
  synth->add_option("--events-per-block", s_epb, "events per user per incremental period");
  synth->add_option("--dominant-prob", s_dom);
  synth->add_option("--seed", s_seed);
  synth->add_option("--output", s_out, "interactions file")->required();
  synth->add_option("--categories-out", s_cat_out, "item,category file");

  auto* train = app.add_subcommand("train", "Run base and incremental training from a config");
  std::string train_config;
  train->add_option("--config", train_config)->required();

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on its block's test range");
  std::string eval_config, eval_ckpt, eval_out;
  std::size_t eval_block = 0;
  evaluate->add_option("--config", eval_config)->required();
  evaluate->add_option("--checkpoint", eval_ckpt)->required();
  evaluate->add_option("--block", eval_block, "block the checkpoint was trained on")->required();
  evaluate->add_option("--output", eval_out, "metrics file; stdout when omitted");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*split) {
      char delim = split_delim == "tab" ? '\t' : split_delim.at(0);
      const auto log = sane::ingest_interactions_file(split_input, delim);
      const auto schedule = sane::split_blocks(
          log, base_fraction, n_incremental, val_fraction,
          split_mode == "tuning" ? sane::SplitMode::tuning : sane::SplitMode::standard);
      if (split_output.empty()) {
        sane::write_schedule_summary(std::cout, schedule);
      } else {
        auto out = open_or_throw(split_output);
        sane::write_schedule_summary(out, schedule);
      }
    } else if (*synth) {
      const auto data = sane::synth_drift_dataset(s_users, s_items, s_k, s_drift, s_flip, s_blocks,
                                                  s_epb, s_seed, s_dom);
      auto out = open_or_throw(s_out);
      sane::write_interactions(out, data.log);
      if (!s_cat_out.empty()) {
        auto cat = open_or_throw(s_cat_out);
        sane::write_raw_categories(cat, data.log, data.categories);
      }
    } else if (*train) {
      sane::run_experiment(sane::load_config(train_config));
    } else if (*evaluate) {
      const auto rows = sane::evaluate_checkpoint(sane::load_config(eval_config), eval_ckpt, eval_block);
      if (eval_out.empty()) {
        sane::write_metrics_csv(std::cout, rows);
      } else {
        auto out = open_or_throw(eval_out);
        sane::write_metrics_csv(out, rows);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
