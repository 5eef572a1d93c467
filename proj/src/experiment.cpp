#include "sane/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace sane {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

template <typename T>
T parse_int(const std::string& key, const std::string& text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error("config key '" + key + "': expected an integer, got '" + text + "'");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw Error("config key '" + key + "': expected a number, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error("config key '" + key + "': expected true/false, got '" + text + "'");
}

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty() || base_dir.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base_dir) / path).lexically_normal().string();
}

const char* mode_name(DistillMode m) {
  switch (m) {
    case DistillMode::none: return "none";
    case DistillMode::local: return "local";
    case DistillMode::contrastive: return "contrastive";
  }
  return "none";
}

}  // namespace

std::map<std::string, std::string> RunConfig::canonical() const {
  const auto& t = options.trainer;
  const auto& r = options.reservoir;
  std::map<std::string, std::string> m;
  m["input"] = input;
  m["delimiter"] = std::string(1, delimiter);
  m["categories"] = categories;
  m["output_dir"] = output_dir;
  m["base_fraction"] = fmt_double(base_fraction);
  m["n_incremental"] = std::to_string(n_incremental);
  m["val_fraction"] = fmt_double(val_fraction);
  m["split_mode"] = split_mode == SplitMode::standard ? "standard" : "tuning";
  m["batch_size"] = std::to_string(t.batch_size);
  m["learning_rate"] = fmt_double(t.learning_rate);
  m["adam_beta1"] = fmt_double(t.adam_beta1);
  m["adam_beta2"] = fmt_double(t.adam_beta2);
  m["adam_epsilon"] = fmt_double(t.adam_epsilon);
  m["n_uniform"] = std::to_string(t.n_uniform);
  m["n_reservoir"] = std::to_string(t.n_reservoir);
  m["min_epochs_base"] = std::to_string(t.min_epochs_base);
  m["max_epochs_base"] = std::to_string(t.max_epochs_base);
  m["min_epochs_incremental"] = std::to_string(t.min_epochs_incremental);
  m["max_epochs_incremental"] = std::to_string(t.max_epochs_incremental);
  m["patience"] = std::to_string(t.patience);
  m["restore_best"] = t.restore_best ? "true" : "false";
  m["dropout"] = fmt_double(t.dropout);
  m["dim"] = std::to_string(t.dim);
  m["n_layers"] = std::to_string(t.n_layers);
  m["seed"] = std::to_string(t.seed);
  m["reservoir_q"] = std::to_string(r.q);
  m["reservoir_lambda"] = fmt_double(r.lambda);
  m["n_categories"] = std::to_string(r.n_categories);
  m["refresh_every_f"] = std::to_string(r.refresh_every);
  m["flip_prior_sign"] = r.flip_prior_sign ? "true" : "false";
  m["lambda_kd"] = fmt_double(options.weights.lambda_kd);
  m["beta"] = fmt_double(options.weights.beta);
  m["lambda_reg"] = fmt_double(options.weights.lambda_reg);
  m["distill_mode"] = mode_name(options.distill.mode);
  m["contrastive_tau"] = fmt_double(options.distill.tau);
  m["contrastive_negatives"] = std::to_string(options.distill.n_negatives);
  m["cluster_nu"] = fmt_double(options.cluster_nu);
  m["cluster_tau"] = fmt_double(options.cluster_tau);
  m["cutoffs"] = join(cutoffs);
  m["dump_reservoir"] = dump_reservoir ? "true" : "false";
  m["log_timings"] = log_timings ? "true" : "false";
  return m;
}

RunConfig parse_config(std::istream& in, const std::string& base_dir) {
  RunConfig c;
  auto& t = c.options.trainer;
  auto& r = c.options.reservoir;
  c.output_dir = resolve(base_dir, c.output_dir);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto val = trim(line.substr(eq + 1));
    using S = std::size_t;
    if (key == "input") c.input = resolve(base_dir, val);
    else if (key == "delimiter") {
      if (val == "tab" || val == "\\t") c.delimiter = '\t';
      else if (val.size() == 1) c.delimiter = val[0];
      else throw Error("config key 'delimiter': expected one character or 'tab'");
    }
    else if (key == "categories") c.categories = resolve(base_dir, val);
    else if (key == "output_dir") c.output_dir = resolve(base_dir, val);
    else if (key == "base_fraction") c.base_fraction = parse_double(key, val);
    else if (key == "n_incremental") c.n_incremental = parse_int<S>(key, val);
    else if (key == "val_fraction") c.val_fraction = parse_double(key, val);
    else if (key == "split_mode") {
      if (val == "standard") c.split_mode = SplitMode::standard;
      else if (val == "tuning") c.split_mode = SplitMode::tuning;
      else throw Error("config key 'split_mode': expected standard or tuning");
    }
    else if (key == "batch_size") t.batch_size = parse_int<S>(key, val);
    else if (key == "learning_rate") t.learning_rate = parse_double(key, val);
    else if (key == "adam_beta1") t.adam_beta1 = parse_double(key, val);
    else if (key == "adam_beta2") t.adam_beta2 = parse_double(key, val);
    else if (key == "adam_epsilon") t.adam_epsilon = parse_double(key, val);
    else if (key == "n_uniform") t.n_uniform = parse_int<S>(key, val);
    else if (key == "n_reservoir") t.n_reservoir = parse_int<S>(key, val);
    else if (key == "min_epochs_base") t.min_epochs_base = parse_int<S>(key, val);
    else if (key == "max_epochs_base") t.max_epochs_base = parse_int<S>(key, val);
    else if (key == "min_epochs_incremental") t.min_epochs_incremental = parse_int<S>(key, val);
    else if (key == "max_epochs_incremental") t.max_epochs_incremental = parse_int<S>(key, val);
    else if (key == "patience") t.patience = parse_int<S>(key, val);
    else if (key == "restore_best") t.restore_best = parse_bool(key, val);
    else if (key == "dropout") t.dropout = parse_double(key, val);
    else if (key == "dim") t.dim = parse_int<S>(key, val);
    else if (key == "n_layers") t.n_layers = parse_int<S>(key, val);
    else if (key == "seed") t.seed = parse_int<std::uint64_t>(key, val);
    else if (key == "reservoir_q") r.q = parse_int<S>(key, val);
    else if (key == "reservoir_lambda") r.lambda = parse_double(key, val);
    else if (key == "n_categories") r.n_categories = parse_int<S>(key, val);
    else if (key == "refresh_every_f") r.refresh_every = parse_int<S>(key, val);
    else if (key == "flip_prior_sign") r.flip_prior_sign = parse_bool(key, val);
    else if (key == "lambda_kd") c.options.weights.lambda_kd = parse_double(key, val);
    else if (key == "beta") c.options.weights.beta = parse_double(key, val);
    else if (key == "lambda_reg") c.options.weights.lambda_reg = parse_double(key, val);
    else if (key == "distill_mode") {
      if (val == "none") c.options.distill.mode = DistillMode::none;
      else if (val == "local") c.options.distill.mode = DistillMode::local;
      else if (val == "contrastive") c.options.distill.mode = DistillMode::contrastive;
      else throw Error("config key 'distill_mode': expected none, local or contrastive");
    }
    else if (key == "contrastive_tau") c.options.distill.tau = parse_double(key, val);
    else if (key == "contrastive_negatives") c.options.distill.n_negatives = parse_int<S>(key, val);
    else if (key == "cluster_nu") c.options.cluster_nu = parse_double(key, val);
    else if (key == "cluster_tau") c.options.cluster_tau = parse_double(key, val);
    else if (key == "cutoffs") {
      c.cutoffs.clear();
      std::stringstream ss(val);
      std::string part;
      while (std::getline(ss, part, ',')) c.cutoffs.push_back(parse_int<S>(key, trim(part)));
      if (c.cutoffs.empty()) throw Error("config key 'cutoffs': empty list");
      for (auto k : c.cutoffs) {
        if (k < 1) throw Error("config key 'cutoffs': cutoffs must be at least 1");
      }
    }
    else if (key == "dump_reservoir") c.dump_reservoir = parse_bool(key, val);
    else if (key == "log_timings") c.log_timings = parse_bool(key, val);
    else throw Error("unknown config key '" + key + "'");
  }
  c.options.distill.seed = t.seed;
  c.options.trainer.validate();
  c.options.reservoir.validate();
  c.options.weights.validate();
  c.options.distill.validate();
  if (!(c.options.cluster_nu > 0.0) || !(c.options.cluster_tau > 0.0)) {
    throw Error("cluster_nu and cluster_tau must be positive");
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  return parse_config(in, fs::path(path).parent_path().string());
}

std::string config_digest(const RunConfig& config) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [k, v] : config.canonical()) {
    // Output location does not change results.
    if (k == "output_dir") continue;
    for (char ch : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<BlockOutcome> run_blocks(const InteractionLog& log, const BlockSchedule& schedule,
                                     const IncrementalOptions& options,
                                     const std::vector<std::size_t>& cutoffs,
                                     const TrainerHooks& hooks,
                                     const std::function<void(const BlockOutcome&)>& on_block) {
  if (schedule.size() < 2) throw Error("schedule needs a base block and at least one more");
  std::vector<BlockOutcome> out;
  const std::size_t last = schedule.size() - 1;
  for (std::size_t t = 0; t < last; ++t) {
    BlockOutcome o;
    o.block = t;
    if (t == 0) {
      auto base = train_base_block(log, schedule, options.trainer, options.weights.lambda_reg, hooks);
      o.state = std::move(base.state);
      o.records = std::move(base.records);
    } else {
      auto inc = train_incremental_block(&out.back().state, log, schedule, t, options, hooks);
      o.state = std::move(inc.state);
      o.records = std::move(inc.records);
      o.reservoir = std::move(inc.reservoir);
      o.categories = std::move(inc.categories);
    }
    const auto& test = schedule.at(t).test;
    if (!test.empty()) {
      const auto graph = build_block_graph(log, schedule, t);
      o.request = build_request(forward(o.state, graph), log, test, cutoffs);
      o.rows = evaluate_request(o.request, t);
    }
    if (on_block) on_block(o);
    out.push_back(std::move(o));
  }
  return out;
}

namespace {

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot open '" + p.string() + "' for writing");
  return out;
}

CategoryMap load_categories(const RunConfig& config, const InteractionLog& log) {
  std::ifstream in(config.categories);
  if (!in) throw Error("cannot open categories file '" + config.categories + "'");
  return read_raw_categories(in, log);
}

}  // namespace

void write_summary_json(std::ostream& out, const RunConfig& config,
                        const std::vector<MetricRow>& rows) {
  nlohmann::ordered_json j;
  j["seed"] = config.options.trainer.seed;
  j["config_digest"] = config_digest(config);
  nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
  std::map<std::string, std::pair<double, std::size_t>> avg;
  std::vector<std::string> order;
  std::size_t current = static_cast<std::size_t>(-1);
  for (const auto& r : rows) {
    if (r.block != current) {
      blocks.push_back({{"block", r.block}, {"metrics", nlohmann::ordered_json::object()}});
      current = r.block;
    }
    const auto name = r.metric + "@" + std::to_string(r.cutoff);
    blocks.back()["metrics"][name] = r.value;
    if (!avg.count(name)) order.push_back(name);
    avg[name].first += r.value;
    avg[name].second += 1;
  }
  nlohmann::ordered_json mean = nlohmann::ordered_json::object();
  for (const auto& name : order) {
    mean[name] = avg[name].first / static_cast<double>(avg[name].second);
  }
  j["blocks"] = blocks;
  j["average"] = mean;
  out << j.dump(2) << "\n";
}

void run_experiment(const RunConfig& config) {
  if (config.input.empty()) throw Error("config is missing 'input'");
  const auto log = ingest_interactions_file(config.input, config.delimiter);
  const auto schedule = split_blocks(log, config.base_fraction, config.n_incremental,
                                     config.val_fraction, config.split_mode);
  IncrementalOptions options = config.options;
  CategoryMap fixed;
  if (!config.categories.empty()) {
    fixed = load_categories(config, log);
    options.categories = &fixed;
  }
  const fs::path dir(config.output_dir);
  fs::create_directories(dir);

  std::vector<MetricRow> rows;
  run_blocks(log, schedule, options, config.cutoffs, {}, [&](const BlockOutcome& o) {
    const auto tag = std::to_string(o.block);
    auto tl = open_out(dir / ("train_log_block" + tag + ".csv"));
    write_train_log(tl, o.records, config.log_timings);
    save_checkpoint((dir / ("checkpoint_block" + tag + ".bin")).string(), o.state);
    if (config.dump_reservoir && o.block > 0) {
      auto rd = open_out(dir / ("reservoir_block" + tag + ".csv"));
      write_reservoir_dump(rd, o.reservoir);
      auto cm = open_out(dir / ("categories_block" + tag + ".csv"));
      write_category_map(cm, o.categories);
    }
    rows.insert(rows.end(), o.rows.begin(), o.rows.end());
  });

  auto metrics = open_out(dir / "metrics.csv");
  write_metrics_csv(metrics, rows);
  auto summary = open_out(dir / "summary.json");
  write_summary_json(summary, config, rows);
  auto users = open_out(dir / "user_map.csv");
  for (std::size_t u = 0; u < log.n_users; ++u) users << u << "," << log.raw_user_ids[u] << "\n";
  auto items = open_out(dir / "item_map.csv");
  for (std::size_t i = 0; i < log.n_items; ++i) items << i << "," << log.raw_item_ids[i] << "\n";
}

std::vector<MetricRow> evaluate_checkpoint(const RunConfig& config, const std::string& checkpoint,
                                           std::size_t block) {
  if (config.input.empty()) throw Error("config is missing 'input'");
  const auto log = ingest_interactions_file(config.input, config.delimiter);
  const auto schedule = split_blocks(log, config.base_fraction, config.n_incremental,
                                     config.val_fraction, config.split_mode);
  const auto state = load_checkpoint(checkpoint);
  const auto graph = build_block_graph(log, schedule, block);
  if (state.n_users() != graph.n_users || state.n_items() != graph.n_items) {
    throw Error("checkpoint shape does not match block " + std::to_string(block));
  }
  const auto& test = schedule.at(block).test;
  if (test.empty()) throw Error("block " + std::to_string(block) + " has no test range");
  const auto req = build_request(forward(state, graph), log, test, config.cutoffs);
  return evaluate_request(req, block);
}

}  // namespace sane
