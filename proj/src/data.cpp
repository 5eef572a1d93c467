#include "sane/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string_view>
#include <unordered_map>

namespace sane {

namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delimiter, start);
    if (pos == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return fields;
}

struct RawEvent {
  std::string user;
  std::string item;
  std::int64_t timestamp;
};

// Floor with a small tolerance so 0.05 * 100 lands on 5, not 4.
std::size_t floor_count(double x) {
  return static_cast<std::size_t>(std::floor(x + 1e-9));
}

}  // namespace

InteractionLog ingest_interactions(std::istream& source, char delimiter) {
  std::vector<RawEvent> raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto fields = split_fields(body, delimiter);
    if (fields.size() != 3) {
      throw IngestError(line_no, "expected 3 fields (user, item, timestamp), got " +
                                     std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) {
      throw IngestError(line_no, "empty user or item field");
    }
    std::int64_t ts = 0;
    const auto* first = fields[2].data();
    const auto* last = first + fields[2].size();
    const auto [ptr, ec] = std::from_chars(first, last, ts);
    if (ec != std::errc{} || ptr != last) {
      throw IngestError(line_no, "non-numeric timestamp '" + std::string(fields[2]) + "'");
    }
    raw.push_back({std::string(fields[0]), std::string(fields[1]), ts});
  }
  if (raw.empty()) throw Error("interaction source contains no events");

  std::stable_sort(raw.begin(), raw.end(),
                   [](const RawEvent& a, const RawEvent& b) { return a.timestamp < b.timestamp; });

  InteractionLog log;
  std::unordered_map<std::string, UserId> user_ids;
  std::unordered_map<std::string, ItemId> item_ids;
  log.events.reserve(raw.size());
  for (const auto& r : raw) {
    auto [uit, unew] = user_ids.try_emplace(r.user, static_cast<UserId>(log.raw_user_ids.size()));
    if (unew) log.raw_user_ids.push_back(r.user);
    auto [iit, inew] = item_ids.try_emplace(r.item, static_cast<ItemId>(log.raw_item_ids.size()));
    if (inew) log.raw_item_ids.push_back(r.item);
    log.events.push_back({uit->second, iit->second, r.timestamp});
  }
  log.n_users = log.raw_user_ids.size();
  log.n_items = log.raw_item_ids.size();
  return log;
}

InteractionLog ingest_interactions_file(const std::string& path, char delimiter) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open interaction file '" + path + "'");
  return ingest_interactions(in, delimiter);
}

InteractionLog make_log(std::vector<InteractionEvent> events) {
  if (events.empty()) throw Error("interaction source contains no events");
  std::stable_sort(events.begin(), events.end(),
                   [](const InteractionEvent& a, const InteractionEvent& b) {
                     return a.timestamp < b.timestamp;
                   });
  // Re-index so the first-appearance invariant holds for the sorted stream.
  std::unordered_map<UserId, UserId> umap;
  std::unordered_map<ItemId, ItemId> imap;
  InteractionLog log;
  for (auto& e : events) {
    if (e.user < 0 || e.item < 0) throw Error("negative id in event stream");
    auto [uit, unew] = umap.try_emplace(e.user, static_cast<UserId>(log.raw_user_ids.size()));
    if (unew) log.raw_user_ids.push_back(std::to_string(e.user));
    auto [iit, inew] = imap.try_emplace(e.item, static_cast<ItemId>(log.raw_item_ids.size()));
    if (inew) log.raw_item_ids.push_back(std::to_string(e.item));
    e.user = uit->second;
    e.item = iit->second;
  }
  log.events = std::move(events);
  log.n_users = log.raw_user_ids.size();
  log.n_items = log.raw_item_ids.size();
  return log;
}

const Block& BlockSchedule::at(std::size_t t) const {
  if (t >= blocks.size()) {
    throw Error("block index " + std::to_string(t) + " out of range (schedule has " +
                std::to_string(blocks.size()) + " blocks)");
  }
  return blocks[t];
}

BlockSchedule split_blocks(const InteractionLog& log, double base_fraction,
                           std::size_t n_incremental, double val_fraction, SplitMode mode) {
  if (!(base_fraction > 0.0 && base_fraction < 1.0)) {
    throw Error("base_fraction must lie in (0, 1)");
  }
  if (n_incremental < 1) throw Error("n_incremental must be at least 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw Error("val_fraction must lie in [0, 1)");
  }
  const std::size_t n = log.events.size();
  const std::size_t base = floor_count(static_cast<double>(n) * base_fraction);
  const std::size_t rest = n - base;
  const std::size_t per_block = rest / n_incremental;
  if (base == 0 || per_block == 0) {
    throw Error("split leaves an empty block (" + std::to_string(n) + " events, " +
                std::to_string(n_incremental) + " incremental blocks)");
  }

  BlockSchedule schedule;
  schedule.mode = mode;
  std::size_t cursor = 0;
  for (std::size_t t = 0; t <= n_incremental; ++t) {
    std::size_t size = t == 0 ? base : per_block;
    if (t == n_incremental) size = n - cursor;  // remainder goes to the final block
    Block b;
    b.span = {cursor, cursor + size};
    cursor += size;
    schedule.blocks.push_back(b);
  }

  for (std::size_t t = 0; t < schedule.blocks.size(); ++t) {
    Block& b = schedule.blocks[t];
    const bool has_next = t + 1 < schedule.blocks.size();
    if (mode == SplitMode::standard) {
      const std::size_t val = floor_count(static_cast<double>(b.span.size()) * val_fraction);
      if (val >= b.span.size()) throw Error("validation carve-out empties a training block");
      b.train = {b.span.begin, b.span.end - val};
      b.validation = {b.span.end - val, b.span.end};
      b.test = has_next ? schedule.blocks[t + 1].span : Range{n, n};
    } else {
      b.train = b.span;
      if (has_next) {
        const Range next = schedule.blocks[t + 1].span;
        const std::size_t half = next.size() / 2;
        b.validation = {next.begin, next.begin + half};
        b.test = {next.begin + half, next.end};
      } else {
        b.validation = {n, n};
        b.test = {n, n};
      }
    }
  }
  return schedule;
}

void write_schedule_summary(std::ostream& out, const BlockSchedule& schedule) {
  out << "mode," << (schedule.mode == SplitMode::standard ? "standard" : "tuning") << "\n";
  out << "blocks," << schedule.blocks.size() << "\n";
  out << "block,kind,begin,end,size,train_begin,train_end,val_begin,val_end,test_begin,test_end\n";
  for (std::size_t t = 0; t < schedule.blocks.size(); ++t) {
    const Block& b = schedule.blocks[t];
    out << t << "," << (t == 0 ? "base" : "incremental") << "," << b.span.begin << ","
        << b.span.end << "," << b.span.size() << "," << b.train.begin << "," << b.train.end
        << "," << b.validation.begin << "," << b.validation.end << "," << b.test.begin << ","
        << b.test.end << "\n";
  }
}

std::vector<std::vector<ItemId>> InteractionGraph::user_item_sets() const {
  std::vector<std::vector<ItemId>> sets(user_adj.size());
  for (std::size_t u = 0; u < user_adj.size(); ++u) {
    sets[u] = user_adj[u];
    std::sort(sets[u].begin(), sets[u].end());
    sets[u].erase(std::unique(sets[u].begin(), sets[u].end()), sets[u].end());
  }
  return sets;
}

InteractionGraph build_block_graph(const InteractionLog& log, const BlockSchedule& schedule,
                                   std::size_t t) {
  const Block& b = schedule.at(t);
  if (b.train.empty()) throw Error("block " + std::to_string(t) + " has an empty training range");

  InteractionGraph g;
  g.block = t;
  // Ids are dense in first-appearance order, so the universe is a prefix max.
  for (std::size_t e = 0; e < b.train.end; ++e) {
    const auto& ev = log.events[e];
    g.n_users = std::max<std::size_t>(g.n_users, static_cast<std::size_t>(ev.user) + 1);
    g.n_items = std::max<std::size_t>(g.n_items, static_cast<std::size_t>(ev.item) + 1);
  }
  g.user_adj.assign(g.n_users, {});
  g.item_adj.assign(g.n_items, {});
  for (std::size_t e = b.train.begin; e < b.train.end; ++e) {
    const auto& ev = log.events[e];
    g.user_adj[ev.user].push_back(ev.item);
    g.item_adj[ev.item].push_back(ev.user);
  }
  g.n_edges = b.train.size();
  return g;
}

std::vector<std::vector<ItemId>> user_items_in(const InteractionLog& log, Range range,
                                               std::size_t n_users) {
  std::vector<std::vector<ItemId>> sets(n_users);
  for (std::size_t e = range.begin; e < range.end; ++e) {
    const auto& ev = log.events[e];
    if (static_cast<std::size_t>(ev.user) >= n_users) continue;
    sets[ev.user].push_back(ev.item);
  }
  for (auto& s : sets) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }
  return sets;
}

CategoryHistogram category_histogram(const InteractionGraph& graph, const CategoryMap& categories,
                                     std::size_t n_categories) {
  if (n_categories == 0) throw Error("category count must be positive");
  CategoryHistogram h;
  h.block = graph.block;
  h.n_categories = n_categories;
  h.counts.assign(graph.n_users, std::vector<std::int64_t>(n_categories, 0));
  for (std::size_t u = 0; u < graph.user_adj.size(); ++u) {
    for (ItemId i : graph.user_adj[u]) {
      if (static_cast<std::size_t>(i) >= categories.size()) {
        throw Error("item " + std::to_string(i) + " has no category");
      }
      const Category c = categories[i];
      if (c < 0 || static_cast<std::size_t>(c) >= n_categories) {
        throw Error("item " + std::to_string(i) + " has category " + std::to_string(c) +
                    " outside [0, " + std::to_string(n_categories) + ")");
      }
      ++h.counts[u][c];
    }
  }
  return h;
}

}  // namespace sane
