#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sane/common.hpp"

namespace sane {

struct InteractionEvent {
  UserId user = 0;
  ItemId item = 0;
  std::int64_t timestamp = 0;
};

// Time-sorted events with dense 0-based ids. Dense ids are assigned in
// first-appearance order of the sorted stream, so the users seen in any
// prefix of `events` are exactly the ids below some bound.
struct InteractionLog {
  std::vector<InteractionEvent> events;
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::vector<std::string> raw_user_ids;  // dense id -> raw id
  std::vector<std::string> raw_item_ids;
};

class IngestError : public Error {
 public:
  IngestError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Reads `user<d>item<d>timestamp` records. Blank lines and lines starting
// with '#' are ignored. The sort is stable, so equal timestamps keep input order.
InteractionLog ingest_interactions(std::istream& source, char delimiter = ',');
InteractionLog ingest_interactions_file(const std::string& path, char delimiter = ',');

// Builds a log directly from dense-id events (already re-indexed).
InteractionLog make_log(std::vector<InteractionEvent> events);

struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool empty() const { return end == begin; }
};

enum class SplitMode { standard, tuning };

struct Block {
  Range span;   // whole chronological block
  Range train;  // training edges
  Range validation;
  Range test;   // empty when no following block exists
};

// Block 0 is the base block; blocks 1..n are incremental.
struct BlockSchedule {
  SplitMode mode = SplitMode::standard;
  std::vector<Block> blocks;

  std::size_t size() const { return blocks.size(); }
  const Block& at(std::size_t t) const;
};

BlockSchedule split_blocks(const InteractionLog& log, double base_fraction,
                           std::size_t n_incremental, double val_fraction,
                           SplitMode mode);

void write_schedule_summary(std::ostream& out, const BlockSchedule& schedule);

struct InteractionGraph {
  std::size_t block = 0;
  std::size_t n_users = 0;  // cumulative universe U_t
  std::size_t n_items = 0;  // cumulative universe I_t
  std::vector<std::vector<ItemId>> user_adj;  // duplicates kept
  std::vector<std::vector<UserId>> item_adj;
  std::size_t n_edges = 0;

  // Distinct current-block items per user, sorted ascending.
  std::vector<std::vector<ItemId>> user_item_sets() const;
};

// Adjacency holds only block t's training edges; universes cover every id
// seen in the log up to the end of block t's training range.
InteractionGraph build_block_graph(const InteractionLog& log,
                                   const BlockSchedule& schedule, std::size_t t);

// Positives of each user over an arbitrary range, distinct and sorted.
std::vector<std::vector<ItemId>> user_items_in(const InteractionLog& log, Range range,
                                               std::size_t n_users);

struct CategoryHistogram {
  std::size_t block = 0;
  std::size_t n_categories = 0;
  std::vector<std::vector<std::int64_t>> counts;  // n_users x K
};

CategoryHistogram category_histogram(const InteractionGraph& graph,
                                     const CategoryMap& categories, std::size_t n_categories);

}  // namespace sane
