#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sane/common.hpp"
#include "sane/data.hpp"

namespace sane {

enum class Activation { tanh, identity };

// h_out = act(weight * [h_self ; mean_neighbors] + bias); weight is d x 2d.
struct LayerParams {
  Matrix weight;
  Vector bias;
};

struct EmbeddingState {
  Matrix user_table;
  Matrix item_table;
  std::vector<LayerParams> layers;
  Activation activation = Activation::tanh;

  std::size_t dim() const { return static_cast<std::size_t>(user_table.cols()); }
  std::size_t n_users() const { return static_cast<std::size_t>(user_table.rows()); }
  std::size_t n_items() const { return static_cast<std::size_t>(item_table.rows()); }
  std::size_t n_layers() const { return layers.size(); }
};

// Table entries ~ N(0, 1/d); layer weights Glorot-uniform, zero bias.
EmbeddingState init_embeddings(std::size_t n_users, std::size_t n_items, std::size_t dim,
                               std::uint64_t seed, std::size_t n_layers = 2,
                               Activation activation = Activation::tanh);

// Appends freshly initialised rows for users/items that are new in a block.
void grow_embeddings(EmbeddingState& state, std::size_t n_users, std::size_t n_items,
                     std::uint64_t seed);

// FNV-1a over the raw bytes of every parameter.
std::uint64_t checksum(const EmbeddingState& state);

struct NodeRepresentations {
  Matrix user_reps;
  Matrix item_reps;

  std::size_t n_users() const { return static_cast<std::size_t>(user_reps.rows()); }
  std::size_t n_items() const { return static_cast<std::size_t>(item_reps.rows()); }
};

// Gradient of a scalar objective w.r.t. the final representations.
struct RepGradient {
  Matrix user;
  Matrix item;

  static RepGradient zeros_like(const NodeRepresentations& reps);
  RepGradient& operator+=(const RepGradient& other);
  RepGradient& scale(double factor);
};

struct ParamGradient {
  Matrix user_table;
  Matrix item_table;
  std::vector<LayerParams> layers;

  static ParamGradient zeros_like(const EmbeddingState& state);
};

// Evaluation-mode propagation through the first `n_layers` layers.
NodeRepresentations forward(const EmbeddingState& state, const InteractionGraph& graph,
                            std::size_t n_layers);
NodeRepresentations forward(const EmbeddingState& state, const InteractionGraph& graph);

// Intermediate values kept for the backward pass.
struct ForwardTape {
  std::vector<Matrix> user_in, item_in;    // h^(k-1)
  std::vector<Matrix> user_agg, item_agg;  // a^(k)
  std::vector<Matrix> user_out, item_out;  // h^(k)
  Matrix user_mask, item_mask;             // inverted-dropout scales; empty when disabled
};

struct TrainingForward {
  NodeRepresentations reps;
  ForwardTape tape;
};

// Training-mode propagation; dropout is applied to the final representations.
TrainingForward forward_train(const EmbeddingState& state, const InteractionGraph& graph,
                              double dropout, std::uint64_t seed);

ParamGradient backward(const EmbeddingState& state, const InteractionGraph& graph,
                       const ForwardTape& tape, const RepGradient& grad);

double score(const NodeRepresentations& reps, UserId u, ItemId i);

struct RankingContext {
  std::vector<std::vector<ItemId>> positives;      // current-block, sorted
  std::vector<std::vector<ItemId>> top_negatives;  // per user, best first
  std::vector<std::vector<double>> scores;         // parallel to top_negatives
};

// positives[u] must be sorted ascending. Users beyond positives.size() have none.
RankingContext rank_top_negatives(const NodeRepresentations& reps,
                                  const std::vector<std::vector<ItemId>>& positives,
                                  std::size_t q);
RankingContext rank_top_negatives_serial(const NodeRepresentations& reps,
                                         const std::vector<std::vector<ItemId>>& positives,
                                         std::size_t q);

// Versioned binary checkpoint: header then row-major f32 tables.
void save_checkpoint(std::ostream& out, const EmbeddingState& state);
void save_checkpoint(const std::string& path, const EmbeddingState& state);
EmbeddingState load_checkpoint(std::istream& in);
EmbeddingState load_checkpoint(const std::string& path);

}  // namespace sane
