#include "sane/backbone.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "sane/kernels.hpp"
#include "sane/rng.hpp"

namespace sane {

namespace {

void fill_normal(Eigen::Ref<Matrix> m, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
}

LayerParams init_layer(std::size_t dim, Rng& rng) {
  LayerParams p;
  const auto d = static_cast<Eigen::Index>(dim);
  p.weight.resize(d, 2 * d);
  const double limit = std::sqrt(6.0 / static_cast<double>(3 * dim));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < 2 * d; ++c) p.weight(r, c) = dist(rng);
  p.bias = Vector::Zero(d);
  return p;
}

Matrix activate(const Matrix& z, Activation act) {
  if (act == Activation::identity) return z;
  return z.array().tanh().matrix();
}

// Derivative expressed through the activation output.
Matrix activation_slope(const Matrix& out, Activation act) {
  if (act == Activation::identity) return Matrix::Ones(out.rows(), out.cols());
  return (1.0 - out.array().square()).matrix();
}

Matrix combine(const Matrix& self, const Matrix& agg, const LayerParams& layer) {
  const auto d = self.cols();
  Matrix z = self * layer.weight.leftCols(d).transpose() + agg * layer.weight.rightCols(d).transpose();
  z.rowwise() += layer.bias.transpose();
  return z;
}

void check_shapes(const EmbeddingState& state, const InteractionGraph& graph) {
  if (graph.n_users != state.n_users() || graph.n_items != state.n_items()) {
    throw Error("graph universe (" + std::to_string(graph.n_users) + " users, " +
                std::to_string(graph.n_items) + " items) does not match embedding state (" +
                std::to_string(state.n_users()) + ", " + std::to_string(state.n_items()) + ")");
  }
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) mask(r, c) = keep(rng) ? scale : 0.0;
  return mask;
}

constexpr std::array<char, 8> kMagic = {'S', 'A', 'N', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("truncated checkpoint");
  return v;
}

void put_f32(std::ostream& out, const Eigen::Ref<const Matrix>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<float>(out, static_cast<float>(m(r, c)));
}

void get_f32(std::istream& in, Eigen::Ref<Matrix> m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<float>(in);
}

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

EmbeddingState init_embeddings(std::size_t n_users, std::size_t n_items, std::size_t dim,
                               std::uint64_t seed, std::size_t n_layers, Activation activation) {
  if (n_users == 0 || n_items == 0) throw Error("embedding tables need at least one user and item");
  if (dim == 0) throw Error("embedding dimension must be at least 1");
  EmbeddingState s;
  s.activation = activation;
  Rng rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  s.user_table.resize(static_cast<Eigen::Index>(n_users), static_cast<Eigen::Index>(dim));
  s.item_table.resize(static_cast<Eigen::Index>(n_items), static_cast<Eigen::Index>(dim));
  fill_normal(s.user_table, stddev, rng);
  fill_normal(s.item_table, stddev, rng);
  for (std::size_t k = 0; k < n_layers; ++k) s.layers.push_back(init_layer(dim, rng));
  return s;
}

void grow_embeddings(EmbeddingState& state, std::size_t n_users, std::size_t n_items,
                     std::uint64_t seed) {
  const auto old_u = static_cast<Eigen::Index>(state.n_users());
  const auto old_i = static_cast<Eigen::Index>(state.n_items());
  const auto d = static_cast<Eigen::Index>(state.dim());
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(old_u), static_cast<std::uint64_t>(old_i)}));
  if (static_cast<Eigen::Index>(n_users) > old_u) {
    state.user_table.conservativeResize(static_cast<Eigen::Index>(n_users), d);
    fill_normal(state.user_table.bottomRows(static_cast<Eigen::Index>(n_users) - old_u), stddev, rng);
  }
  if (static_cast<Eigen::Index>(n_items) > old_i) {
    state.item_table.conservativeResize(static_cast<Eigen::Index>(n_items), d);
    fill_normal(state.item_table.bottomRows(static_cast<Eigen::Index>(n_items) - old_i), stddev, rng);
  }
}

std::uint64_t checksum(const EmbeddingState& state) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  fnv_bytes(h, state.user_table.data(), sizeof(double) * state.user_table.size());
  fnv_bytes(h, state.item_table.data(), sizeof(double) * state.item_table.size());
  for (const auto& l : state.layers) {
    fnv_bytes(h, l.weight.data(), sizeof(double) * l.weight.size());
    fnv_bytes(h, l.bias.data(), sizeof(double) * l.bias.size());
  }
  return h;
}

RepGradient RepGradient::zeros_like(const NodeRepresentations& reps) {
  return {Matrix::Zero(reps.user_reps.rows(), reps.user_reps.cols()),
          Matrix::Zero(reps.item_reps.rows(), reps.item_reps.cols())};
}

RepGradient& RepGradient::operator+=(const RepGradient& other) {
  user += other.user;
  item += other.item;
  return *this;
}

RepGradient& RepGradient::scale(double factor) {
  user *= factor;
  item *= factor;
  return *this;
}

ParamGradient ParamGradient::zeros_like(const EmbeddingState& state) {
  ParamGradient g;
  g.user_table = Matrix::Zero(state.user_table.rows(), state.user_table.cols());
  g.item_table = Matrix::Zero(state.item_table.rows(), state.item_table.cols());
  for (const auto& l : state.layers) {
    g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  return g;
}

NodeRepresentations forward(const EmbeddingState& state, const InteractionGraph& graph,
                            std::size_t n_layers) {
  check_shapes(state, graph);
  if (n_layers > state.n_layers()) {
    throw Error("requested " + std::to_string(n_layers) + " layers but state has " +
                std::to_string(state.n_layers()));
  }
  Matrix hu = state.user_table;
  Matrix hi = state.item_table;
  for (std::size_t k = 0; k < n_layers; ++k) {
    const Matrix au = kernels::mean_aggregate(hi, graph.user_adj);
    const Matrix ai = kernels::mean_aggregate(hu, graph.item_adj);
    Matrix nu = activate(combine(hu, au, state.layers[k]), state.activation);
    Matrix ni = activate(combine(hi, ai, state.layers[k]), state.activation);
    hu = std::move(nu);
    hi = std::move(ni);
  }
  return {std::move(hu), std::move(hi)};
}

NodeRepresentations forward(const EmbeddingState& state, const InteractionGraph& graph) {
  return forward(state, graph, state.n_layers());
}

TrainingForward forward_train(const EmbeddingState& state, const InteractionGraph& graph,
                              double dropout, std::uint64_t seed) {
  check_shapes(state, graph);
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("dropout must lie in [0, 1)");
  TrainingForward f;
  Matrix hu = state.user_table;
  Matrix hi = state.item_table;
  for (const auto& layer : state.layers) {
    Matrix au = kernels::mean_aggregate(hi, graph.user_adj);
    Matrix ai = kernels::mean_aggregate(hu, graph.item_adj);
    Matrix nu = activate(combine(hu, au, layer), state.activation);
    Matrix ni = activate(combine(hi, ai, layer), state.activation);
    f.tape.user_in.push_back(std::move(hu));
    f.tape.item_in.push_back(std::move(hi));
    f.tape.user_agg.push_back(std::move(au));
    f.tape.item_agg.push_back(std::move(ai));
    f.tape.user_out.push_back(nu);
    f.tape.item_out.push_back(ni);
    hu = std::move(nu);
    hi = std::move(ni);
  }
  if (dropout > 0.0) {
    Rng rng(seed);
    f.tape.user_mask = dropout_mask(hu.rows(), hu.cols(), dropout, rng);
    f.tape.item_mask = dropout_mask(hi.rows(), hi.cols(), dropout, rng);
    hu = hu.cwiseProduct(f.tape.user_mask);
    hi = hi.cwiseProduct(f.tape.item_mask);
  }
  f.reps = {std::move(hu), std::move(hi)};
  return f;
}

ParamGradient backward(const EmbeddingState& state, const InteractionGraph& graph,
                       const ForwardTape& tape, const RepGradient& grad) {
  check_shapes(state, graph);
  ParamGradient out = ParamGradient::zeros_like(state);
  Matrix gu = grad.user;
  Matrix gi = grad.item;
  if (tape.user_mask.size() > 0) {
    gu = gu.cwiseProduct(tape.user_mask);
    gi = gi.cwiseProduct(tape.item_mask);
  }
  const auto d = static_cast<Eigen::Index>(state.dim());
  for (std::size_t kk = state.n_layers(); kk-- > 0;) {
    const auto& layer = state.layers[kk];
    const Matrix zu = gu.cwiseProduct(activation_slope(tape.user_out[kk], state.activation));
    const Matrix zi = gi.cwiseProduct(activation_slope(tape.item_out[kk], state.activation));
    auto& gl = out.layers[kk];
    gl.weight.leftCols(d) += zu.transpose() * tape.user_in[kk] + zi.transpose() * tape.item_in[kk];
    gl.weight.rightCols(d) += zu.transpose() * tape.user_agg[kk] + zi.transpose() * tape.item_agg[kk];
    gl.bias += zu.colwise().sum().transpose() + zi.colwise().sum().transpose();

    const Matrix xu = zu * layer.weight;  // [d self | d agg]
    const Matrix xi = zi * layer.weight;
    Matrix next_u = xu.leftCols(d);
    Matrix next_i = xi.leftCols(d);
    // Users' aggregate reads item rows and vice versa.
    next_i += kernels::mean_aggregate_adjoint(xu.rightCols(d), graph.user_adj, graph.item_adj,
                                              graph.n_items);
    next_u += kernels::mean_aggregate_adjoint(xi.rightCols(d), graph.item_adj, graph.user_adj,
                                              graph.n_users);
    gu = std::move(next_u);
    gi = std::move(next_i);
  }
  out.user_table = std::move(gu);
  out.item_table = std::move(gi);
  return out;
}

double score(const NodeRepresentations& reps, UserId u, ItemId i) {
  if (u < 0 || static_cast<std::size_t>(u) >= reps.n_users()) {
    throw Error("user id " + std::to_string(u) + " out of range");
  }
  if (i < 0 || static_cast<std::size_t>(i) >= reps.n_items()) {
    throw Error("item id " + std::to_string(i) + " out of range");
  }
  return reps.user_reps.row(u).dot(reps.item_reps.row(i));
}

namespace {

RankingContext to_context(std::vector<std::vector<kernels::ScoredItem>> lists,
                          const std::vector<std::vector<ItemId>>& positives, std::size_t n_users) {
  RankingContext ctx;
  ctx.positives = positives;
  ctx.positives.resize(n_users);
  ctx.top_negatives.resize(lists.size());
  ctx.scores.resize(lists.size());
  for (std::size_t u = 0; u < lists.size(); ++u) {
    for (const auto& s : lists[u]) {
      ctx.top_negatives[u].push_back(s.item);
      ctx.scores[u].push_back(s.score);
    }
  }
  return ctx;
}

void check_rank_args(const NodeRepresentations& reps,
                     const std::vector<std::vector<ItemId>>& positives, std::size_t q) {
  if (q < 1) throw Error("reservoir size Q must be at least 1");
  if (positives.size() > reps.n_users()) throw Error("positive sets exceed the user count");
  if (reps.user_reps.cols() != reps.item_reps.cols()) throw Error("user/item dimension mismatch");
}

}  // namespace

RankingContext rank_top_negatives(const NodeRepresentations& reps,
                                  const std::vector<std::vector<ItemId>>& positives,
                                  std::size_t q) {
  check_rank_args(reps, positives, q);
  return to_context(kernels::top_scored_items(reps.user_reps, reps.item_reps, positives, q),
                    positives, reps.n_users());
}

RankingContext rank_top_negatives_serial(const NodeRepresentations& reps,
                                         const std::vector<std::vector<ItemId>>& positives,
                                         std::size_t q) {
  check_rank_args(reps, positives, q);
  return to_context(kernels::top_scored_items_serial(reps.user_reps, reps.item_reps, positives, q),
                    positives, reps.n_users());
}

void save_checkpoint(std::ostream& out, const EmbeddingState& state) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, state.activation == Activation::tanh ? 0U : 1U);
  put<std::uint64_t>(out, state.n_users());
  put<std::uint64_t>(out, state.n_items());
  put<std::uint64_t>(out, state.dim());
  put<std::uint64_t>(out, state.n_layers());
  put_f32(out, state.user_table);
  put_f32(out, state.item_table);
  for (const auto& l : state.layers) {
    put_f32(out, l.weight);
    put_f32(out, l.bias.transpose());
  }
  if (!out) throw Error("failed writing checkpoint");
}

void save_checkpoint(const std::string& path, const EmbeddingState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  save_checkpoint(out, state);
}

EmbeddingState load_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error("not a checkpoint file (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version));
  }
  EmbeddingState s;
  s.activation = get<std::uint32_t>(in) == 0U ? Activation::tanh : Activation::identity;
  const auto nu = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  const auto ni = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  const auto d = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  const auto nl = get<std::uint64_t>(in);
  s.user_table.resize(nu, d);
  s.item_table.resize(ni, d);
  get_f32(in, s.user_table);
  get_f32(in, s.item_table);
  for (std::uint64_t k = 0; k < nl; ++k) {
    LayerParams l;
    l.weight.resize(d, 2 * d);
    get_f32(in, l.weight);
    Matrix b(1, d);
    get_f32(in, b);
    l.bias = b.transpose();
    s.layers.push_back(std::move(l));
  }
  return s;
}

EmbeddingState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace sane
