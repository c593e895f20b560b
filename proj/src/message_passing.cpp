#include "agnn/message_passing.hpp"

#include <string>

#include "agnn/encoder.hpp"
#include "agnn/rng.hpp"

namespace agnn {

namespace {

template <typename S>
Var<S> flatten(const Var<S>& grid) {
  const Shape& s = grid.shape();
  return reshape(grid, Shape{s[0] * s[1], s[2]});
}

void require_grid(const Shape& s, const char* what) {
  if (s.rank != 3) throw ShapeError(std::string(what) + ": node state must be [H,W,C], got " + s.str());
}

}  // namespace

template <typename S>
AttentionWeights<Tensor<S>> init_attention(int channels, std::uint64_t seed) {
  if (channels < 1) throw std::invalid_argument("attention channels must be positive");
  const int c = channels;
  AttentionWeights<Tensor<S>> w;
  w.query = he_uniform_kernel<S>(1, 1, c, c, derive_seed(seed, 1));
  w.key = he_uniform_kernel<S>(1, 1, c, c, derive_seed(seed, 2));
  w.value = he_uniform_kernel<S>(1, 1, c, c, derive_seed(seed, 3));
  w.alpha = Tensor<S>(Shape{1});
  Rng rng(derive_seed(seed, 4));
  w.coupling = rng.uniform_tensor<S>(Shape{c, c}, -0.01, 0.01);
  for (int k = 0; k < c; ++k) w.coupling.at(k, k) += S(1);
  w.gate_weight = he_uniform_kernel<S>(1, 1, c, c, derive_seed(seed, 5));
  w.gate_bias = Tensor<S>(Shape{c});
  w.update = {he_uniform_kernel<S>(1, 1, 2 * c, c, derive_seed(seed, 6)), Tensor<S>(Shape{c})};
  w.reset = {he_uniform_kernel<S>(1, 1, 2 * c, c, derive_seed(seed, 7)), Tensor<S>(Shape{c})};
  w.candidate = {he_uniform_kernel<S>(1, 1, 2 * c, c, derive_seed(seed, 8)), Tensor<S>(Shape{c})};
  return w;
}

template <typename S>
Var<S> intra_attention(const Var<S>& h, const AttentionWeights<Var<S>>& w) {
  require_grid(h.shape(), "intra_attention");
  const Var<S> q = flatten(conv2d(h, w.query));
  const Var<S> k = flatten(conv2d(h, w.key));
  const Var<S> v = flatten(conv2d(h, w.value));
  const Var<S> weights = row_softmax(matmul(q, transpose(k)));
  const Var<S> context = reshape(matmul(weights, v), h.shape());
  return add(scalar_scale(context, w.alpha), h);
}

template <typename S>
std::pair<Var<S>, Var<S>> inter_attention(const Var<S>& h_i, const Var<S>& h_j, const Var<S>& coupling) {
  require_grid(h_i.shape(), "inter_attention");
  if (h_i.shape() != h_j.shape()) {
    throw ShapeError("inter_attention: node shapes differ " + h_i.shape().str() + " vs " + h_j.shape().str());
  }
  // Only the symmetric part of W_c is used, so every ordered pair sees the
  // same bilinear form and node relabelling permutes the outputs.
  const Var<S> half = coupling.tape().leaf(Tensor<S>(Shape{1}, S(0.5)));
  const Var<S> symmetric = scalar_scale(add(coupling, transpose(coupling)), half);
  const Var<S> e_ij = matmul(matmul(flatten(h_i), symmetric), transpose(flatten(h_j)));
  return {e_ij, transpose(e_ij)};
}

template <typename S>
Var<S> neighbor_message(const Var<S>& h_j, const Var<S>& edge_ij) {
  require_grid(h_j.shape(), "neighbor_message");
  return reshape(matmul(row_softmax(edge_ij), flatten(h_j)), h_j.shape());
}

template <typename S>
Var<S> message_gate(const Var<S>& message, const AttentionWeights<Var<S>>& w) {
  return sigmoid(global_avg_pool(conv2d(message, w.gate_weight, w.gate_bias)));
}

template <typename S>
Var<S> aggregate_messages(std::span<const Var<S>> messages, std::span<const Var<S>> gates) {
  if (messages.empty() || messages.size() != gates.size()) {
    throw ShapeError("aggregate_messages: " + std::to_string(messages.size()) + " messages but " +
                     std::to_string(gates.size()) + " gates");
  }
  Var<S> total = channel_broadcast_mul(messages[0], gates[0]);
  for (std::size_t j = 1; j < messages.size(); ++j) total = add(total, channel_broadcast_mul(messages[j], gates[j]));
  return total;
}

template <typename S>
Var<S> convgru_update(const Var<S>& h_prev, const Var<S>& message, const AttentionWeights<Var<S>>& w) {
  if (h_prev.shape() != message.shape()) {
    throw ShapeError("convgru_update: state " + h_prev.shape().str() + " vs message " + message.shape().str());
  }
  const Var<S> joint = concat_channels(h_prev, message);
  const Var<S> z = sigmoid(conv2d(joint, w.update.weight, w.update.bias));
  const Var<S> r = sigmoid(conv2d(joint, w.reset.weight, w.reset.bias));
  const Var<S> candidate =
      tanh(conv2d(concat_channels(mul(r, h_prev), message), w.candidate.weight, w.candidate.bias));
  const Var<S> keep = sub(h_prev.tape().leaf(Tensor<S>::constant(z.shape(), S(1))), z);
  return add(mul(keep, h_prev), mul(z, candidate));
}

template <typename S>
std::vector<Var<S>> propagate_round(std::span<const Var<S>> states, const AttentionWeights<Var<S>>& w,
                                    const GraphOptions& options, RoundTrace<S>* trace) {
  const std::size_t n = states.size();
  if (n == 0) throw ShapeError("propagate_round: empty graph");
  for (const Var<S>& h : states) {
    require_grid(h.shape(), "propagate_round");
    if (h.shape() != states[0].shape()) {
      throw ShapeError("propagate_round: inconsistent node shapes " + states[0].shape().str() + " vs " +
                       h.shape().str());
    }
  }

  // messages[i][j] = m_{j,i}, the message node i receives from node j.
  std::vector<std::vector<Var<S>>> messages(n, std::vector<Var<S>>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const Var<S> loop = intra_attention(states[i], w);
    messages[i][i] = loop_message(loop);
    if (trace) trace->loop_edges.push_back(loop);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto [e_ij, e_ji] = inter_attention(states[i], states[j], w.coupling);
      messages[i][j] = neighbor_message(states[j], e_ij);
      messages[j][i] = neighbor_message(states[i], e_ji);
      if (trace) {
        trace->line_edges.push_back({i, j, e_ij, row_softmax(e_ij)});
        trace->line_edges.push_back({j, i, e_ji, row_softmax(e_ji)});
      }
    }
  }

  std::vector<Var<S>> next;
  next.reserve(n);
  if (trace) trace->gates.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    Var<S> incoming;
    if (options.gated) {
      std::vector<Var<S>> gates;
      for (std::size_t j = 0; j < n; ++j) gates.push_back(message_gate(messages[i][j], w));
      incoming = aggregate_messages<S>(messages[i], gates);
      if (trace) trace->gates[i] = gates;
    } else {
      incoming = messages[i][0];
      for (std::size_t j = 1; j < n; ++j) incoming = add(incoming, messages[i][j]);
    }
    next.push_back(convgru_update(states[i], incoming, w));
  }
  return next;
}

template <typename S>
std::vector<Var<S>> run_graph(std::span<const Var<S>> states, const AttentionWeights<Var<S>>& w,
                              const GraphOptions& options, std::vector<RoundTrace<S>>* traces) {
  if (options.iterations < 1) {
    throw std::invalid_argument("run_graph: K must be at least 1, got " + std::to_string(options.iterations));
  }
  std::vector<Var<S>> current(states.begin(), states.end());
  for (int k = 0; k < options.iterations; ++k) {
    RoundTrace<S>* trace = nullptr;
    if (traces) trace = &traces->emplace_back();
    current = propagate_round<S>(current, w, options, trace);
  }
  return current;
}

#define AGNN_INSTANTIATE_MP(S)                                                                              \
  template AttentionWeights<Tensor<S>> init_attention<S>(int, std::uint64_t);                               \
  template Var<S> intra_attention<S>(const Var<S>&, const AttentionWeights<Var<S>>&);                       \
  template std::pair<Var<S>, Var<S>> inter_attention<S>(const Var<S>&, const Var<S>&, const Var<S>&);       \
  template Var<S> neighbor_message<S>(const Var<S>&, const Var<S>&);                                        \
  template Var<S> message_gate<S>(const Var<S>&, const AttentionWeights<Var<S>>&);                          \
  template Var<S> aggregate_messages<S>(std::span<const Var<S>>, std::span<const Var<S>>);                  \
  template Var<S> convgru_update<S>(const Var<S>&, const Var<S>&, const AttentionWeights<Var<S>>&);         \
  template std::vector<Var<S>> propagate_round<S>(std::span<const Var<S>>, const AttentionWeights<Var<S>>&, \
                                                  const GraphOptions&, RoundTrace<S>*);                     \
  template std::vector<Var<S>> run_graph<S>(std::span<const Var<S>>, const AttentionWeights<Var<S>>&,       \
                                            const GraphOptions&, std::vector<RoundTrace<S>>*);

AGNN_INSTANTIATE_MP(double)
AGNN_INSTANTIATE_MP(float)

#undef AGNN_INSTANTIATE_MP

}  // namespace agnn
