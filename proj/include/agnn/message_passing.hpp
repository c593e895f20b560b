#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "agnn/weights.hpp"

namespace agnn {

/// Learnable tensors of the attentive message-passing machine. One instance
/// is shared by every node and every round.
template <typename T>
struct AttentionWeights {
  T query;             // W_f  [1,1,C,C]
  T key;               // W_h  [1,1,C,C]
  T value;             // W_l  [1,1,C,C]
  T alpha;             // [1], residual scale of the intra-attention
  T coupling;          // W_c  [C,C], inter-attention bilinear form (symmetric part used)
  T gate_weight;       // W_g  [1,1,C,C]
  T gate_bias;         // b_g  [C]
  ConvWeights<T> update;     // z gate,   [1,1,2C,C]
  ConvWeights<T> reset;      // r gate,   [1,1,2C,C]
  ConvWeights<T> candidate;  // h~,       [1,1,2C,C]

  template <typename A, typename B, typename F>
  static void zip(const std::string& prefix, A& a, B& b, F& f) {
    f(join_name(prefix, "query"), a.query, b.query);
    f(join_name(prefix, "key"), a.key, b.key);
    f(join_name(prefix, "value"), a.value, b.value);
    f(join_name(prefix, "alpha"), a.alpha, b.alpha);
    f(join_name(prefix, "coupling"), a.coupling, b.coupling);
    f(join_name(prefix, "gate_weight"), a.gate_weight, b.gate_weight);
    f(join_name(prefix, "gate_bias"), a.gate_bias, b.gate_bias);
    ConvWeights<T>::zip(join_name(prefix, "gru_update"), a.update, b.update, f);
    ConvWeights<T>::zip(join_name(prefix, "gru_reset"), a.reset, b.reset, f);
    ConvWeights<T>::zip(join_name(prefix, "gru_candidate"), a.candidate, b.candidate, f);
  }
};

struct GraphOptions {
  int iterations = 3;  // K
  bool gated = true;   // false replaces every gate by 1 (plain message sum)
};

/// alpha = 0, He-initialised 1x1 kernels, coupling = I + U(-0.01, 0.01), zero biases.
template <typename S>
AttentionWeights<Tensor<S>> init_attention(int channels, std::uint64_t seed);

/// Loop-edge embedding: alpha * softmax(Q K^T) V + h over the (HW) positions of h.
template <typename S>
Var<S> intra_attention(const Var<S>& h, const AttentionWeights<Var<S>>& w);

/// Line-edge embeddings (e_ij, e_ji) of a node pair with W = (W_c + W_c^T) / 2:
/// e_ij = h_i W h_j^T and e_ji = h_j W^T h_i^T, the exact transpose of e_ij.
template <typename S>
std::pair<Var<S>, Var<S>> inter_attention(const Var<S>& h_i, const Var<S>& h_j, const Var<S>& coupling);

/// The loop edge is its own message.
template <typename S>
Var<S> loop_message(const Var<S>& loop_edge) {
  return loop_edge;
}

/// softmax(e_ij) h_j reshaped back to the node grid.
template <typename S>
Var<S> neighbor_message(const Var<S>& h_j, const Var<S>& edge_ij);

/// Channel confidence sigmoid(GAP(W_g * m + b_g)).
template <typename S>
Var<S> message_gate(const Var<S>& message, const AttentionWeights<Var<S>>& w);

/// Gated sum of messages in ascending sender order.
template <typename S>
Var<S> aggregate_messages(std::span<const Var<S>> messages, std::span<const Var<S>> gates);

/// Convolutional GRU state update with 1x1 kernels on [h, m].
template <typename S>
Var<S> convgru_update(const Var<S>& h_prev, const Var<S>& message, const AttentionWeights<Var<S>>& w);

/// Intermediate tensors of one round, exposed for inspection.
template <typename S>
struct RoundTrace {
  struct Edge {
    std::size_t from, to;  // e_{from,to}
    Var<S> embedding;
    Var<S> attention;  // row_softmax(embedding)
  };
  std::vector<Var<S>> loop_edges;
  std::vector<Edge> line_edges;
  std::vector<std::vector<Var<S>>> gates;  // gates[i][j] = g_{j,i}
};

/// One synchronous round: every edge, message and gate is computed from the
/// incoming states, then all nodes update together.
template <typename S>
std::vector<Var<S>> propagate_round(std::span<const Var<S>> states, const AttentionWeights<Var<S>>& w,
                                    const GraphOptions& options, RoundTrace<S>* trace = nullptr);

/// Runs `options.iterations` rounds starting from `states`.
template <typename S>
std::vector<Var<S>> run_graph(std::span<const Var<S>> states, const AttentionWeights<Var<S>>& w,
                              const GraphOptions& options, std::vector<RoundTrace<S>>* traces = nullptr);

}  // namespace agnn
