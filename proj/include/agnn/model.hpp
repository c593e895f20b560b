#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "agnn/encoder.hpp"
#include "agnn/head.hpp"
#include "agnn/message_passing.hpp"

namespace agnn {

struct ModelConfig {
  EncoderConfig encoder;
  GraphOptions graph;
  int readout_hidden = 0;  // 0 selects max(C/2, 2)

  int channels() const { return encoder.channels; }
  int hidden() const { return readout_hidden > 0 ? readout_hidden : std::max(encoder.channels / 2, 2); }
};

/// Every learnable tensor of the model; shared across nodes and graphs.
template <typename T>
struct ModelWeights {
  EncoderWeights<T> encoder;
  AttentionWeights<T> attention;
  ReadoutWeights<T> readout;
  AuxHeadWeights<T> aux;

  template <typename A, typename B, typename F>
  static void zip(const std::string& prefix, A& a, B& b, F& f) {
    EncoderWeights<T>::zip(join_name(prefix, "encoder"), a.encoder, b.encoder, f);
    AttentionWeights<T>::zip(join_name(prefix, "attention"), a.attention, b.attention, f);
    ReadoutWeights<T>::zip(join_name(prefix, "readout"), a.readout, b.readout, f);
    AuxHeadWeights<T>::zip(join_name(prefix, "aux"), a.aux, b.aux, f);
  }
};

template <typename S>
ModelWeights<Tensor<S>> init_model(const ModelConfig& config, std::uint64_t seed);

/// Encodes each frame, runs K rounds over the fully connected graph of all
/// frames and reads out one foreground map per frame, in input order.
template <typename S>
std::vector<Var<S>> segment_graph(std::span<const Var<S>> frames, const ModelWeights<Var<S>>& weights,
                                  const ModelConfig& config);

/// Tape-free convenience wrapper around segment_graph.
template <typename S>
std::vector<Tensor<S>> predict_graph(std::span<const Tensor<S>> frames, const ModelWeights<Tensor<S>>& weights,
                                     const ModelConfig& config);

}  // namespace agnn
