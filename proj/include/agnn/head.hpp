#pragma once

#include <cstdint>

#include "agnn/weights.hpp"

namespace agnn {

/// Readout FCN: two 3x3 conv+relu layers and a 1x1 conv with sigmoid.
template <typename T>
struct ReadoutWeights {
  ConvWeights<T> conv1, conv2, predict;

  template <typename A, typename B, typename F>
  static void zip(const std::string& prefix, A& a, B& b, F& f) {
    ConvWeights<T>::zip(join_name(prefix, "conv1"), a.conv1, b.conv1, f);
    ConvWeights<T>::zip(join_name(prefix, "conv2"), a.conv2, b.conv2, f);
    ConvWeights<T>::zip(join_name(prefix, "predict"), a.predict, b.predict, f);
  }
};

/// 1x1 conv + sigmoid on the encoder output, used by static-image iterations.
template <typename T>
struct AuxHeadWeights {
  ConvWeights<T> predict;

  template <typename A, typename B, typename F>
  static void zip(const std::string& prefix, A& a, B& b, F& f) {
    ConvWeights<T>::zip(join_name(prefix, "predict"), a.predict, b.predict, f);
  }
};

template <typename S>
ReadoutWeights<Tensor<S>> init_readout(int channels, int hidden, std::uint64_t seed);

template <typename S>
AuxHeadWeights<Tensor<S>> init_aux_head(int channels, std::uint64_t seed);

/// Foreground map [H,W] in [0,1] from the final state and the initial embedding.
template <typename S>
Var<S> readout(const Var<S>& final_state, const Var<S>& initial_state, const ReadoutWeights<Var<S>>& w);

template <typename S>
Var<S> aux_static_predict(const Var<S>& initial_state, const AuxHeadWeights<Var<S>>& w);

struct LossStats {
  double loss = 0;
  double eta = 0;  // clamped foreground fraction of the ground truth
};

/// Class-balanced BCE of a prediction against a binary ground truth, without a tape.
template <typename S>
LossStats weighted_bce_stats(const Tensor<S>& target, const Tensor<S>& prediction);

}  // namespace agnn
