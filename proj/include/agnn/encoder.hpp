#pragma once

#include <array>
#include <cstdint>

#include "agnn/weights.hpp"

namespace agnn {

/// Toy frame encoder: three 3x3 conv+relu layers followed by a 1x1
/// projection to `channels`. The first two layers use stride 2, the third
/// stride 1 (d = 4) or 2 (d = 8).
struct EncoderConfig {
  int downsample = 4;
  int channels = 32;

  void validate() const;
  std::array<int, 3> widths() const;
  std::array<int, 3> strides() const;
  /// Node-state shape for an input of the given size; rejects sizes not divisible by d.
  Shape output_shape(int height, int width) const;
};

template <typename T>
struct EncoderWeights {
  ConvWeights<T> conv1, conv2, conv3, project;

  template <typename A, typename B, typename F>
  static void zip(const std::string& prefix, A& a, B& b, F& f) {
    ConvWeights<T>::zip(join_name(prefix, "conv1"), a.conv1, b.conv1, f);
    ConvWeights<T>::zip(join_name(prefix, "conv2"), a.conv2, b.conv2, f);
    ConvWeights<T>::zip(join_name(prefix, "conv3"), a.conv3, b.conv3, f);
    ConvWeights<T>::zip(join_name(prefix, "project"), a.project, b.project, f);
  }
};

/// He-style fan-in uniform kernels, zero biases. Deterministic in (config, seed).
template <typename S>
EncoderWeights<Tensor<S>> init_encoder(const EncoderConfig& config, std::uint64_t seed);

/// Maps an [H_in, W_in, 3] frame to the initial node state [H_in/d, W_in/d, C].
template <typename S>
Var<S> encode(const Var<S>& frame, const EncoderWeights<Var<S>>& weights, const EncoderConfig& config);

/// He-style uniform initialisation of a conv kernel [kh,kw,Cin,Cout].
template <typename S>
Tensor<S> he_uniform_kernel(int kh, int kw, int cin, int cout, std::uint64_t seed);

}  // namespace agnn
