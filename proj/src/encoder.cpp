#include "agnn/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "agnn/rng.hpp"

namespace agnn {

void EncoderConfig::validate() const {
  if (downsample != 4 && downsample != 8) {
    throw std::invalid_argument("encoder downsample must be 4 or 8, got " + std::to_string(downsample));
  }
  if (channels < 1) throw std::invalid_argument("encoder channels must be positive");
}

std::array<int, 3> EncoderConfig::widths() const { return {std::max(channels / 2, 2), channels, channels}; }

std::array<int, 3> EncoderConfig::strides() const { return {2, 2, downsample == 8 ? 2 : 1}; }

Shape EncoderConfig::output_shape(int height, int width) const {
  validate();
  if (height <= 0 || width <= 0 || height % downsample != 0 || width % downsample != 0) {
    throw ShapeError("frame " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by the encoder downsample factor " + std::to_string(downsample));
  }
  return Shape{height / downsample, width / downsample, channels};
}

template <typename S>
Tensor<S> he_uniform_kernel(int kh, int kw, int cin, int cout, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / (kh * kw * cin));
  return rng.uniform_tensor<S>(Shape{kh, kw, cin, cout}, -bound, bound);
}

template <typename S>
EncoderWeights<Tensor<S>> init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  const auto w = config.widths();
  auto layer = [&](int k, int cin, int cout, std::uint64_t stream) {
    return ConvWeights<Tensor<S>>{he_uniform_kernel<S>(k, k, cin, cout, derive_seed(seed, stream)),
                                  Tensor<S>(Shape{cout})};
  };
  EncoderWeights<Tensor<S>> out;
  out.conv1 = layer(3, 3, w[0], 1);
  out.conv2 = layer(3, w[0], w[1], 2);
  out.conv3 = layer(3, w[1], w[2], 3);
  out.project = layer(1, w[2], config.channels, 4);
  return out;
}

template <typename S>
Var<S> encode(const Var<S>& frame, const EncoderWeights<Var<S>>& weights, const EncoderConfig& config) {
  const Shape& in = frame.shape();
  if (in.rank != 3 || in[2] != 3) throw ShapeError("encode: frame must be [H,W,3], got " + in.str());
  config.output_shape(in[0], in[1]);
  const auto s = config.strides();
  Var<S> x = relu(conv2d(frame, weights.conv1.weight, weights.conv1.bias, s[0]));
  x = relu(conv2d(x, weights.conv2.weight, weights.conv2.bias, s[1]));
  x = relu(conv2d(x, weights.conv3.weight, weights.conv3.bias, s[2]));
  return conv2d(x, weights.project.weight, weights.project.bias, 1);
}

#define AGNN_INSTANTIATE_ENCODER(S)                                                          \
  template Tensor<S> he_uniform_kernel<S>(int, int, int, int, std::uint64_t);                \
  template EncoderWeights<Tensor<S>> init_encoder<S>(const EncoderConfig&, std::uint64_t);   \
  template Var<S> encode<S>(const Var<S>&, const EncoderWeights<Var<S>>&, const EncoderConfig&);

AGNN_INSTANTIATE_ENCODER(double)
AGNN_INSTANTIATE_ENCODER(float)

#undef AGNN_INSTANTIATE_ENCODER

}  // namespace agnn
