#include "agnn/head.hpp"

#include "agnn/encoder.hpp"
#include "agnn/rng.hpp"

namespace agnn {

template <typename S>
ReadoutWeights<Tensor<S>> init_readout(int channels, int hidden, std::uint64_t seed) {
  if (channels < 1 || hidden < 1) throw std::invalid_argument("readout channels must be positive");
  ReadoutWeights<Tensor<S>> w;
  w.conv1 = {he_uniform_kernel<S>(3, 3, 2 * channels, hidden, derive_seed(seed, 1)), Tensor<S>(Shape{hidden})};
  w.conv2 = {he_uniform_kernel<S>(3, 3, hidden, hidden, derive_seed(seed, 2)), Tensor<S>(Shape{hidden})};
  w.predict = {he_uniform_kernel<S>(1, 1, hidden, 1, derive_seed(seed, 3)), Tensor<S>(Shape{1})};
  return w;
}

template <typename S>
AuxHeadWeights<Tensor<S>> init_aux_head(int channels, std::uint64_t seed) {
  AuxHeadWeights<Tensor<S>> w;
  w.predict = {he_uniform_kernel<S>(1, 1, channels, 1, derive_seed(seed, 1)), Tensor<S>(Shape{1})};
  return w;
}

template <typename S>
Var<S> readout(const Var<S>& final_state, const Var<S>& initial_state, const ReadoutWeights<Var<S>>& w) {
  if (final_state.shape() != initial_state.shape() || final_state.shape().rank != 3) {
    throw ShapeError("readout: final state " + final_state.shape().str() + " vs initial state " +
                     initial_state.shape().str());
  }
  const Shape& s = final_state.shape();
  Var<S> x = concat_channels(final_state, initial_state);
  x = relu(conv2d(x, w.conv1.weight, w.conv1.bias));
  x = relu(conv2d(x, w.conv2.weight, w.conv2.bias));
  x = sigmoid(conv2d(x, w.predict.weight, w.predict.bias));
  return reshape(x, Shape{s[0], s[1]});
}

template <typename S>
Var<S> aux_static_predict(const Var<S>& initial_state, const AuxHeadWeights<Var<S>>& w) {
  const Shape& s = initial_state.shape();
  if (s.rank != 3) throw ShapeError("aux_static_predict: expected [H,W,C], got " + s.str());
  return reshape(sigmoid(conv2d(initial_state, w.predict.weight, w.predict.bias)), Shape{s[0], s[1]});
}

template <typename S>
LossStats weighted_bce_stats(const Tensor<S>& target, const Tensor<S>& prediction) {
  if (target.shape() != prediction.shape()) {
    throw ShapeError("weighted_bce: " + target.shape().str() + " vs " + prediction.shape().str());
  }
  const Tensor<S>* args[] = {&target, &prediction};
  const Tensor<S> loss = forward_kernel<S>(OpKind::weighted_bce, args, {});
  return {static_cast<double>(loss[0]), static_cast<double>(foreground_weight(target))};
}

#define AGNN_INSTANTIATE_HEAD(S)                                                                      \
  template ReadoutWeights<Tensor<S>> init_readout<S>(int, int, std::uint64_t);                        \
  template AuxHeadWeights<Tensor<S>> init_aux_head<S>(int, std::uint64_t);                            \
  template Var<S> readout<S>(const Var<S>&, const Var<S>&, const ReadoutWeights<Var<S>>&);            \
  template Var<S> aux_static_predict<S>(const Var<S>&, const AuxHeadWeights<Var<S>>&);                \
  template LossStats weighted_bce_stats<S>(const Tensor<S>&, const Tensor<S>&);

AGNN_INSTANTIATE_HEAD(double)
AGNN_INSTANTIATE_HEAD(float)

#undef AGNN_INSTANTIATE_HEAD

}  // namespace agnn
