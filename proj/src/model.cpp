#include "agnn/model.hpp"

#include "agnn/rng.hpp"

namespace agnn {

template <typename S>
ModelWeights<Tensor<S>> init_model(const ModelConfig& config, std::uint64_t seed) {
  ModelWeights<Tensor<S>> w;
  w.encoder = init_encoder<S>(config.encoder, derive_seed(seed, 101));
  w.attention = init_attention<S>(config.channels(), derive_seed(seed, 102));
  w.readout = init_readout<S>(config.channels(), config.hidden(), derive_seed(seed, 103));
  w.aux = init_aux_head<S>(config.channels(), derive_seed(seed, 104));
  return w;
}

template <typename S>
std::vector<Var<S>> segment_graph(std::span<const Var<S>> frames, const ModelWeights<Var<S>>& weights,
                                  const ModelConfig& config) {
  std::vector<Var<S>> initial;
  initial.reserve(frames.size());
  for (const Var<S>& f : frames) initial.push_back(encode(f, weights.encoder, config.encoder));
  const std::vector<Var<S>> final_states = run_graph<S>(initial, weights.attention, config.graph);
  std::vector<Var<S>> masks;
  masks.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) masks.push_back(readout(final_states[i], initial[i], weights.readout));
  return masks;
}

template <typename S>
std::vector<Tensor<S>> predict_graph(std::span<const Tensor<S>> frames, const ModelWeights<Tensor<S>>& weights,
                                     const ModelConfig& config) {
  Tape<S> tape;
  const ModelWeights<Var<S>> bound = bind(tape, weights);
  std::vector<Var<S>> inputs;
  for (const Tensor<S>& f : frames) inputs.push_back(tape.leaf(f));
  std::vector<Tensor<S>> out;
  for (const Var<S>& m : segment_graph<S>(inputs, bound, config)) out.push_back(m.value());
  return out;
}

#define AGNN_INSTANTIATE_MODEL(S)                                                                               \
  template ModelWeights<Tensor<S>> init_model<S>(const ModelConfig&, std::uint64_t);                            \
  template std::vector<Var<S>> segment_graph<S>(std::span<const Var<S>>, const ModelWeights<Var<S>>&,           \
                                                const ModelConfig&);                                            \
  template std::vector<Tensor<S>> predict_graph<S>(std::span<const Tensor<S>>, const ModelWeights<Tensor<S>>&, \
                                                   const ModelConfig&);

AGNN_INSTANTIATE_MODEL(double)
AGNN_INSTANTIATE_MODEL(float)

#undef AGNN_INSTANTIATE_MODEL

}  // namespace agnn
