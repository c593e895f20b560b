#pragma once

#include <string>
#include <vector>

#include "agnn/model.hpp"
#include "agnn/rng.hpp"
#include "oracles.hpp"

namespace support {

using namespace agnn;

/// Model weights moved away from the initial point: every tensor gets
/// uniform noise and alpha becomes nonzero, so no gradient is trivially zero.
inline ModelWeights<Tensor<double>> perturbed_model(const ModelConfig& cfg, std::uint64_t seed, double noise = 0.1) {
  ModelWeights<Tensor<double>> w = init_model<double>(cfg, seed);
  Rng rng(derive_seed(seed, 77));
  for_each_field(w, [&](const std::string&, Tensor<double>& t) {
    for (double& v : t.values()) v += rng.uniform(-noise, noise);
  });
  w.attention.alpha[0] = rng.uniform(0.3, 0.8);
  return w;
}

inline AttentionWeights<Tensor<double>> random_attention(int channels, Rng& rng) {
  AttentionWeights<Tensor<double>> w = init_attention<double>(channels, rng.engine()());
  for_each_field(w, [&](const std::string&, Tensor<double>& t) {
    for (double& v : t.values()) v += rng.uniform(-0.3, 0.3);
  });
  w.alpha[0] = rng.uniform(0.2, 0.9);
  return w;
}

template <template <typename> class Bundle>
std::vector<Tensor<double>> flatten(const Bundle<Tensor<double>>& w) {
  std::vector<Tensor<double>> out;
  for_each_field(w, [&](const std::string&, const Tensor<double>& t) { out.push_back(t); });
  return out;
}

template <template <typename> class Bundle>
std::vector<std::string> field_names(const Bundle<Tensor<double>>& w) {
  std::vector<std::string> out;
  for_each_field(w, [&](const std::string& name, const Tensor<double>&) { out.push_back(name); });
  return out;
}

/// Rebuilds a bound bundle from leaves vars[offset...], in field order.
template <template <typename> class Bundle>
Bundle<Var<double>> rebind(const Bundle<Tensor<double>>& layout, const std::vector<Var<double>>& vars,
                           std::size_t offset = 0) {
  Bundle<Var<double>> out;
  std::size_t k = offset;
  zip_fields(out, layout, [&](const std::string&, Var<double>& v, const Tensor<double>&) { v = vars.at(k++); });
  return out;
}

inline oracle::Gru gru_of(const AttentionWeights<Tensor<double>>& w) {
  return {w.update.weight, w.update.bias, w.reset.weight, w.reset.bias, w.candidate.weight, w.candidate.bias};
}

}  // namespace support
