#pragma once

#include <string>
#include <type_traits>
#include <utility>

#include "agnn/autodiff.hpp"

namespace agnn {

// Weight bundles are templated on their element type: Tensor<S> for stored
// parameters, Var<S> once bound to a tape. Each bundle exposes a static
// zip(prefix, a, b, f) that walks two instances field by field, calling
// f(name, a.field, b.field) in a fixed order.

inline std::string join_name(const std::string& prefix, const char* field) {
  return prefix.empty() ? std::string(field) : prefix + "." + field;
}

template <typename T>
struct ConvWeights {
  T weight;  // [kh, kw, Cin, Cout]
  T bias;    // [Cout]

  template <typename A, typename B, typename F>
  static void zip(const std::string& prefix, A& a, B& b, F& f) {
    f(join_name(prefix, "weight"), a.weight, b.weight);
    f(join_name(prefix, "bias"), a.bias, b.bias);
  }
};

/// Calls f(name, field) for every tensor in a bundle.
template <typename W, typename F>
void for_each_field(W& bundle, F&& f) {
  auto visit = [&](const std::string& name, auto& field, auto&) { f(name, field); };
  std::remove_cvref_t<W>::zip(std::string(), bundle, bundle, visit);
}

/// Calls f(name, a_field, b_field) for matching fields of two bundles.
template <typename A, typename B, typename F>
void zip_fields(A& a, B& b, F&& f) {
  std::remove_cvref_t<A>::zip(std::string(), a, b, f);
}

/// Registers every parameter tensor as a leaf on `tape`.
template <typename S, template <typename> class Bundle>
Bundle<Var<S>> bind(Tape<S>& tape, const Bundle<Tensor<S>>& params) {
  Bundle<Var<S>> out;
  zip_fields(out, params, [&](const std::string&, Var<S>& v, const Tensor<S>& t) { v = tape.leaf(t); });
  return out;
}

/// Collects the gradients of a bound bundle into tensors of the same layout.
template <typename S, template <typename> class Bundle>
Bundle<Tensor<S>> gather(const Gradients<S>& grads, const Bundle<Var<S>>& bound) {
  Bundle<Tensor<S>> out;
  zip_fields(out, bound, [&](const std::string&, Tensor<S>& t, const Var<S>& v) { t = grads[v]; });
  return out;
}

}  // namespace agnn
