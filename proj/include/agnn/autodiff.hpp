#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "agnn/tensor.hpp"

namespace agnn {

/// Primitive operations understood by the tape. Every kind has a forward
/// kernel and an exact analytic backward kernel.
enum class OpKind : std::uint8_t {
  leaf,
  conv2d,                 // x[H,W,Cin], w[kh,kw,Cin,Cout] (, b[Cout]); zero "same" padding
  matmul,                 // a[m,k] . b[k,n]
  transpose,              // a[m,n] -> [n,m]
  row_softmax,            // each row of a[m,n] normalised to sum 1
  sigmoid,
  tanh,
  relu,
  global_avg_pool,        // x[H,W,C] -> [C]
  add,
  sub,
  mul,                    // elementwise
  channel_broadcast_mul,  // x[H,W,C] * g[C]
  concat_channels,        // a[H,W,C1], b[H,W,C2] -> [H,W,C1+C2]
  scalar_scale,           // x * s[1]
  reshape,
  weighted_bce,           // (target S, prediction S_hat) -> [1], class-balanced BCE summed over pixels
  average,                // k tensors of equal shape -> their mean
};

std::string_view op_name(OpKind kind);

struct OpAttrs {
  int stride = 1;
  Shape target;  // reshape only
};

struct Record {
  OpKind kind = OpKind::leaf;
  std::vector<std::size_t> inputs;
  std::size_t output = 0;
  OpAttrs attrs;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Output shape of `kind` applied to operands of the given shapes. Throws
/// ShapeError naming the offending dims.
Shape infer_shape(OpKind kind, std::span<const Shape> inputs, const OpAttrs& attrs);

/// Class-balance weight of the weighted BCE: the foreground fraction of a
/// binary ground truth, clamped to [1/n, 1 - 1/n]. Rejects non-binary input.
template <typename Scalar>
Scalar foreground_weight(const Tensor<Scalar>& target);

template <typename Scalar>
Tensor<Scalar> forward_kernel(OpKind kind, std::span<const Tensor<Scalar>* const> inputs,
                              const OpAttrs& attrs);

/// Vector-Jacobian product of one record. Returns one gradient per input, in
/// input order; an empty tensor means the input receives no gradient.
template <typename Scalar>
std::vector<Tensor<Scalar>> backward_kernel(OpKind kind,
                                            std::span<const Tensor<Scalar>* const> inputs,
                                            const Tensor<Scalar>& output,
                                            const Tensor<Scalar>& grad_output,
                                            const OpAttrs& attrs);

template <typename Scalar>
class Var;

/// Append-only record of evaluated operations. Node ids double as record
/// indices, so the records are in topological order by construction.
template <typename Scalar = double>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var<Scalar> leaf(Tensor<Scalar> value) {
    if (!value.all_finite()) throw NonFiniteError("leaf tensor contains non-finite values");
    return Var<Scalar>(this, push(Record{OpKind::leaf, {}, records_.size(), {}}, std::move(value)));
  }

  /// Low-level append. Prefer apply() and the typed op functions.
  std::size_t push(Record record, Tensor<Scalar> value) {
    records_.push_back(std::move(record));
    values_.push_back(std::move(value));
    return records_.size() - 1;
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const Record& record(std::size_t id) const { return records_.at(id); }
  const std::vector<Record>& records() const { return records_; }
  const Tensor<Scalar>& value(std::size_t id) const { return values_.at(id); }

  /// Checks that every record is well formed and only reads earlier nodes.
  void validate() const {
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const Record& r = records_[i];
      if (r.output != i) throw TapeError("record " + std::to_string(i) + " has output id " +
                                         std::to_string(r.output));
      for (std::size_t in : r.inputs) {
        if (in >= i) {
          throw TapeError("record " + std::to_string(i) + " (" + std::string(op_name(r.kind)) +
                          ") reads node " + std::to_string(in) +
                          (in >= records_.size() ? " which is missing" : " which is not earlier"));
        }
      }
      if (r.kind == OpKind::leaf && !r.inputs.empty()) {
        throw TapeError("leaf record " + std::to_string(i) + " has inputs");
      }
    }
  }

  /// Re-evaluates every non-leaf record from the stored leaf values.
  std::vector<Tensor<Scalar>> replay() const {
    validate();
    std::vector<Tensor<Scalar>> out(values_.size());
    std::vector<const Tensor<Scalar>*> args;
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const Record& r = records_[i];
      if (r.kind == OpKind::leaf) {
        out[i] = values_[i];
        continue;
      }
      args.clear();
      for (std::size_t in : r.inputs) args.push_back(&out[in]);
      out[i] = forward_kernel<Scalar>(r.kind, args, r.attrs);
    }
    return out;
  }

 private:
  std::vector<Record> records_;
  std::deque<Tensor<Scalar>> values_;  // deque: Var::value() references survive later pushes
};

/// Handle to a node on a tape.
template <typename Scalar = double>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const {
    if (!tape_) throw TapeError("unbound variable");
    return *tape_;
  }
  std::size_t id() const { return id_; }
  const Tensor<Scalar>& value() const { return tape().value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool bound() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
Var<Scalar> apply(OpKind kind, std::span<const Var<Scalar>> inputs, const OpAttrs& attrs = {}) {
  if (kind == OpKind::leaf) throw TapeError("apply cannot create leaves; use Tape::leaf");
  if (inputs.empty()) throw ShapeError(std::string(op_name(kind)) + ": no inputs");
  Tape<Scalar>& tape = inputs.front().tape();
  std::vector<Shape> shapes;
  std::vector<const Tensor<Scalar>*> args;
  Record rec{kind, {}, tape.size(), attrs};
  for (const Var<Scalar>& v : inputs) {
    if (&v.tape() != &tape) throw TapeError(std::string(op_name(kind)) + ": operands on different tapes");
    const Tensor<Scalar>& t = v.value();
    if (!t.all_finite()) {
      throw NonFiniteError(std::string(op_name(kind)) + ": non-finite input (node " +
                           std::to_string(v.id()) + ")");
    }
    shapes.push_back(t.shape());
    args.push_back(&t);
    rec.inputs.push_back(v.id());
  }
  infer_shape(kind, shapes, attrs);
  Tensor<Scalar> out = forward_kernel<Scalar>(kind, args, attrs);
  return Var<Scalar>(&tape, tape.push(std::move(rec), std::move(out)));
}

template <typename Scalar>
Var<Scalar> apply(OpKind kind, std::initializer_list<Var<Scalar>> inputs, const OpAttrs& attrs = {}) {
  return apply<Scalar>(kind, std::span<const Var<Scalar>>(inputs.begin(), inputs.size()), attrs);
}

/// Gradients of one scalar (or seeded) output with respect to every leaf.
template <typename Scalar = double>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor<Scalar>> grads) : grads_(std::move(grads)) {}

  const Tensor<Scalar>& operator[](const Var<Scalar>& v) const { return at(v.id()); }
  const Tensor<Scalar>& at(std::size_t id) const {
    const Tensor<Scalar>& g = grads_.at(id);
    if (g.empty()) throw TapeError("no gradient retained for node " + std::to_string(id));
    return g;
  }
  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<Tensor<Scalar>> grads_;
};

/// Reverse sweep from `output_id` seeded with `seed`. Leaves that do not
/// influence the output receive zero gradients; intermediate gradients are
/// released as soon as they have been propagated.
template <typename Scalar>
Gradients<Scalar> backward(const Tape<Scalar>& tape, std::size_t output_id, const Tensor<Scalar>& seed) {
  if (tape.empty()) throw TapeError("backward on an empty tape");
  tape.validate();
  if (output_id >= tape.size()) throw TapeError("output node " + std::to_string(output_id) + " is missing");
  if (seed.shape() != tape.value(output_id).shape()) {
    throw ShapeError("seed gradient " + seed.shape().str() + " does not match output " +
                     tape.value(output_id).shape().str());
  }
  std::vector<Tensor<Scalar>> grads(tape.size());
  grads[output_id] = seed;
  std::vector<const Tensor<Scalar>*> args;
  for (std::size_t i = output_id + 1; i-- > 0;) {
    const Record& r = tape.record(i);
    if (r.kind == OpKind::leaf) {
      if (grads[i].empty()) grads[i] = Tensor<Scalar>::zeros(tape.value(i).shape());
      continue;
    }
    if (grads[i].empty()) continue;
    args.clear();
    for (std::size_t in : r.inputs) args.push_back(&tape.value(in));
    std::vector<Tensor<Scalar>> local = backward_kernel<Scalar>(r.kind, args, tape.value(i), grads[i], r.attrs);
    for (std::size_t k = 0; k < r.inputs.size(); ++k) {
      if (local[k].empty()) continue;
      Tensor<Scalar>& acc = grads[r.inputs[k]];
      if (acc.empty()) {
        acc = std::move(local[k]);
      } else {
        acc.flat() += local[k].flat();
      }
    }
    grads[i] = Tensor<Scalar>();
  }
  for (std::size_t i = output_id + 1; i < tape.size(); ++i) {
    if (tape.record(i).kind == OpKind::leaf) grads[i] = Tensor<Scalar>::zeros(tape.value(i).shape());
  }
  return Gradients<Scalar>(std::move(grads));
}

template <typename Scalar>
Gradients<Scalar> backward(const Var<Scalar>& output, const Tensor<Scalar>& seed) {
  return backward(output.tape(), output.id(), seed);
}

/// Backward from a single-element output with seed 1.
template <typename Scalar>
Gradients<Scalar> backward(const Var<Scalar>& output) {
  return backward(output, Tensor<Scalar>::constant(output.shape(), Scalar(1)));
}

// Typed wrappers. All of these record onto the operands' tape.

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, int stride = 1) {
  return apply<S>(OpKind::conv2d, {x, weight}, OpAttrs{stride, {}});
}
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride = 1) {
  return apply<S>(OpKind::conv2d, {x, weight, bias}, OpAttrs{stride, {}});
}
template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) { return apply<S>(OpKind::matmul, {a, b}); }
template <typename S>
Var<S> transpose(const Var<S>& a) { return apply<S>(OpKind::transpose, {a}); }
template <typename S>
Var<S> row_softmax(const Var<S>& a) { return apply<S>(OpKind::row_softmax, {a}); }
template <typename S>
Var<S> sigmoid(const Var<S>& a) { return apply<S>(OpKind::sigmoid, {a}); }
template <typename S>
Var<S> tanh(const Var<S>& a) { return apply<S>(OpKind::tanh, {a}); }
template <typename S>
Var<S> relu(const Var<S>& a) { return apply<S>(OpKind::relu, {a}); }
template <typename S>
Var<S> global_avg_pool(const Var<S>& x) { return apply<S>(OpKind::global_avg_pool, {x}); }
template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) { return apply<S>(OpKind::add, {a, b}); }
template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) { return apply<S>(OpKind::sub, {a, b}); }
template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) { return apply<S>(OpKind::mul, {a, b}); }
template <typename S>
Var<S> channel_broadcast_mul(const Var<S>& x, const Var<S>& g) {
  return apply<S>(OpKind::channel_broadcast_mul, {x, g});
}
template <typename S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) { return apply<S>(OpKind::concat_channels, {a, b}); }
template <typename S>
Var<S> scalar_scale(const Var<S>& x, const Var<S>& s) { return apply<S>(OpKind::scalar_scale, {x, s}); }
template <typename S>
Var<S> reshape(const Var<S>& x, Shape target) { return apply<S>(OpKind::reshape, {x}, OpAttrs{1, target}); }
template <typename S>
Var<S> weighted_bce(const Var<S>& target, const Var<S>& prediction) {
  return apply<S>(OpKind::weighted_bce, {target, prediction});
}
template <typename S>
Var<S> average(std::span<const Var<S>> terms) { return apply<S>(OpKind::average, terms); }

template <typename S>
Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }
template <typename S>
Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }

}  // namespace agnn
