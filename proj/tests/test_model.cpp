#include <cmath>
#include <numbers>

#include "agnn/grad_check.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"

using namespace agnn;

namespace {

Tensor<double> grid(Rng& rng, int h, int w, int c, double s = 1.0) { return rng.uniform_tensor<double>(Shape{h, w, c}, -s, s); }

}  // namespace

TEST_CASE("encoder initialisation is deterministic in the seed") {
  EncoderConfig cfg;
  const auto a = support::flatten(init_encoder<double>(cfg, 1));
  const auto b = support::flatten(init_encoder<double>(cfg, 1));
  const auto c = support::flatten(init_encoder<double>(cfg, 2));
  CHECK(a == b);
  CHECK(a != c);
  CHECK_THROWS_AS(init_encoder<double>(EncoderConfig{5, 8}, 0), std::invalid_argument);
}

TEST_CASE("encoder output shape and rejection of indivisible frames") {
  Tape<double> tape;
  EncoderConfig cfg;  // d=4, C=32
  const auto w = bind(tape, init_encoder<double>(cfg, 0));
  CHECK(encode(tape.leaf(Tensor<double>(Shape{64, 64, 3})), w, cfg).shape() == Shape{16, 16, 32});
  CHECK(EncoderConfig{8, 256}.output_shape(480, 480) == Shape{60, 60, 256});
  CHECK_THROWS_AS(encode(tape.leaf(Tensor<double>(Shape{30, 32, 3})), w, cfg), ShapeError);

  EncoderConfig eight{8, 8};
  Tape<double> t8;
  const auto w8 = bind(t8, init_encoder<double>(eight, 0));
  CHECK(encode(t8.leaf(Tensor<double>(Shape{32, 48, 3})), w8, eight).shape() == Shape{4, 6, 8});
}

TEST_CASE("zero frame propagates biases only") {
  EncoderConfig cfg{4, 4};
  auto params = init_encoder<double>(cfg, 0);
  Rng rng(1);
  for (auto* b : {&params.conv1.bias, &params.conv2.bias, &params.conv3.bias, &params.project.bias})
    *b = rng.uniform_tensor<double>(b->shape(), -1, 1);
  Tape<double> tape;
  const Tensor<double> out = encode(tape.leaf(Tensor<double>(Shape{8, 8, 3})), bind(tape, params), cfg).value();
  // Zero padding makes the border cells differ, so follow the biases by hand with the oracle conv.
  Tensor<double> x(Shape{8, 8, 3});
  const auto s = cfg.strides();
  auto relu = [](Tensor<double> t) {
    for (double& v : t.values()) v = std::max(v, 0.0);
    return t;
  };
  x = relu(oracle::conv2d(x, params.conv1.weight, &params.conv1.bias, s[0]));
  x = relu(oracle::conv2d(x, params.conv2.weight, &params.conv2.bias, s[1]));
  x = relu(oracle::conv2d(x, params.conv3.weight, &params.conv3.bias, s[2]));
  x = oracle::conv2d(x, params.project.weight, &params.project.bias, 1);
  CHECK(max_abs_diff(out, x) < 1e-12);
}

TEST_CASE("constant gray frame gives a spatially constant interior") {
  EncoderConfig cfg{4, 8};
  Tape<double> tape;
  const auto w = bind(tape, init_encoder<double>(cfg, 3));
  const Tensor<double> out = encode(tape.leaf(Tensor<double>(Shape{64, 64, 3}, 0.5)), w, cfg).value();
  // Cells whose receptive field stays clear of the zero padding.
  double spread = 0;
  for (int y = 2; y < 14; ++y)
    for (int x = 2; x < 14; ++x)
      for (int c = 0; c < 8; ++c) spread = std::max(spread, std::abs(out.at(y, x, c) - out.at(2, 2, c)));
  CHECK(spread < 1e-12);
}

TEST_CASE("intra-attention closed cases and oracle") {
  Rng rng(4);
  auto w = support::random_attention(3, rng);
  const Tensor<double> h = grid(rng, 2, 2, 3);
  SUBCASE("alpha = 0 is the identity") {
    w.alpha[0] = 0;
    Tape<double> tape;
    const Var<double> hv = tape.leaf(h);
    const Var<double> loop = intra_attention(hv, bind(tape, w));
    CHECK(loop.value() == h);
    CHECK(loop_message(loop).value() == h);
  }
  SUBCASE("single position") {
    const Tensor<double> one = grid(rng, 1, 1, 3);
    Tape<double> tape;
    const Tensor<double> got = intra_attention(tape.leaf(one), bind(tape, w)).value();
    for (int c = 0; c < 3; ++c) CHECK(got[c] == doctest::Approx(w.alpha[0] * oracle::pointwise(one, 0, w.value, c) + one[c]));
  }
  SUBCASE("explicit loops") {
    w.alpha[0] = 1;
    Tape<double> tape;
    const Tensor<double> got = intra_attention(tape.leaf(h), bind(tape, w)).value();
    CHECK(max_abs_diff(got, oracle::intra_attention(h, w.query, w.key, w.value, 1.0)) < 1e-9);
  }
}

TEST_CASE("inter-attention closed cases and oracle") {
  Rng rng(5);
  const Tensor<double> h = grid(rng, 1, 3, 2);
  Tape<double> tape;
  const Var<double> hv = tape.leaf(h);
  Tensor<double> eye(Shape{2, 2});
  eye.at(0, 0) = eye.at(1, 1) = 1;
  const auto [e, et] = inter_attention(hv, hv, tape.leaf(eye));
  for (int p = 0; p < 3; ++p)
    for (int q = 0; q < 3; ++q) {
      const double gram = h[p * 2] * h[q * 2] + h[p * 2 + 1] * h[q * 2 + 1];
      CHECK(e.value().at(p, q) == doctest::Approx(gram).epsilon(1e-14));
      CHECK(e.value().at(p, q) == e.value().at(q, p));
    }
  const Tensor<double> wc = rng.uniform_tensor<double>(Shape{2, 2}, -1, 1);
  const Var<double> zero = tape.leaf(Tensor<double>(Shape{1, 3, 2}));
  CHECK(inter_attention(zero, hv, tape.leaf(wc)).first.value() == Tensor<double>(Shape{3, 3}));

  const Tensor<double> h2 = grid(rng, 1, 3, 2);
  const auto [a, b] = inter_attention(hv, tape.leaf(h2), tape.leaf(wc));
  CHECK(oracle::max_abs_diff(oracle::inter_attention(h, h2, wc), a.value()) < 1e-12);
  CHECK(b.value() == transpose(a).value());
}

TEST_CASE("neighbor message limits and oracle") {
  Rng rng(6);
  const Tensor<double> hj = grid(rng, 2, 2, 3);
  Tape<double> tape;
  const Var<double> hv = tape.leaf(hj);
  const Tensor<double> uniform = neighbor_message(hv, tape.leaf(Tensor<double>(Shape{4, 4}))).value();
  for (int p = 0; p < 4; ++p)
    for (int c = 0; c < 3; ++c) {
      double mean = 0;
      for (int q = 0; q < 4; ++q) mean += hj[q * 3 + c] / 4;
      CHECK(uniform[p * 3 + c] == doctest::Approx(mean).epsilon(1e-14));
    }
  Tensor<double> onehot(Shape{4, 4});
  const int pick[] = {2, 0, 3, 3};
  for (int p = 0; p < 4; ++p) onehot.at(p, pick[p]) = 1e6;
  const Tensor<double> sel = neighbor_message(hv, tape.leaf(onehot)).value();
  for (int p = 0; p < 4; ++p)
    for (int c = 0; c < 3; ++c) CHECK(std::abs(sel[p * 3 + c] - hj[pick[p] * 3 + c]) < 1e-9);

  const Tensor<double> e = rng.uniform_tensor<double>(Shape{4, 4}, -2, 2);
  std::vector<std::vector<double>> ev(4, std::vector<double>(4));
  for (int p = 0; p < 4; ++p)
    for (int q = 0; q < 4; ++q) ev[p][q] = e.at(p, q);
  CHECK(max_abs_diff(neighbor_message(hv, tape.leaf(e)).value(), oracle::neighbor_message(hj, ev)) < 1e-12);
}

TEST_CASE("message gate limits and oracle") {
  Rng rng(7);
  auto w = support::random_attention(3, rng);
  Tape<double> tape;
  w.gate_bias = Tensor<double>(Shape{3});
  const Var<double> zero = tape.leaf(Tensor<double>(Shape{2, 2, 3}));
  CHECK(message_gate(zero, bind(tape, w)).value() == Tensor<double>(Shape{3}, 0.5));
  w.gate_bias = Tensor<double>(Shape{3}, 50.0);
  for (double g : message_gate(zero, bind(tape, w)).value().values()) CHECK(std::abs(g - 1) < 1e-9);
  w = support::random_attention(3, rng);
  const Tensor<double> m = grid(rng, 2, 3, 3);
  CHECK(max_abs_diff(message_gate(tape.leaf(m), bind(tape, w)).value(), oracle::message_gate(m, w.gate_weight, w.gate_bias)) <
        1e-12);
}

TEST_CASE("aggregation cases and oracle") {
  Rng rng(8);
  Tape<double> tape;
  std::vector<Tensor<double>> mt, gt;
  std::vector<Var<double>> m, g;
  for (int j = 0; j < 3; ++j) {
    mt.push_back(grid(rng, 2, 2, 2));
    gt.push_back(rng.uniform_tensor<double>(Shape{2}, 0, 1));
    m.push_back(tape.leaf(mt.back()));
    g.push_back(tape.leaf(gt.back()));
  }
  CHECK(max_abs_diff(aggregate_messages<double>(m, g).value(), oracle::aggregate(mt, gt)) < 1e-12);
  const std::vector<Var<double>> ones(3, tape.leaf(Tensor<double>(Shape{2}, 1.0)));
  Tensor<double> sum = mt[0];
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += mt[1][i] + mt[2][i];
  CHECK(max_abs_diff(aggregate_messages<double>(m, ones).value(), sum) < 1e-15);
  const std::vector<Var<double>> single_m{m[0]}, single_g{g[0]};
  CHECK(aggregate_messages<double>(single_m, single_g).value() == channel_broadcast_mul(m[0], g[0]).value());
  CHECK_THROWS_AS(aggregate_messages<double>(m, single_g), ShapeError);
}

TEST_CASE("ConvGRU saturation and oracle") {
  Rng rng(9);
  auto w = support::random_attention(2, rng);
  const Tensor<double> h = grid(rng, 2, 2, 2), m = grid(rng, 2, 2, 2);
  {
    Tape<double> tape;
    CHECK(max_abs_diff(convgru_update(tape.leaf(h), tape.leaf(m), bind(tape, w)).value(),
                       oracle::convgru(h, m, support::gru_of(w))) < 1e-12);
  }
  w.update.bias = Tensor<double>(Shape{2}, -50.0);
  {
    Tape<double> tape;
    CHECK(max_abs_diff(convgru_update(tape.leaf(h), tape.leaf(m), bind(tape, w)).value(), h) < 1e-9);
  }
  w.update.bias = Tensor<double>(Shape{2}, 50.0);
  {
    Tape<double> tape;
    const Tensor<double> got = convgru_update(tape.leaf(h), tape.leaf(m), bind(tape, w)).value();
    oracle::Gru g = support::gru_of(w);
    g.bz = Tensor<double>(Shape{2}, 1e3);  // z == 1 exactly in the oracle
    CHECK(max_abs_diff(got, oracle::convgru(h, m, g)) < 1e-9);
  }
}

namespace {

// One round computed entirely with the explicit-loop oracles.
std::vector<Tensor<double>> oracle_round(const std::vector<Tensor<double>>& h, const AttentionWeights<Tensor<double>>& w) {
  const std::size_t n = h.size();
  std::vector<Tensor<double>> next;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Tensor<double>> msgs, gates;
    for (std::size_t j = 0; j < n; ++j) {
      msgs.push_back(j == i ? oracle::intra_attention(h[i], w.query, w.key, w.value, w.alpha[0])
                            : oracle::neighbor_message(h[j], oracle::inter_attention(h[i], h[j], w.coupling)));
      gates.push_back(oracle::message_gate(msgs.back(), w.gate_weight, w.gate_bias));
    }
    next.push_back(oracle::convgru(h[i], oracle::aggregate(msgs, gates), support::gru_of(w)));
  }
  return next;
}

}  // namespace

TEST_CASE("rounds match the scalar reference") {
  Rng rng(10);
  const auto w = support::random_attention(3, rng);
  std::vector<Tensor<double>> h;
  for (int i = 0; i < 3; ++i) h.push_back(grid(rng, 2, 2, 3));
  Tape<double> tape;
  const auto bw = bind(tape, w);
  std::vector<Var<double>> states;
  for (const auto& t : h) states.push_back(tape.leaf(t));

  const auto one = propagate_round<double>(states, bw, GraphOptions{});
  const auto ref1 = oracle_round(h, w);
  for (int i = 0; i < 3; ++i) CHECK(max_abs_diff(one[i].value(), ref1[i]) < 1e-9);

  const auto k1 = run_graph<double>(states, bw, GraphOptions{1, true});
  for (int i = 0; i < 3; ++i) CHECK(k1[i].value() == one[i].value());

  const auto k2 = run_graph<double>(states, bw, GraphOptions{2, true});
  const auto ref2 = oracle_round(ref1, w);
  for (int i = 0; i < 3; ++i) CHECK(max_abs_diff(k2[i].value(), ref2[i]) < 1e-9);

  CHECK_THROWS_AS(run_graph<double>(states, bw, GraphOptions{0, true}), std::invalid_argument);
}

TEST_CASE("single node and duplicated nodes") {
  Rng rng(11);
  const auto w = support::random_attention(2, rng);
  const Tensor<double> h = grid(rng, 2, 2, 2), other = grid(rng, 2, 2, 2);
  Tape<double> tape;
  const auto bw = bind(tape, w);
  const std::vector<Var<double>> single{tape.leaf(h)};
  const Tensor<double> loop = oracle::intra_attention(h, w.query, w.key, w.value, w.alpha[0]);
  const Tensor<double> gated = oracle::aggregate({loop}, {oracle::message_gate(loop, w.gate_weight, w.gate_bias)});
  CHECK(max_abs_diff(propagate_round<double>(single, bw, GraphOptions{})[0].value(),
                     oracle::convgru(h, gated, support::gru_of(w))) < 1e-12);

  const std::vector<Var<double>> dup{tape.leaf(h), tape.leaf(other), tape.leaf(h)};
  const auto out = run_graph<double>(dup, bw, GraphOptions{3, true});
  CHECK(max_abs_diff(out[0].value(), out[2].value()) < 1e-12);
}

TEST_CASE("ungated rounds sum messages") {
  Rng rng(12);
  const auto w = support::random_attention(2, rng);
  std::vector<Tensor<double>> h{grid(rng, 1, 2, 2), grid(rng, 1, 2, 2)};
  Tape<double> tape;
  const auto bw = bind(tape, w);
  std::vector<Var<double>> states{tape.leaf(h[0]), tape.leaf(h[1])};
  const auto out = propagate_round<double>(states, bw, GraphOptions{1, false});
  const Tensor<double> m0 = oracle::intra_attention(h[0], w.query, w.key, w.value, w.alpha[0]);
  const Tensor<double> m1 = oracle::neighbor_message(h[1], oracle::inter_attention(h[0], h[1], w.coupling));
  const Tensor<double> ones(Shape{2}, 1.0);
  CHECK(max_abs_diff(out[0].value(), oracle::convgru(h[0], oracle::aggregate({m0, m1}, {ones, ones}), support::gru_of(w))) <
        1e-12);
}

TEST_CASE("gradients through a two-round stack") {
  Rng rng(13);
  const auto w = support::random_attention(2, rng);
  const auto params = support::flatten(w);
  std::vector<Tensor<double>> inputs = params;
  for (int i = 0; i < 3; ++i) inputs.push_back(grid(rng, 2, 2, 2));
  const Tensor<double> r = rng.uniform_tensor<double>(Shape{1, 24}, -1, 1);
  auto fn = [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
    const auto bw = support::rebind(w, v);
    const std::vector<Var<double>> states(v.end() - 3, v.end());
    const auto out = run_graph<double>(states, bw, GraphOptions{2, true});
    const Var<double> cat = concat_channels(concat_channels(out[0], out[1]), out[2]);
    return reshape(matmul(tape.leaf(r), reshape(cat, Shape{24, 1})), Shape{1});
  };
  const GradCheckReport rep = grad_check<double>(fn, inputs);
  for (double e : rep.per_input_norm_rel_err) CHECK(e < 1e-4);
}

TEST_CASE("readout and aux head") {
  Rng rng(14);
  auto w = init_readout<double>(8, 4, 1);
  const Tensor<double> hk = grid(rng, 4, 4, 8), v = grid(rng, 4, 4, 8);
  {
    Tape<double> tape;
    const Tensor<double> s = readout(tape.leaf(hk), tape.leaf(v), bind(tape, w)).value();
    CHECK(s.shape() == Shape{4, 4});
    for (double p : s.values()) CHECK((p >= 0 && p <= 1));
    // Explicit conv stack.
    const Tensor<double> cat = [&] {
      Tensor<double> c(Shape{4, 4, 16});
      for (int p = 0; p < 16; ++p)
        for (int k = 0; k < 8; ++k) {
          c[p * 16 + k] = hk[p * 8 + k];
          c[p * 16 + 8 + k] = v[p * 8 + k];
        }
      return c;
    }();
    auto relu = [](Tensor<double> t) {
      for (double& x : t.values()) x = std::max(x, 0.0);
      return t;
    };
    Tensor<double> x = relu(oracle::conv2d(cat, w.conv1.weight, &w.conv1.bias, 1));
    x = relu(oracle::conv2d(x, w.conv2.weight, &w.conv2.bias, 1));
    x = oracle::conv2d(x, w.predict.weight, &w.predict.bias, 1);
    for (int p = 0; p < 16; ++p) CHECK(std::abs(s[p] - 1 / (1 + std::exp(-x[p]))) < 1e-9);
  }
  for_each_field(w, [](const std::string&, Tensor<double>& t) { t = Tensor<double>(t.shape()); });
  {
    Tape<double> tape;
    CHECK(readout(tape.leaf(hk), tape.leaf(v), bind(tape, w)).value() == Tensor<double>(Shape{4, 4}, 0.5));
  }
  auto aux = init_aux_head<double>(8, 2);
  aux.predict.bias[0] = 0.3;
  {
    Tape<double> tape;
    const Tensor<double> s = aux_static_predict(tape.leaf(hk), bind(tape, aux)).value();
    for (int p = 0; p < 16; ++p) {
      const double z = oracle::pointwise(hk, p, aux.predict.weight, 0) + 0.3;
      CHECK(std::abs(s[p] - 1 / (1 + std::exp(-z))) < 1e-12);
    }
  }
}

TEST_CASE("weighted BCE values and gradient") {
  const Tensor<double> half(Shape{2, 2}, {1, 1, 0, 0});
  CHECK(weighted_bce_stats(half, Tensor<double>(Shape{2, 2}, 0.5)).loss == doctest::Approx(2 * std::numbers::ln2).epsilon(1e-12));
  CHECK(weighted_bce_stats(half, half).loss <= 4 * 1e-11);
  const LossStats bg = weighted_bce_stats(Tensor<double>(Shape{3, 3}), Tensor<double>(Shape{3, 3}, 0.5));
  CHECK(bg.eta == doctest::Approx(1.0 / 9));
  CHECK(std::abs(bg.loss - std::numbers::ln2) < 1e-9);

  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> s(Shape{3, 4});
    for (double& v : s.values()) v = rng.bernoulli(0.3) ? 1 : 0;
    const Tensor<double> p = rng.uniform_tensor<double>(Shape{3, 4}, 0.01, 0.99);
    Tape<double> tape;
    const Var<double> pv = tape.leaf(p);
    const Var<double> loss = weighted_bce(tape.leaf(s), pv);
    CHECK(loss.value()[0] >= 0);
    CHECK(std::abs(loss.value()[0] - oracle::weighted_bce(s, p)) < 1e-12);
    const double eta = weighted_bce_stats(s, p).eta;
    const Tensor<double> g = backward(loss)[pv];
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double closed = -(1 - eta) * s[i] / p[i] + eta * (1 - s[i]) / (1 - p[i]);
      CHECK(std::abs(g[i] - closed) < 1e-9);
    }
  }
}

TEST_CASE("model forward is order-independent and deterministic") {
  ModelConfig cfg;
  cfg.encoder.channels = 8;
  const auto w = support::perturbed_model(cfg, 3);
  Rng rng(16);
  std::vector<Tensor<double>> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(rng.uniform_tensor<double>(Shape{16, 16, 3}, 0, 1));
  const auto a = predict_graph<double>(frames, w, cfg);
  const auto b = predict_graph<double>(frames, w, cfg);
  CHECK(a == b);
  CHECK(a[0].shape() == Shape{4, 4});
  CHECK(init_model<double>(cfg, 4).attention.alpha[0] == 0.0);
}
