#include <cmath>
#include <functional>
#include <limits>

#include "agnn/grad_check.hpp"
#include "agnn/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace agnn;

namespace {

// <out, R> as a [1] node, for checking ops with non-scalar outputs.
Var<double> contract(const Var<double>& out, const Tensor<double>& r) {
  const int n = static_cast<int>(out.value().size());
  Tape<double>& tape = out.tape();
  const Var<double> row = reshape(out, Shape{1, n});
  return reshape(matmul(row, tape.leaf(r.reshaped(Shape{n, 1}))), Shape{1});
}

using OpFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

// Finite-difference check of `op` over 100 seeded input draws.
void check_op(const char* name, const std::function<std::vector<Tensor<double>>(Rng&)>& draw, const OpFn& op,
              std::vector<std::size_t> inputs = {}) {
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(std::hash<std::string>{}(name), trial));
    std::vector<Tensor<double>> args = draw(rng);
    Tensor<double> r;
    auto fn = [&](Tape<double>&, const std::vector<Var<double>>& v) {
      const Var<double> out = op(v);
      if (r.size() != out.value().size()) r = rng.uniform_tensor<double>(out.shape(), -1, 1);
      return contract(out, r);
    };
    GradCheckOptions opts;
    opts.inputs = inputs;
    const GradCheckReport rep = grad_check<double>(fn, args, opts);
    for (double e : rep.per_input_norm_rel_err) worst = std::max(worst, e);
  }
  INFO(name << " worst per-input relative error " << worst);
  CHECK(worst <= 1e-6);
}

Tensor<double> away_from_zero(Rng& rng, Shape s) {
  Tensor<double> t = rng.uniform_tensor<double>(s, 0.05, 1.0);
  for (double& v : t.values()) v *= rng.bernoulli(0.5) ? 1 : -1;
  return t;
}

}  // namespace

TEST_CASE("finite-difference checks for every op") {
  check_op("conv2d 3x3", [](Rng& g) {
    const int h = g.integer(1, 5), w = g.integer(1, 5), ci = g.integer(1, 3), co = g.integer(1, 3);
    return std::vector{g.uniform_tensor<double>(Shape{h, w, ci}, -1, 1), g.uniform_tensor<double>(Shape{3, 3, ci, co}, -1, 1),
                       g.uniform_tensor<double>(Shape{co}, -1, 1)};
  }, [](const auto& v) { return conv2d(v[0], v[1], v[2]); });
  check_op("conv2d stride 2", [](Rng& g) {
    const int h = g.integer(2, 6), w = g.integer(2, 6), ci = g.integer(1, 3), co = g.integer(1, 3);
    return std::vector{g.uniform_tensor<double>(Shape{h, w, ci}, -1, 1), g.uniform_tensor<double>(Shape{3, 3, ci, co}, -1, 1)};
  }, [](const auto& v) { return conv2d(v[0], v[1], 2); });
  check_op("conv2d 1x1", [](Rng& g) {
    const int h = g.integer(1, 4), w = g.integer(1, 4), ci = g.integer(1, 4), co = g.integer(1, 4);
    return std::vector{g.uniform_tensor<double>(Shape{h, w, ci}, -1, 1), g.uniform_tensor<double>(Shape{1, 1, ci, co}, -1, 1),
                       g.uniform_tensor<double>(Shape{co}, -1, 1)};
  }, [](const auto& v) { return conv2d(v[0], v[1], v[2]); });
  check_op("matmul", [](Rng& g) {
    const int a = g.integer(1, 5), b = g.integer(1, 5), c = g.integer(1, 5);
    return std::vector{g.uniform_tensor<double>(Shape{a, b}, -1, 1), g.uniform_tensor<double>(Shape{b, c}, -1, 1)};
  }, [](const auto& v) { return matmul(v[0], v[1]); });
  check_op("transpose", [](Rng& g) {
    return std::vector{g.uniform_tensor<double>(Shape{g.integer(1, 5), g.integer(1, 5)}, -1, 1)};
  }, [](const auto& v) { return transpose(v[0]); });
  check_op("row_softmax", [](Rng& g) {
    return std::vector{g.uniform_tensor<double>(Shape{g.integer(1, 5), g.integer(1, 5)}, -3, 3)};
  }, [](const auto& v) { return row_softmax(v[0]); });
  check_op("sigmoid", [](Rng& g) { return std::vector{g.uniform_tensor<double>(Shape{g.integer(1, 9)}, -4, 4)}; },
           [](const auto& v) { return sigmoid(v[0]); });
  check_op("tanh", [](Rng& g) { return std::vector{g.uniform_tensor<double>(Shape{g.integer(1, 9)}, -3, 3)}; },
           [](const auto& v) { return agnn::tanh(v[0]); });
  check_op("relu", [](Rng& g) { return std::vector{away_from_zero(g, Shape{g.integer(1, 9)})}; },
           [](const auto& v) { return relu(v[0]); });
  check_op("global_avg_pool", [](Rng& g) {
    return std::vector{g.uniform_tensor<double>(Shape{g.integer(1, 4), g.integer(1, 4), g.integer(1, 4)}, -1, 1)};
  }, [](const auto& v) { return global_avg_pool(v[0]); });
  auto pair = [](Rng& g) {
    const Shape s{g.integer(1, 4), g.integer(1, 4), g.integer(1, 3)};
    return std::vector{g.uniform_tensor<double>(s, -1, 1), g.uniform_tensor<double>(s, -1, 1)};
  };
  check_op("add", pair, [](const auto& v) { return add(v[0], v[1]); });
  check_op("sub", pair, [](const auto& v) { return sub(v[0], v[1]); });
  check_op("mul", pair, [](const auto& v) { return mul(v[0], v[1]); });
  check_op("concat_channels", pair, [](const auto& v) { return concat_channels(v[0], v[1]); });
  check_op("channel_broadcast_mul", [](Rng& g) {
    const int c = g.integer(1, 4);
    return std::vector{g.uniform_tensor<double>(Shape{g.integer(1, 4), g.integer(1, 4), c}, -1, 1),
                       g.uniform_tensor<double>(Shape{c}, -1, 1)};
  }, [](const auto& v) { return channel_broadcast_mul(v[0], v[1]); });
  check_op("scalar_scale", [](Rng& g) {
    return std::vector{g.uniform_tensor<double>(Shape{g.integer(1, 4), g.integer(1, 4)}, -1, 1),
                       g.uniform_tensor<double>(Shape{1}, -1, 1)};
  }, [](const auto& v) { return scalar_scale(v[0], v[1]); });
  check_op("reshape", [](Rng& g) { return std::vector{g.uniform_tensor<double>(Shape{2, g.integer(1, 4), 3}, -1, 1)}; },
           [](const auto& v) { return reshape(v[0], Shape{static_cast<int>(v[0].value().size())}); });
  check_op("average", pair, [](const auto& v) { return average<double>(v); });
  check_op("weighted_bce", [](Rng& g) {
    const Shape s{g.integer(1, 4), g.integer(1, 4)};
    Tensor<double> target(s);
    for (double& t : target.values()) t = g.bernoulli(0.5) ? 1 : 0;
    return std::vector{target, g.uniform_tensor<double>(s, 0.05, 0.95)};
  }, [](const auto& v) { return weighted_bce(v[0], v[1]); }, {1});
}

TEST_CASE("softmax rows are distributions and stable for large logits") {
  Tape<double> tape;
  const Var<double> a = tape.leaf(Tensor<double>(Shape{2, 2}, {0, 0, 1000, 0}));
  const Tensor<double>& s = row_softmax(a).value();
  CHECK(s.at(0, 0) == doctest::Approx(0.5));
  CHECK(s.at(0, 1) == doctest::Approx(0.5));
  CHECK(s.at(1, 0) == doctest::Approx(1.0));
  CHECK(s.at(1, 1) == doctest::Approx(0.0));
  CHECK(s.all_finite());
}

TEST_CASE("identity kernels reproduce the input") {
  Rng rng(5);
  Tape<double> tape;
  const Tensor<double> x = rng.uniform_tensor<double>(Shape{4, 5, 3}, -1, 1);
  Tensor<double> k1(Shape{1, 1, 3, 3}), k3(Shape{3, 3, 3, 3});
  for (int c = 0; c < 3; ++c) {
    k1[c * 3 + c] = 1;
    k3[((1 * 3 + 1) * 3 + c) * 3 + c] = 1;
  }
  const Var<double> v = tape.leaf(x);
  CHECK(max_abs_diff(conv2d(v, tape.leaf(k1)).value(), x) == 0.0);
  CHECK(max_abs_diff(conv2d(v, tape.leaf(k3)).value(), x) == 0.0);
}

TEST_CASE("conv2d and matmul agree with explicit loops") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(derive_seed(9, trial));
    const int stride = rng.integer(1, 2);
    const Tensor<double> x = rng.uniform_tensor<double>(Shape{rng.integer(2, 7), rng.integer(2, 7), 3}, -1, 1);
    const Tensor<double> w = rng.uniform_tensor<double>(Shape{3, 3, 3, 2}, -1, 1);
    const Tensor<double> b = rng.uniform_tensor<double>(Shape{2}, -1, 1);
    Tape<double> tape;
    const Tensor<double> got = conv2d(tape.leaf(x), tape.leaf(w), tape.leaf(b), stride).value();
    const Tensor<double> want = oracle::conv2d(x, w, &b, stride);
    REQUIRE(got.shape() == want.shape());
    CHECK(max_abs_diff(got, want) < 1e-12);

    const Tensor<double> a = rng.uniform_tensor<double>(Shape{3, 4}, -1, 1), c = rng.uniform_tensor<double>(Shape{4, 2}, -1, 1);
    const Tensor<double> p = matmul(tape.leaf(a), tape.leaf(c)).value();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j) {
        double s = 0;
        for (int k = 0; k < 4; ++k) s += a.at(i, k) * c.at(k, j);
        CHECK(p.at(i, j) == doctest::Approx(s).epsilon(1e-14));
      }
  }
}

TEST_CASE("sigmoid derivative at zero is one quarter") {
  Tape<double> tape;
  const Var<double> x = tape.leaf(Tensor<double>(Shape{1}, 0.0));
  const Var<double> y = sigmoid(x);
  CHECK(y.value()[0] == 0.5);
  CHECK(backward(y)[x][0] == 0.25);
}

TEST_CASE("replay reproduces every stored value bit for bit") {
  Rng rng(3);
  Tape<double> tape;
  const Var<double> x = tape.leaf(rng.uniform_tensor<double>(Shape{4, 4, 2}, -1, 1));
  const Var<double> w = tape.leaf(rng.uniform_tensor<double>(Shape{3, 3, 2, 2}, -1, 1));
  const Var<double> h = agnn::tanh(conv2d(x, w));
  const Var<double> flat = reshape(h, Shape{16, 2});
  row_softmax(matmul(flat, transpose(flat)));
  const auto replayed = tape.replay();
  for (std::size_t i = 0; i < tape.size(); ++i) CHECK(replayed[i] == tape.value(i));
}

TEST_CASE("malformed tapes and bad inputs are rejected") {
  Tape<double> tape;
  const Var<double> a = tape.leaf(Tensor<double>(Shape{2}, 1.0));
  SUBCASE("record reading a later node") {
    tape.push(Record{OpKind::sigmoid, {5}, tape.size(), {}}, Tensor<double>(Shape{2}));
    CHECK_THROWS_AS(tape.validate(), TapeError);
    CHECK_THROWS_AS(backward(tape, 0, Tensor<double>(Shape{2}, 1.0)), TapeError);
  }
  SUBCASE("self-referencing record") {
    tape.push(Record{OpKind::sigmoid, {1}, tape.size(), {}}, Tensor<double>(Shape{2}));
    CHECK_THROWS_AS(tape.validate(), TapeError);
  }
  SUBCASE("missing output node") { CHECK_THROWS_AS(backward(tape, 7, Tensor<double>(Shape{2}, 1.0)), TapeError); }
  SUBCASE("non-finite leaf") {
    CHECK_THROWS_AS(tape.leaf(Tensor<double>(Shape{1}, std::numeric_limits<double>::quiet_NaN())), NonFiniteError);
  }
  SUBCASE("non-finite result") {
    const Var<double> big = tape.leaf(Tensor<double>(Shape{1, 1}, 1e200));
    const Var<double> overflow = matmul(big, big);
    CHECK_FALSE(overflow.value().all_finite());
    CHECK_THROWS_AS(add(overflow, big), NonFiniteError);
  }
  SUBCASE("shape mismatch") {
    const Var<double> b = tape.leaf(Tensor<double>(Shape{3}, 1.0));
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
  }
  SUBCASE("non-binary ground truth") {
    const Var<double> t = tape.leaf(Tensor<double>(Shape{2}, 0.5));
    CHECK_THROWS_AS(weighted_bce(t, a), std::invalid_argument);
  }
}

TEST_CASE("gradients reach only what the output depends on") {
  Tape<double> tape;
  const Var<double> target = tape.leaf(Tensor<double>(Shape{2, 2}, {1, 0, 0, 1}));
  const Var<double> pred = tape.leaf(Tensor<double>(Shape{2, 2}, 0.3));
  const Var<double> unused = tape.leaf(Tensor<double>(Shape{3}, 2.0));
  const Gradients<double> g = backward(weighted_bce(target, pred));
  CHECK(g[target] == Tensor<double>(Shape{2, 2}));
  CHECK(g[unused] == Tensor<double>(Shape{3}));
  CHECK(g[pred][0] == doctest::Approx(-0.5 / 0.3));
}

TEST_CASE("single precision tracks double precision") {
  Rng rng(8);
  const Tensor<double> x = rng.uniform_tensor<double>(Shape{4, 4, 2}, -1, 1);
  const Tensor<double> w = rng.uniform_tensor<double>(Shape{3, 3, 2, 3}, -1, 1);
  Tape<double> td;
  Tape<float> tf;
  const Tensor<double> d = sigmoid(conv2d(td.leaf(x), td.leaf(w))).value();
  const Tensor<float> f = sigmoid(conv2d(tf.leaf(x.cast<float>()), tf.leaf(w.cast<float>()))).value();
  CHECK(max_abs_diff(f.cast<double>(), d) < 1e-5);
}
