#include <doctest.h>

#include <functional>
#include <limits>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "slasd/adam.hpp"
#include "slasd/autodiff.hpp"
#include "slasd/model.hpp"

using namespace slasd;
using ad::Tape;
using ad::Var;
using MatD = Matrix<double>;

namespace {

// Builds f from the given leaves, reduces it to a scalar with a fixed random
// weighting, and compares every leaf gradient with central differences.
double max_fd_error(std::vector<MatD> leaves, const std::function<Var(Tape<double>&, const std::vector<Var>&)>& f,
                    std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  MatD weight;
  auto eval = [&](const std::vector<MatD>& ls, Tape<double>& tape, std::vector<Var>& vars) {
    vars.clear();
    for (const auto& l : ls) vars.push_back(tape.parameter(l));
    const Var out = f(tape, vars);
    if (weight.empty()) weight = fixtures::random_matrix_d(tape.value(out).rows, tape.value(out).cols, rng);
    return tape.sum(tape.mul(out, tape.constant(weight)));
  };
  Tape<double> tape;
  std::vector<Var> vars;
  const Var loss = eval(leaves, tape, vars);
  tape.backward(loss);
  double worst = 0;
  const double h = 1e-5;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      auto plus = leaves, minus = leaves;
      plus[l].data[i] += h;
      minus[l].data[i] -= h;
      Tape<double> tp, tm;
      std::vector<Var> vp, vm;
      const double fp = tp.value(eval(plus, tp, vp)).data[0], fm = tm.value(eval(minus, tm, vm)).data[0];
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = tape.grad(vars[l]).data[i];
      worst = std::max(worst, std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("softmax") {
  Tape<double> t;
  SUBCASE("uniform") {
    const auto p = t.value(t.softmax_rows(t.constant(MatD(1, 3))));
    for (double v : p.data) CHECK(v == doctest::Approx(1.0 / 3));
  }
  SUBCASE("large inputs do not overflow") {
    const auto p = t.value(t.softmax_rows(t.constant(MatD(1, 2, {1000.0, 0.0}))));
    CHECK(p.data[0] == doctest::Approx(1.0));
    CHECK(p.data[1] >= 0.0);
    CHECK(p.data[1] < 1e-300);
  }
  SUBCASE("random rows sum to one") {
    std::mt19937_64 rng(3);
    Tape<float> tf;
    const auto p = tf.value(tf.softmax_rows(tf.constant(fixtures::random_matrix(4, 5, rng, 3.0))));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (float v : p.row(r)) {
        s += v;
        CHECK(v > 0.0f);
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("layer norm") {
  Tape<double> t;
  const Var ones = t.constant(MatD(1, 2, 1.0)), zeros = t.constant(MatD(1, 2, 0.0));
  const auto c = t.value(t.layer_norm(t.constant(MatD(1, 2, 3.0)), ones, zeros));
  CHECK(c.data[0] == 0.0);
  CHECK(c.data[1] == 0.0);
  const auto y = t.value(t.layer_norm(t.constant(MatD(1, 2, {1.0, -1.0})), ones, zeros));
  CHECK(y.data[0] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
  CHECK(y.data[0] == doctest::Approx(0.999995).epsilon(1e-6));
  CHECK(y.data[1] == doctest::Approx(-0.999995).epsilon(1e-6));
  const auto b = t.value(t.layer_norm(t.constant(MatD(2, 2, {1.0, 5.0, -2.0, 0.5})), zeros,
                                      t.constant(MatD(1, 2, {0.25, -4.0}))));
  CHECK(b == MatD(2, 2, {0.25, -4.0, 0.25, -4.0}));
  CHECK_THROWS_AS(t.layer_norm(t.constant(MatD(1, 3)), ones, zeros), InvalidArgument);
}

TEST_CASE("multi-head attention") {
  std::mt19937_64 rng(11);
  ModelConfig cfg;
  cfg.dim = 16;
  cfg.ffn_hidden = 32;
  const auto params = init_params<double>(cfg, 5);
  const auto& cross = params.tensors.cross;

  SUBCASE("matches the dense-loop oracle") {
    // Perturb biases so every term is exercised.
    auto p = params;
    for (auto* m : {&p.tensors.cross.bq, &p.tensors.cross.bk, &p.tensors.cross.bv, &p.tensors.cross.bo})
      *m = fixtures::random_matrix_d(1, 16, rng, 0.3);
    const auto q = fixtures::random_matrix_d(2, 16, rng), kv = fixtures::random_matrix_d(3, 16, rng);
    Tape<double> t;
    const auto slots = bind(t, p, false);
    const auto out = t.value(attention(t, t.constant(q), t.constant(kv), slots.cross, 4));
    const auto ref = oracle::attention(oracle::to_mat(q), oracle::to_mat(kv), p.tensors.cross, 4);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 16; ++c) CHECK(std::abs(out(r, c) - ref[r][c]) < 1e-5);
  }
  SUBCASE("single key: output is the projected value for every query") {
    const auto q = fixtures::random_matrix_d(3, 16, rng), kv = fixtures::random_matrix_d(1, 16, rng);
    Tape<double> t;
    const auto slots = bind(t, params, false);
    const auto out = t.value(attention(t, t.constant(q), t.constant(kv), slots.cross, 4));
    const auto v = oracle::affine(oracle::affine(oracle::to_mat(kv), oracle::to_mat(cross.wv), oracle::to_mat(cross.bv)),
                                  oracle::to_mat(cross.wo), oracle::to_mat(cross.bo));
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 16; ++c) CHECK(out(r, c) == doctest::Approx(v[0][c]).epsilon(1e-12));
  }
  SUBCASE("identical keys make the output query independent") {
    const auto row = fixtures::random_matrix_d(1, 16, rng);
    MatD kv(4, 16);
    for (std::size_t r = 0; r < 4; ++r) std::copy(row.data.begin(), row.data.end(), kv.row(r).begin());
    Tape<double> t;
    const auto slots = bind(t, params, false);
    const auto out = t.value(attention(t, t.constant(fixtures::random_matrix_d(2, 16, rng)), t.constant(kv), slots.cross, 4));
    for (std::size_t c = 0; c < 16; ++c) CHECK(out(0, c) == doctest::Approx(out(1, c)).epsilon(1e-12));
  }
  SUBCASE("permuting keys/values leaves outputs unchanged") {
    const auto q = fixtures::random_matrix_d(2, 16, rng), kv = fixtures::random_matrix_d(5, 16, rng);
    MatD perm(5, 16);
    const std::size_t order[] = {3, 0, 4, 1, 2};
    for (std::size_t r = 0; r < 5; ++r) std::copy(kv.row(order[r]).begin(), kv.row(order[r]).end(), perm.row(r).begin());
    Tape<double> t;
    const auto slots = bind(t, params, false);
    const auto a = t.value(attention(t, t.constant(q), t.constant(kv), slots.cross, 4));
    const auto b = t.value(attention(t, t.constant(q), t.constant(perm), slots.cross, 4));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) < 1e-12);
  }
  SUBCASE("width must divide into heads") {
    Tape<double> t;
    const auto slots = bind(t, params, false);
    CHECK_THROWS_AS(attention(t, t.constant(MatD(1, 16)), t.constant(MatD(1, 16)), slots.cross, 3), InvalidArgument);
  }
}

TEST_CASE("backward basics") {
  Tape<double> t;
  const Var x = t.parameter(MatD(2, 3, {1, 2, 3, 4, 5, 6}));
  t.backward(t.sum(x));
  for (double g : t.grad(x).data) CHECK(g == 1.0);

  Tape<double> t2;
  const MatD xv(1, 3, {1, -2, 0.5}), yv(1, 3, {4, 0.25, -1});
  const Var a = t2.parameter(xv), b = t2.parameter(yv);
  t2.backward(t2.sum(t2.mul(a, b)));
  CHECK(t2.grad(a) == yv);
  CHECK(t2.grad(b) == xv);

  CHECK_THROWS_AS(t2.backward(a), InvalidArgument);
}

TEST_CASE("non-finite values are rejected") {
  Tape<double> t;
  CHECK_THROWS_AS(t.constant(MatD(1, 1, std::numeric_limits<double>::quiet_NaN())), NumericError);
  const Var big = t.constant(MatD(1, 1, 1e300));
  CHECK_THROWS_AS(t.mul(big, big), NumericError);
}

TEST_CASE("bounded inputs stay finite") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1e4, 1e4);
  Tape<double> t;
  MatD x(3, 8);
  for (auto& v : x.data) v = u(rng);
  const Var v = t.constant(x);
  CHECK(t.value(t.softmax_rows(v)).all_finite());
  CHECK(t.value(t.layer_norm(v, t.constant(MatD(1, 8, 1.0)), t.constant(MatD(1, 8)))).all_finite());
  CHECK(t.value(t.gelu(v)).all_finite());
  CHECK(t.value(t.l2_normalize_rows(v)).all_finite());
  CHECK(t.value(t.cross_entropy(t.mean_rows(t.scale(v, 3.0)), 2)).all_finite());
}

TEST_CASE("every op's gradient matches finite differences") {
  std::mt19937_64 rng(21);
  auto R = [&](std::size_t r, std::size_t c) { return fixtures::random_matrix_d(r, c, rng); };
  using L = const std::vector<Var>&;
  CHECK(max_fd_error({R(3, 4), R(4, 2)}, [](Tape<double>& t, L v) { return t.matmul(v[0], v[1]); }) < 1e-7);
  CHECK(max_fd_error({R(3, 4), R(5, 4)}, [](Tape<double>& t, L v) { return t.matmul_nt(v[0], v[1]); }) < 1e-7);
  CHECK(max_fd_error({R(2, 3), R(2, 3)}, [](Tape<double>& t, L v) { return t.add(v[0], v[1]); }) < 1e-7);
  CHECK(max_fd_error({R(2, 3), R(2, 3)}, [](Tape<double>& t, L v) { return t.mul(v[0], v[1]); }) < 1e-7);
  CHECK(max_fd_error({R(3, 4), R(1, 4)}, [](Tape<double>& t, L v) { return t.add_row(v[0], v[1]); }) < 1e-7);
  CHECK(max_fd_error({R(3, 4), R(1, 1)}, [](Tape<double>& t, L v) { return t.add_scalar(v[0], v[1]); }) < 1e-7);
  CHECK(max_fd_error({R(3, 4)}, [](Tape<double>& t, L v) { return t.scale(v[0], 0.7); }) < 1e-7);
  CHECK(max_fd_error({R(3, 4)}, [](Tape<double>& t, L v) { return t.gelu(v[0]); }) < 1e-7);
  CHECK(max_fd_error({R(3, 5)}, [](Tape<double>& t, L v) { return t.softmax_rows(v[0]); }) < 1e-7);
  CHECK(max_fd_error({R(3, 5), R(1, 5), R(1, 5)},
                     [](Tape<double>& t, L v) { return t.layer_norm(v[0], v[1], v[2]); }) < 1e-6);
  CHECK(max_fd_error({R(4, 3)}, [](Tape<double>& t, L v) { return t.mean_rows(v[0]); }) < 1e-7);
  CHECK(max_fd_error({R(2, 6)}, [](Tape<double>& t, L v) { return t.slice_cols(v[0], 2, 3); }) < 1e-7);
  CHECK(max_fd_error({R(2, 3), R(2, 2)}, [](Tape<double>& t, L v) { return t.concat_cols({v[0], v[1]}); }) < 1e-7);
  CHECK(max_fd_error({R(1, 3), R(2, 3)}, [](Tape<double>& t, L v) { return t.concat_rows({v[0], v[1]}); }) < 1e-7);
  CHECK(max_fd_error({R(1, 1), R(1, 1)}, [](Tape<double>& t, L v) { return t.mean_scalars({v[0], v[1]}); }) < 1e-7);
  CHECK(max_fd_error({R(1, 5)}, [](Tape<double>& t, L v) { return t.cross_entropy(v[0], 3); }) < 1e-7);
  CHECK(max_fd_error({R(3, 4)}, [](Tape<double>& t, L v) { return t.l2_normalize_rows(v[0]); }) < 1e-7);
  // external_scalar: loss = 0.5 * |x|^2 supplied from outside the tape.
  CHECK(max_fd_error({R(2, 3)}, [](Tape<double>& t, L v) {
          const auto& x = t.value(v[0]);
          double l = 0;
          for (double e : x.data) l += 0.5 * e * e;
          return t.external_scalar(v[0], l, x);
        }) < 1e-7);
}

TEST_CASE("adam") {
  std::mt19937_64 rng(13);
  SUBCASE("zero gradient leaves parameters unchanged") {
    MatD p = fixtures::random_matrix_d(3, 3, rng);
    const MatD before = p, g(3, 3);
    AdamState<double> s;
    MatD* ps[] = {&p};
    const MatD* gs[] = {&g};
    adam_step<double>(ps, gs, s, 1e-3);
    CHECK(p == before);
  }
  SUBCASE("first step moves each coordinate by about lr") {
    MatD p = fixtures::random_matrix_d(4, 4, rng);
    const MatD before = p, g = fixtures::random_matrix_d(4, 4, rng);
    AdamState<double> s;
    MatD* ps[] = {&p};
    const MatD* gs[] = {&g};
    const double lr = 1e-5;
    adam_step<double>(ps, gs, s, lr);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double step = before.data[i] - p.data[i];
      // Closed form: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps).
      CHECK(step == doctest::Approx(lr * g.data[i] / (std::abs(g.data[i]) + 1e-8)).epsilon(1e-9));
      CHECK(std::abs(step) <= lr * (1 + 1e-9));
    }
  }
  SUBCASE("identical runs give identical parameters") {
    const MatD init = fixtures::random_matrix_d(2, 5, rng);
    std::vector<MatD> grads;
    for (int k = 0; k < 5; ++k) grads.push_back(fixtures::random_matrix_d(2, 5, rng));
    auto run = [&] {
      MatD p = init;
      AdamState<double> s;
      for (const auto& g : grads) {
        MatD* ps[] = {&p};
        const MatD* gs[] = {&g};
        adam_step<double>(ps, gs, s, 1e-2);
      }
      return p;
    };
    CHECK(run() == run());
  }
  SUBCASE("shape mismatch") {
    MatD p(2, 2);
    const MatD g(2, 3);
    AdamState<double> s;
    MatD* ps[] = {&p};
    const MatD* gs[] = {&g};
    CHECK_THROWS_AS(adam_step<double>(ps, gs, s, 1e-3), InvalidArgument);
  }
}
