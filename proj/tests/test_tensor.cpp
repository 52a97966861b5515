#include <cmath>
#include <random>

#include "doctest.h"
#include "edgeforge/checkpoint.hpp"
#include "edgeforge/optim.hpp"
#include "edgeforge/tensor.hpp"
#include "grad_check.hpp"

using namespace edgeforge;
using ef_test::max_rel_grad_error;
using ef_test::random_matrix;
using ef_test::weighted_sum;

TEST_CASE("matmul identity and hand arithmetic") {
  Tape tape;
  Matrix id = Matrix::Identity(2, 2);
  Matrix x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  DiffTensor y = matmul(tape.input(id), tape.input(x));
  CHECK(y.value() == x);

  Matrix a(1, 2), b(2, 1);
  a << 1, 2;
  b << 3, 4;
  DiffTensor c = matmul(tape.input(a), tape.input(b));
  CHECK(c.value()(0, 0) == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  DiffTensor a = tape.input(Matrix::Zero(2, 3));
  DiffTensor b = tape.input(Matrix::Zero(4, 2));
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       "matmul: inner dimensions disagree, 2x3 * 4x2",
                       std::invalid_argument);
}

TEST_CASE("matmul gradient matches finite differences") {
  std::mt19937_64 rng(7);
  std::vector<Matrix> inputs = {random_matrix(4, 3, rng),
                                random_matrix(3, 5, rng)};
  double err = max_rel_grad_error(inputs, [](Tape& t, const auto& v) {
    return weighted_sum(t, matmul(v[0], v[1]), 99);
  });
  CHECK(err < 1e-6);
}

TEST_CASE("softmax rows") {
  Tape tape;
  Matrix x(1, 3);
  x << 0, 0, 0;
  DiffTensor y = softmax_rows(tape.input(x));
  for (int c = 0; c < 3; ++c) {
    CHECK(y.value()(0, c) == doctest::Approx(1.0 / 3).epsilon(1e-14));
  }

  Matrix x2(1, 2);
  x2 << 0.0, std::log(2.0);
  DiffTensor y2 = softmax_rows(tape.input(x2));
  CHECK(y2.value()(0, 0) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(y2.value()(0, 1) == doctest::Approx(2.0 / 3).epsilon(1e-12));

  Matrix x3(1, 2);
  x3 << 5, 5;
  DiffTensor y3 = softmax_rows(tape.input(x3), {1, 0});
  CHECK(y3.value()(0, 0) == 1.0);
  CHECK(y3.value()(0, 1) == 0.0);
}

TEST_CASE("softmax rows sum to one and lie in [0,1]") {
  std::mt19937_64 rng(3);
  Tape tape;
  Matrix x = random_matrix(20, 9, rng, 4.0);
  DiffTensor y = softmax_rows(tape.input(x));
  for (int r = 0; r < 20; ++r) {
    CHECK(std::abs(y.value().row(r).sum() - 1.0) <= 1e-12);
    CHECK(y.value().row(r).minCoeff() >= 0.0);
    CHECK(y.value().row(r).maxCoeff() <= 1.0);
  }
}

TEST_CASE("softmax fully masked row is an error") {
  Tape tape;
  Matrix x(2, 2);
  x << 1, 2, 3, 4;
  CHECK_THROWS_AS(softmax_rows(tape.input(x), {1, 1, 0, 0}),
                  std::runtime_error);
}

TEST_CASE("softmax gradient") {
  std::mt19937_64 rng(11);
  std::vector<Matrix> inputs = {random_matrix(5, 4, rng)};
  double err = max_rel_grad_error(inputs, [](Tape& t, const auto& v) {
    return weighted_sum(t, softmax_rows(v[0]), 5);
  });
  CHECK(err < 1e-5);
}

TEST_CASE("leaky relu definition") {
  Tape tape;
  Matrix x(1, 1);
  x << -1.0;
  CHECK(leaky_relu(tape.input(x), 0.2).value()(0, 0) ==
        -0.2);
}

TEST_CASE("layer norm of constant row is zero before gain and bias") {
  Tape tape;
  Matrix x(2, 4);
  x << 3, 3, 3, 3, -1, -1, -1, -1;
  DiffTensor g = tape.input(Matrix::Ones(1, 4));
  DiffTensor b = tape.input(Matrix::Zero(1, 4));
  DiffTensor y = layer_norm(tape.input(x), g, b);
  CHECK(y.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("layer norm normalizes rows") {
  std::mt19937_64 rng(21);
  Tape tape;
  Matrix x = random_matrix(6, 8, rng, 2.0);
  DiffTensor y = layer_norm(tape.input(x), tape.input(Matrix::Ones(1, 8)),
                            tape.input(Matrix::Zero(1, 8)));
  for (int r = 0; r < 6; ++r) {
    CHECK(std::abs(y.value().row(r).mean()) < 1e-9);
    double var = y.value().row(r).array().square().mean();
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps shifts slightly
  }
}

TEST_CASE("elementwise kinds pass finite-difference checks") {
  std::mt19937_64 rng(2024);
  for (int seed = 0; seed < 3; ++seed) {
    Matrix a = random_matrix(4, 3, rng);
    Matrix b = random_matrix(4, 3, rng);
    Matrix pos = random_matrix(4, 3, rng).array().abs() + 0.5;
    Matrix g = random_matrix(1, 3, rng);
    Matrix bias = random_matrix(1, 3, rng);
    Matrix cv = random_matrix(4, 1, rng);
    Matrix rv = random_matrix(1, 3, rng);

    auto check = [&](std::vector<Matrix> in, ef_test::LossBuilder f,
                     double tol = 1e-5) {
      CHECK(max_rel_grad_error(in, f) < tol);
    };
    check({a}, [](Tape& t, const auto& v) {
      return weighted_sum(t, leaky_relu(v[0], 0.2), 1);
    });
    check({a}, [](Tape& t, const auto& v) {
      return weighted_sum(t, relu(v[0]), 1);
    });
    check({a}, [](Tape& t, const auto& v) {
      return weighted_sum(t, elu(v[0]), 1);
    });
    check({a}, [](Tape& t, const auto& v) {
      return weighted_sum(t, exp_elem(v[0]), 2);
    });
    check({pos}, [](Tape& t, const auto& v) {
      return weighted_sum(t, sqrt_elem(v[0]), 3);
    });
    check({a, b}, [](Tape& t, const auto& v) {
      return weighted_sum(t, add(v[0], v[1]), 4);
    });
    check({a, b}, [](Tape& t, const auto& v) {
      return weighted_sum(t, mul(v[0], v[1]), 5);
    });
    check({a, b}, [](Tape& t, const auto& v) {
      return weighted_sum(t, concat_cols(v[0], v[1]), 6);
    });
    check({a}, [](Tape& t, const auto& v) { return mean_all(v[0]); });
    check({a, g, bias}, [](Tape& t, const auto& v) {
      return weighted_sum(t, layer_norm(v[0], v[1], v[2]), 7);
    });
    check({a, cv}, [](Tape& t, const auto& v) {
      return weighted_sum(t, mul_colvec(v[0], v[1]), 8);
    });
    check({a, rv}, [](Tape& t, const auto& v) {
      return weighted_sum(t, add_rowvec(v[0], v[1]), 9);
    });
  }
}

TEST_CASE("segment and gather ops pass finite-difference checks") {
  std::mt19937_64 rng(404);
  Matrix x = random_matrix(7, 3, rng);
  std::vector<int> offsets = {0, 2, 5, 7};
  CHECK(max_rel_grad_error({x}, [&](Tape& t, const auto& v) {
          return weighted_sum(t, segment_sum_rows(v[0], offsets), 1);
        }) < 1e-5);

  Matrix e = random_matrix(7, 1, rng);
  CHECK(max_rel_grad_error({e}, [&](Tape& t, const auto& v) {
          return weighted_sum(t, segment_softmax(v[0], offsets), 2);
        }) < 1e-5);

  std::vector<int> idx = {2, 2, -1, 0, 4};
  CHECK(max_rel_grad_error({x}, [&](Tape& t, const auto& v) {
          return weighted_sum(t, gather_rows(v[0], idx), 3);
        }) < 1e-5);

  Matrix q = random_matrix(6, 4, rng);
  Matrix k = random_matrix(6, 4, rng);
  Matrix vv = random_matrix(6, 4, rng);
  std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1, 1};
  CHECK(max_rel_grad_error({q, k, vv}, [&](Tape& t, const auto& v) {
          return weighted_sum(
              t, block_sdpa(v[0], v[1], v[2], 3, mask, 0.5), 4);
        }) < 1e-5);

  Matrix lam = random_matrix(3, 1, rng);
  CHECK(max_rel_grad_error({q, lam}, [&](Tape& t, const auto& v) {
          return weighted_sum(
              t, segment_weighted_sum(v[0], v[1], 3, mask), 5);
        }) < 1e-5);
}

TEST_CASE("spmm matches dense and backpropagates") {
  std::mt19937_64 rng(55);
  auto sp = std::make_shared<SparseOp>(SparseOp::from_triplets(
      3, 4, {{0, 1, 2.0}, {0, 3, -1.0}, {1, 0, 0.5}, {2, 2, 3.0}}));
  Matrix dense = Matrix::Zero(3, 4);
  dense(0, 1) = 2.0;
  dense(0, 3) = -1.0;
  dense(1, 0) = 0.5;
  dense(2, 2) = 3.0;
  Matrix h = random_matrix(4, 5, rng);
  CHECK((sp->apply(h) - dense * h).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(max_rel_grad_error({h}, [&](Tape& t, const auto& v) {
          return weighted_sum(t, spmm(sp, v[0]), 6);
        }) < 1e-5);
}

TEST_CASE("backward on sum gives ones; x*x at 3 gives 6") {
  Tape tape;
  Matrix x = Matrix::Constant(2, 3, 1.5);
  DiffTensor xv = tape.variable(x);
  tape.backward(sum_all(xv));
  CHECK(xv.grad() == Matrix::Ones(2, 3));

  Tape tape2;
  Matrix s(1, 1);
  s << 3.0;
  DiffTensor sv = tape2.variable(s);
  tape2.backward(mul(sv, sv));
  CHECK(sv.grad()(0, 0) == 6.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape tape;
  DiffTensor x = tape.variable(Matrix::Ones(2, 2));
  DiffTensor y = add(x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("two-layer composed network gradient") {
  std::mt19937_64 rng(31337);
  for (int seed = 0; seed < 3; ++seed) {
    std::vector<Matrix> inputs = {
        random_matrix(5, 4, rng), random_matrix(4, 6, rng),
        random_matrix(6, 3, rng), random_matrix(1, 6, rng)};
    double err = max_rel_grad_error(inputs, [](Tape& t, const auto& v) {
      DiffTensor h = elu(add_rowvec(matmul(v[0], v[1]), v[3]));
      DiffTensor o = softmax_rows(matmul(h, v[2]));
      return weighted_sum(t, o, 17);
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("nll loss gradient and value") {
  Tape tape;
  Matrix logits(2, 3);
  logits << 1, 1, 1, 0, 10, 0;
  DiffTensor lv = tape.variable(logits);
  DiffTensor loss = nll_loss(lv, {0, 1}, {2, 1});
  double expected = 0.5 * (std::log(3.0) +
                           (std::log(std::exp(-10.0) * 2 + 1.0)));
  CHECK(loss.value()(0, 0) == doctest::Approx(expected).epsilon(1e-12));

  std::mt19937_64 rng(777);
  Matrix x = random_matrix(5, 4, rng);
  CHECK(max_rel_grad_error({x}, [](Tape& t, const auto& v) {
          return nll_loss(v[0], {0, 2, 4}, {1, 3, 0});
        }) < 1e-5);
}

TEST_CASE("tape entries are topologically ordered") {
  Tape tape;
  std::mt19937_64 rng(1);
  DiffTensor a = tape.variable(random_matrix(3, 3, rng));
  DiffTensor b = tape.variable(random_matrix(3, 3, rng));
  DiffTensor c = matmul(add(a, b), leaky_relu(a, 0.2));
  (void)c;
  for (std::size_t e = 0; e < tape.num_ops(); ++e) {
    for (int in : tape.op_inputs(e)) CHECK(in < tape.op_output(e));
  }
}

TEST_CASE("bitwise determinism of forward and gradients") {
  auto run = [](std::vector<Matrix>* grads) {
    std::mt19937_64 rng(42);
    Tape tape;
    DiffTensor x = tape.variable(random_matrix(6, 5, rng));
    DiffTensor w = tape.variable(random_matrix(5, 4, rng));
    DiffTensor h = softmax_rows(elu(matmul(x, w)));
    DiffTensor loss = mean_all(h);
    double lv = loss.value()(0, 0);
    tape.backward(loss);
    grads->push_back(x.grad());
    grads->push_back(w.grad());
    return lv;
  };
  std::vector<Matrix> g1, g2;
  double l1 = run(&g1);
  double l2 = run(&g2);
  CHECK(std::memcmp(&l1, &l2, sizeof(double)) == 0);
  for (std::size_t i = 0; i < g1.size(); ++i) {
    REQUIRE(g1[i].size() == g2[i].size());
    CHECK(std::memcmp(g1[i].data(), g2[i].data(),
                      sizeof(double) * g1[i].size()) == 0);
  }
}

TEST_CASE("gradients stay finite after backward") {
  std::mt19937_64 rng(9);
  Tape tape;
  DiffTensor x = tape.variable(random_matrix(4, 4, rng, 3.0));
  DiffTensor y = layer_norm(exp_elem(x), tape.input(Matrix::Ones(1, 4)),
                            tape.input(Matrix::Zero(1, 4)));
  tape.backward(mean_all(y));
  CHECK(x.grad().allFinite());
}

TEST_CASE("adagrad step") {
  SUBCASE("zero gradient and zero decay leave parameters unchanged") {
    ModelParams params;
    ParamTensor& p = params.add("w", Matrix::Constant(2, 2, 1.25));
    p.grad = Matrix::Zero(2, 2);
    AdagradState st;
    st.weight_decay = 0.0;
    adagrad_step(params, st);
    CHECK(p.value == Matrix::Constant(2, 2, 1.25));
  }
  SUBCASE("single scalar update") {
    ModelParams params;
    ParamTensor& p = params.add("w", Matrix::Constant(1, 1, 3.0));
    p.grad = Matrix::Constant(1, 1, 2.0);
    AdagradState st;
    st.lr = 1.0;
    st.weight_decay = 0.0;
    adagrad_step(params, st);
    CHECK(p.value(0, 0) == doctest::Approx(3.0 - 2.0 / (2.0 + 1e-10))
                               .epsilon(1e-12));
    CHECK(st.accum["w"](0, 0) == 4.0);
  }
  SUBCASE("missing gradient is an error") {
    ModelParams params;
    params.add("w", Matrix::Ones(1, 1));
    AdagradState st;
    CHECK_THROWS_AS(adagrad_step(params, st), std::runtime_error);
  }
  SUBCASE("accumulators never decrease and descent reduces a quadratic") {
    ModelParams params;
    ParamTensor& p = params.add("w", Matrix::Constant(1, 1, 5.0));
    AdagradState st;
    st.lr = 0.5;
    st.weight_decay = 0.0;
    double prev_loss = 25.0;
    double prev_acc = 0.0;
    for (int i = 0; i < 100; ++i) {
      p.grad = 2.0 * p.value;  // d/dw w^2
      adagrad_step(params, st);
      double loss = p.value(0, 0) * p.value(0, 0);
      CHECK(loss < prev_loss);
      CHECK(st.accum["w"](0, 0) >= prev_acc);
      prev_loss = loss;
      prev_acc = st.accum["w"](0, 0);
    }
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  std::mt19937_64 rng(1234);
  ModelParams params;
  params.add("layer0.W", random_matrix(7, 3, rng));
  params.add("layer0.b", random_matrix(1, 3, rng));
  params.add("head.W", random_matrix(3, 2, rng, 1e-8));
  std::string path = "ckpt_roundtrip.efck";
  save_checkpoint(path, params);
  ModelParams loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == params.size());
  for (const ParamTensor* p : params.entries()) {
    const ParamTensor& q = loaded.at(p->name);
    REQUIRE(q.value.rows() == p->value.rows());
    REQUIRE(q.value.cols() == p->value.cols());
    CHECK(std::memcmp(q.value.data(), p->value.data(),
                      sizeof(double) * p->value.size()) == 0);
  }
  std::remove(path.c_str());
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(5);
  Tape tape;
  Matrix x = Matrix::Ones(50, 20);
  DiffTensor xv = tape.input(x);
  SUBCASE("rate zero is identity") {
    CHECK(dropout(xv, 0.0, true, rng).value() == x);
  }
  SUBCASE("eval mode is identity") {
    CHECK(dropout(xv, 0.9, false, rng).value() == x);
  }
  SUBCASE("expectation is preserved") {
    double total = 0.0;
    int reps = 200;
    for (int i = 0; i < reps; ++i) {
      Tape t2;
      total += dropout(t2.input(x), 0.5, true, rng).value().mean();
    }
    CHECK(total / reps == doctest::Approx(1.0).epsilon(0.02));
  }
}
