#include "dmn/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "dmn/gradcheck.hpp"
#include "dmn/params.hpp"

namespace {

using dmn::Tensor;

TEST(TensorShape, ConstructorRejectsMismatchedSize) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), dmn::DimensionError);
  EXPECT_NO_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
}

TEST(TensorOps, MatVecComputesRowDots) {
  Tensor w = Tensor::matrix(2, 2, {1, 2, 0, 1});
  Tensor x = Tensor::vec({1, 1});
  Tensor y = dmn::matvec(w, x);
  ASSERT_EQ(y.size(), 2u);
  EXPECT_DOUBLE_EQ(y[0], 3.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
  EXPECT_FALSE(y.on_tape());
}

TEST(TensorOps, MatVecRejectsBadShapes) {
  Tensor w = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_THROW(dmn::matvec(w, Tensor::vec({1, 1})), dmn::DimensionError);
  EXPECT_THROW(dmn::matvec(Tensor::vec({1, 1}), Tensor::vec({1, 1})), dmn::DimensionError);
}

TEST(TensorOps, ElementwiseAndUnaryValues) {
  Tensor a = Tensor::vec({2, 3});
  Tensor b = Tensor::vec({5, 7});
  EXPECT_DOUBLE_EQ(dmn::add(a, b)[0], 7.0);
  EXPECT_DOUBLE_EQ(dmn::sub(a, b)[1], -4.0);
  EXPECT_DOUBLE_EQ(dmn::mul(a, b)[1], 21.0);
  EXPECT_THROW(dmn::add(a, Tensor::vec({1})), dmn::DimensionError);

  Tensor z = Tensor::vec({-2, 0, 3});
  Tensor r = dmn::relu(z);
  EXPECT_DOUBLE_EQ(r[0], 0.0);
  EXPECT_DOUBLE_EQ(r[1], 0.0);
  EXPECT_DOUBLE_EQ(r[2], 3.0);
  Tensor ab = dmn::abs(z);
  EXPECT_DOUBLE_EQ(ab[0], 2.0);
  EXPECT_DOUBLE_EQ(ab[2], 3.0);
  EXPECT_DOUBLE_EQ(dmn::sigmoid(Tensor::vec({0}))[0], 0.5);
  EXPECT_DOUBLE_EQ(dmn::tanh(Tensor::vec({0}))[0], 0.0);
}

TEST(TensorOps, SoftmaxMatchesHandComputedCase) {
  Tensor s = dmn::softmax(Tensor::vec({0.0, std::log(3.0)}));
  EXPECT_NEAR(s[0], 0.25, 1e-15);
  EXPECT_NEAR(s[1], 0.75, 1e-15);
}

TEST(TensorOps, SoftmaxStableUnderLargeShift) {
  Tensor s = dmn::softmax(Tensor::vec({1000.0, 1000.0 + std::log(3.0)}));
  EXPECT_NEAR(s[0], 0.25, 1e-12);
  EXPECT_NEAR(s[1], 0.75, 1e-12);
}

TEST(TensorOps, CrossEntropyMatchesHandComputedCase) {
  Tensor loss = dmn::cross_entropy(Tensor::vec({0.0, std::log(3.0)}), 0);
  EXPECT_NEAR(loss[0], std::log(4.0), 1e-15);
  EXPECT_THROW(dmn::cross_entropy(Tensor::vec({0.0, 1.0}), 2), dmn::IndexError);
}

TEST(TensorOps, ConcatSliceRowValues) {
  Tensor c = dmn::concat({Tensor::vec({1, 2}), Tensor::vec({3})});
  ASSERT_EQ(c.size(), 3u);
  EXPECT_DOUBLE_EQ(c[2], 3.0);

  Tensor t = Tensor::vec({1, 2, 3, 4});
  Tensor s = dmn::slice(t, 1, 2);
  EXPECT_DOUBLE_EQ(s[0], 2.0);
  EXPECT_DOUBLE_EQ(s[1], 3.0);
  EXPECT_THROW(dmn::slice(t, 3, 2), dmn::IndexError);

  Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor r1 = dmn::row(m, 1);
  EXPECT_DOUBLE_EQ(r1[0], 3.0);
  EXPECT_DOUBLE_EQ(r1[1], 4.0);
  EXPECT_THROW(dmn::row(m, 2), dmn::IndexError);
}

TEST(TensorOps, ScaleSumDotValues) {
  Tensor out = dmn::scale(Tensor::scalar(2.0), Tensor::vec({1, -3}));
  EXPECT_DOUBLE_EQ(out[0], 2.0);
  EXPECT_DOUBLE_EQ(out[1], -6.0);
  EXPECT_DOUBLE_EQ(dmn::sum(Tensor::vec({1, 2, 3}))[0], 6.0);
  EXPECT_DOUBLE_EQ(dmn::dot(Tensor::vec({1, 2}), Tensor::vec({3, 4}))[0], 11.0);
  EXPECT_THROW(dmn::dot(Tensor::vec({1, 2}), Tensor::vec({3})), dmn::DimensionError);
}

TEST(Tape, OffTapeOpsStayOffTape) {
  Tensor y = dmn::add(Tensor::vec({1}), Tensor::vec({2}));
  EXPECT_FALSE(y.on_tape());
  EXPECT_EQ(y.tape, nullptr);
}

TEST(Tape, LiftsOffTapeOperandsAsConstants) {
  dmn::Tape tape;
  Tensor a = tape.leaf(Tensor::vec({1, 2}));
  Tensor b = Tensor::vec({3, 4});  // off tape
  Tensor y = dmn::add(a, b);
  ASSERT_TRUE(y.on_tape());
  Tensor loss = dmn::sum(y);
  tape.backward(loss);
  const auto& ga = tape.grad(a);
  EXPECT_DOUBLE_EQ(ga[0], 1.0);
  EXPECT_DOUBLE_EQ(ga[1], 1.0);
}

TEST(Tape, RejectsMixingTwoTapes) {
  dmn::Tape t1, t2;
  Tensor a = t1.leaf(Tensor::vec({1}));
  Tensor b = t2.leaf(Tensor::vec({2}));
  EXPECT_THROW(dmn::add(a, b), std::logic_error);
}

TEST(Tape, BackwardRequiresScalarRootOnThisTape) {
  dmn::Tape tape;
  Tensor a = tape.leaf(Tensor::vec({1, 2}));
  EXPECT_THROW(tape.backward(a), dmn::DimensionError);
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), dmn::DimensionError);
}

TEST(Tape, MatVecBackward) {
  dmn::Tape tape;
  Tensor w = tape.leaf(Tensor::matrix(2, 2, {1, 2, 0, 1}));
  Tensor x = tape.leaf(Tensor::vec({1, 1}));
  Tensor loss = dmn::sum(dmn::matvec(w, x));
  tape.backward(loss);
  const auto& gw = tape.grad(w);
  const auto& gx = tape.grad(x);
  for (double v : gw) EXPECT_DOUBLE_EQ(v, 1.0);  // g[r] * x[c] with both ones
  EXPECT_DOUBLE_EQ(gx[0], 1.0);                  // column sums of w
  EXPECT_DOUBLE_EQ(gx[1], 3.0);
}

TEST(Tape, ElementwiseBackward) {
  dmn::Tape tape;
  Tensor a = tape.leaf(Tensor::vec({2, 3}));
  Tensor b = tape.leaf(Tensor::vec({5, 7}));
  tape.backward(dmn::sum(dmn::mul(a, b)));
  EXPECT_DOUBLE_EQ(tape.grad(a)[0], 5.0);
  EXPECT_DOUBLE_EQ(tape.grad(a)[1], 7.0);
  EXPECT_DOUBLE_EQ(tape.grad(b)[0], 2.0);
  EXPECT_DOUBLE_EQ(tape.grad(b)[1], 3.0);
}

TEST(Tape, SubAbsReluBackward) {
  dmn::Tape tape;
  Tensor a = tape.leaf(Tensor::vec({-2, 0, 3}));
  tape.backward(dmn::sum(dmn::abs(a)));
  EXPECT_DOUBLE_EQ(tape.grad(a)[0], -1.0);
  EXPECT_DOUBLE_EQ(tape.grad(a)[1], 0.0);
  EXPECT_DOUBLE_EQ(tape.grad(a)[2], 1.0);

  dmn::Tape t2;
  Tensor c = t2.leaf(Tensor::vec({-2, 0, 3}));
  t2.backward(dmn::sum(dmn::relu(c)));
  EXPECT_DOUBLE_EQ(t2.grad(c)[0], 0.0);
  EXPECT_DOUBLE_EQ(t2.grad(c)[1], 0.0);
  EXPECT_DOUBLE_EQ(t2.grad(c)[2], 1.0);

  dmn::Tape t3;
  Tensor u = t3.leaf(Tensor::vec({4, 1}));
  Tensor v = t3.leaf(Tensor::vec({1, 5}));
  t3.backward(dmn::sum(dmn::sub(u, v)));
  EXPECT_DOUBLE_EQ(t3.grad(u)[0], 1.0);
  EXPECT_DOUBLE_EQ(t3.grad(v)[0], -1.0);
}

TEST(Tape, SoftmaxBackwardProjectsOutMean) {
  dmn::Tape tape;
  Tensor z = tape.leaf(Tensor::vec({0.0, std::log(3.0)}));
  Tensor s = dmn::softmax(z);
  tape.backward(dmn::slice(s, 0, 1));  // upstream [1, 0]
  const auto& gz = tape.grad(z);
  EXPECT_NEAR(gz[0], 0.1875, 1e-15);   // s0*(1-s0)
  EXPECT_NEAR(gz[1], -0.1875, 1e-15);  // -s0*s1
}

TEST(Tape, CrossEntropyBackwardIsProbsMinusOneHot) {
  dmn::Tape tape;
  Tensor z = tape.leaf(Tensor::vec({0.0, std::log(3.0)}));
  tape.backward(dmn::cross_entropy(z, 0));
  const auto& gz = tape.grad(z);
  EXPECT_NEAR(gz[0], -0.75, 1e-15);
  EXPECT_NEAR(gz[1], 0.75, 1e-15);
}

TEST(Tape, ConcatSliceScaleSumDotBackward) {
  dmn::Tape tape;
  Tensor a = tape.leaf(Tensor::vec({1, 2}));
  Tensor b = tape.leaf(Tensor::vec({3}));
  Tensor c = dmn::concat({a, b});
  Tensor picked = dmn::slice(c, 1, 2);  // [2, 3]
  Tensor s = tape.leaf(Tensor::scalar(2.0));
  Tensor scaled = dmn::scale(s, picked);
  tape.backward(dmn::sum(scaled));
  EXPECT_DOUBLE_EQ(tape.grad(a)[0], 0.0);
  EXPECT_DOUBLE_EQ(tape.grad(a)[1], 2.0);
  EXPECT_DOUBLE_EQ(tape.grad(b)[0], 2.0);
  EXPECT_DOUBLE_EQ(tape.grad(s)[0], 5.0);  // 2 + 3

  dmn::Tape t2;
  Tensor u = t2.leaf(Tensor::vec({1, 2}));
  Tensor v = t2.leaf(Tensor::vec({3, 4}));
  t2.backward(dmn::dot(u, v));
  EXPECT_DOUBLE_EQ(t2.grad(u)[0], 3.0);
  EXPECT_DOUBLE_EQ(t2.grad(u)[1], 4.0);
  EXPECT_DOUBLE_EQ(t2.grad(v)[1], 2.0);
}

TEST(Tape, SigmoidTanhBackward) {
  dmn::Tape tape;
  Tensor x = tape.leaf(Tensor::vec({0.0}));
  tape.backward(dmn::sum(dmn::sigmoid(x)));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 0.25);

  dmn::Tape t2;
  Tensor y = t2.leaf(Tensor::vec({1.0}));
  t2.backward(dmn::sum(dmn::tanh(y)));
  const double t = std::tanh(1.0);
  EXPECT_NEAR(t2.grad(y)[0], 1.0 - t * t, 1e-15);
}

TEST(Tape, BackwardResetsBetweenCalls) {
  dmn::Tape tape;
  Tensor a = tape.leaf(Tensor::vec({1, 2}));
  Tensor loss = dmn::sum(a);
  tape.backward(loss);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(tape.grad(a)[0], 1.0);  // not doubled
}

TEST(Graph, MemoizedUseAccumulatesIntoOneSlot) {
  dmn::ParamStore store;
  dmn::ParamId w = store.add("w", Tensor::vec({1, 2}));
  dmn::Graph g(store);
  Tensor wa = g.use(w);
  Tensor wb = g.use(w);
  EXPECT_EQ(wa.node, wb.node);
  Tensor loss = dmn::dot(wa, wb);
  EXPECT_DOUBLE_EQ(loss[0], 5.0);
  g.backward(loss);
  g.accumulate_grads();
  EXPECT_DOUBLE_EQ(store.at(w).grad[0], 2.0);
  EXPECT_DOUBLE_EQ(store.at(w).grad[1], 4.0);
}

TEST(Graph, AccumulateGradsScalesAndAdds) {
  dmn::ParamStore store;
  dmn::ParamId w = store.add("w", Tensor::vec({3, 5}));
  for (int rep = 0; rep < 2; ++rep) {
    dmn::Graph g(store);
    Tensor loss = dmn::sum(g.use(w));
    g.backward(loss);
    g.accumulate_grads(0.5);
  }
  EXPECT_DOUBLE_EQ(store.at(w).grad[0], 1.0);
  EXPECT_DOUBLE_EQ(store.at(w).grad[1], 1.0);
}

TEST(ParamStore, RejectsDuplicateNames) {
  dmn::ParamStore store;
  store.add("w", Tensor::vec({1}));
  EXPECT_THROW(store.add("w", Tensor::vec({2})), dmn::ConfigError);
  EXPECT_THROW(store.id_of("missing"), dmn::ConfigError);
}

TEST(ParamStore, InitGivesMatricesXavierBoundsAndVectorsZeros) {
  dmn::ParamStore store;
  dmn::ParamId w = store.add("w", Tensor::zeros({8, 4}));
  dmn::ParamId b = store.add("b", Tensor::vec({1, 2, 3}));
  dmn::Rng rng(7);
  dmn::init_param(store.at(w), rng);
  dmn::init_param(store.at(b), rng);
  const double bound = std::sqrt(6.0 / 12.0);
  bool any_nonzero = false;
  for (double v : store.at(w).value.values) {
    EXPECT_LE(std::fabs(v), bound);
    if (v != 0.0) any_nonzero = true;
  }
  EXPECT_TRUE(any_nonzero);
  for (double v : store.at(b).value.values) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Rng, SeededStreamIsStable) {
  dmn::Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    double x = dmn::uniform01(a), y = dmn::uniform01(b);
    EXPECT_EQ(x, y);
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}

// Scalar loss touching every differentiable operation once. The input values
// are chosen to keep relu and abs away from their kinks.
dmn::Tensor all_ops_loss(dmn::Graph& g, dmn::ParamStore& store) {
  Tensor x = g.constant(Tensor::vec({0.3, -0.2}));
  Tensor w = g.use(store.id_of("w"));
  Tensor b = g.use(store.id_of("b"));
  Tensor v = g.use(store.id_of("v"));
  Tensor a = dmn::sigmoid(dmn::matvec(w, dmn::add(x, b)));
  Tensor m = dmn::mul(a, v);
  Tensor d = dmn::abs(dmn::sub(m, x));
  Tensor c = dmn::concat({m, d});
  Tensor z = dmn::softmax(c);
  Tensor r = dmn::relu(dmn::slice(c, 1, 2));
  Tensor sc = dmn::scale(dmn::sum(r), dmn::tanh(m));
  Tensor ce = dmn::cross_entropy(c, 1);
  return dmn::add(ce, dmn::dot(sc, dmn::slice(z, 0, 2)));
}

dmn::ParamStore make_all_ops_store() {
  dmn::ParamStore store;
  store.add("w", Tensor::matrix(2, 2, {0.5, -0.3, 0.2, 0.7}));
  store.add("b", Tensor::vec({0.1, -0.4}));
  store.add("v", Tensor::vec({0.8, -0.6}));
  return store;
}

TEST(GradCheck, PassesOnCompositeOfAllOps) {
  dmn::ParamStore store = make_all_ops_store();
  auto report = dmn::grad_check(
      store, [&](dmn::Graph& g) { return all_ops_loss(g, store); });
  EXPECT_TRUE(report.pass) << report.summary();
  EXPECT_EQ(report.checked, 8u);
}

TEST(GradCheck, CatchesInjectedTanhFault) {
  dmn::ParamStore store = make_all_ops_store();
  auto report = dmn::grad_check(store, [&](dmn::Graph& g) {
    g.tape().corrupt_tanh_backward = true;
    return all_ops_loss(g, store);
  });
  EXPECT_FALSE(report.pass) << report.summary();
}

TEST(GradCheck, BackwardIsDeterministic) {
  dmn::ParamStore s1 = make_all_ops_store();
  dmn::ParamStore s2 = make_all_ops_store();
  for (dmn::ParamStore* s : {&s1, &s2}) {
    dmn::Graph g(*s);
    Tensor loss = all_ops_loss(g, *s);
    g.backward(loss);
    g.accumulate_grads();
  }
  for (std::size_t p = 0; p < s1.count(); ++p) {
    ASSERT_EQ(s1.at(p).grad.size(), s2.at(p).grad.size());
    for (std::size_t i = 0; i < s1.at(p).grad.size(); ++i)
      EXPECT_EQ(s1.at(p).grad[i], s2.at(p).grad[i]);  // bit-identical
  }
}

}  // namespace
