#include "lmda/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "support.hpp"

namespace lmda {
namespace {

using testing::grad_check;
using testing::random_tensor;
using testing::relative_error;

// Projects a tensor onto a fixed random direction so every output element
// contributes to the scalar loss with a distinct weight.
Tensor project(const Tensor& y, const Tensor& dir) { return sum(hadamard(y, dir)); }

TEST(Conv2d, HandCrossCorrelation) {
  Tensor in({1, 1, 1, 3}, {1, 2, 3});
  Tensor k({1, 1, 1, 2}, {1, 1});
  Tensor out = conv2d(in, k);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(out.data()[0], 3.0);
  EXPECT_EQ(out.data()[1], 5.0);
}

TEST(Conv2d, NoKernelFlip) {
  Tensor in({1, 1, 1, 3}, {1, 2, 3});
  Tensor k({1, 1, 1, 2}, {1, 0});
  Tensor out = conv2d(in, k);
  EXPECT_EQ(out.data()[0], 1.0);
  EXPECT_EQ(out.data()[1], 2.0);
}

TEST(Conv2d, UnitKernelIsIdentity) {
  std::mt19937_64 rng(1);
  Tensor in = random_tensor({2, 1, 4, 6}, rng);
  Tensor out = conv2d(in, Tensor({1, 1, 1, 1}, 1.0));
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_EQ(out.data()[i], in.data()[i]);
}

TEST(Conv2d, DepthwiseUnitKernelsAreIdentity) {
  std::mt19937_64 rng(2);
  Tensor in = random_tensor({2, 5, 3, 4}, rng);
  Tensor out = conv2d(in, Tensor({5, 1, 1, 1}, 1.0), 5);
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_EQ(out.data()[i], in.data()[i]);
}

TEST(Conv2d, MatchesNaiveOracle) {
  std::mt19937_64 rng(3);
  struct Case {
    Shape in, k;
    std::size_t groups, ph, pw;
  };
  const Case cases[] = {
      {{2, 3, 5, 7}, {4, 3, 2, 3}, 1, 0, 0},
      {{1, 4, 6, 9}, {4, 1, 1, 5}, 4, 0, 2},
      {{2, 6, 4, 8}, {3, 2, 3, 3}, 3, 1, 1},
      {{3, 2, 1, 20}, {6, 2, 1, 7}, 1, 0, 3},
  };
  for (const auto& c : cases) {
    Tensor in = random_tensor(c.in, rng), k = random_tensor(c.k, rng);
    Tensor out = conv2d(in, k, c.groups, c.ph, c.pw);
    auto ref = testing::naive_conv2d(in, k, c.groups, c.ph, c.pw);
    ASSERT_EQ(out.size(), ref.size());
    EXPECT_LT(testing::max_abs_diff(out.data(), ref), 1e-12);
  }
}

TEST(Conv2d, ShapeErrorsNameTheDimension) {
  Tensor in({1, 3, 2, 5});
  try {
    conv2d(in, Tensor({2, 2, 1, 1}), 2);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("groups"), std::string::npos) << e.what();
  }
  try {
    conv2d(in, Tensor({1, 3, 1, 6}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("width"), std::string::npos) << e.what();
  }
}

TEST(Conv2d, KernelAndInputGradients) {
  std::mt19937_64 rng(4);
  Tensor in = random_tensor({2, 3, 5, 7}, rng);
  Tensor k = random_tensor({2, 3, 2, 3}, rng);
  Tensor dir = random_tensor({2, 2, 4, 5}, rng);
  auto gk = grad_check(k, [&] { return project(conv2d(in, k), dir); });
  EXPECT_LT(relative_error(gk.analytic, gk.numeric), 1e-6);
  auto gi = grad_check(in, [&] { return project(conv2d(in, k), dir); });
  EXPECT_LT(relative_error(gi.analytic, gi.numeric), 1e-6);
}

TEST(Conv2d, GroupedPaddedGradients) {
  std::mt19937_64 rng(5);
  Tensor in = random_tensor({2, 4, 3, 6}, rng);
  Tensor k = random_tensor({4, 2, 2, 3}, rng);
  Tensor dir = random_tensor({2, 4, 4, 6}, rng);
  auto loss = [&] { return project(conv2d(in, k, 2, 1, 1), dir); };
  auto gk = grad_check(k, loss);
  EXPECT_LT(relative_error(gk.analytic, gk.numeric), 1e-6);
  auto gi = grad_check(in, loss);
  EXPECT_LT(relative_error(gi.analytic, gi.numeric), 1e-6);
}

TEST(ChannelContract, IdentityWeights) {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({2, 1, 3, 4}, rng);
  Tensor out = channel_contract(x, Tensor({1, 1, 3}, 1.0));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(out.data()[i], x.data()[i]);
}

TEST(ChannelContract, WorkedExample) {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w({2, 1, 2}, {1, 0, 0, 1});
  Tensor out = channel_contract(x, w);
  ASSERT_EQ(out.shape(), (Shape{1, 2, 2, 2}));
  const std::vector<double> expected = {1, 2, 0, 0, 0, 0, 3, 4};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(out.data()[i], expected[i]);
}

TEST(ChannelContract, RandomOracle) {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({2, 3, 4, 5}, rng), w = random_tensor({6, 3, 4}, rng);
  EXPECT_LT(testing::max_abs_diff(channel_contract(x, w).data(),
                                  testing::naive_channel_contract(x, w)),
            1e-12);
}

TEST(ChannelContract, RejectsDisagreeingDims) {
  EXPECT_THROW(channel_contract(Tensor({1, 2, 3, 4}), Tensor({5, 1, 3})), ShapeError);
  EXPECT_THROW(channel_contract(Tensor({1, 2, 3, 4}), Tensor({5, 2, 4})), ShapeError);
}

TEST(ChannelContract, Gradients) {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({2, 2, 3, 4}, rng), w = random_tensor({3, 2, 3}, rng);
  Tensor dir = random_tensor({2, 3, 3, 4}, rng);
  auto loss = [&] { return project(channel_contract(x, w), dir); };
  auto gw = grad_check(w, loss);
  EXPECT_LT(relative_error(gw.analytic, gw.numeric), 1e-6);
  auto gx = grad_check(x, loss);
  EXPECT_LT(relative_error(gx.analytic, gx.numeric), 1e-6);
}

TEST(Gelu, Values) {
  Tensor y = gelu(Tensor({3}, {0.0, 1.0, -1.0}));
  EXPECT_EQ(y.data()[0], 0.0);
  EXPECT_NEAR(y.data()[1], 0.8413447, 1e-7);
  EXPECT_NEAR(y.data()[2], -0.1586553, 1e-7);
}

TEST(Gelu, GradientAtNegativePoint) {
  Tensor x({1}, {-0.7});
  auto g = grad_check(x, [&] { return sum(gelu(x)); });
  EXPECT_NEAR(g.analytic[0], g.numeric[0], 1e-8);
  // Closed form: Phi(x) + x * phi(x).
  const double xv = -0.7;
  const double expected = 0.5 * (1 + std::erf(xv / std::numbers::sqrt2)) +
                          xv * std::exp(-0.5 * xv * xv) / std::sqrt(2 * std::numbers::pi);
  EXPECT_NEAR(g.analytic[0], expected, 1e-12);
}

TEST(Softmax, UniformAndClosedForm) {
  Tensor u = softmax(Tensor({4}, 2.5), 0);
  for (double v : u.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  Tensor p = softmax(Tensor({2}, {0.0, std::log(2.0)}), 0);
  EXPECT_NEAR(p.data()[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p.data()[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantExactly) {
  Tensor a({3}, {0.5, -1.0, 2.0}), b({3}, {3.5, 2.0, 5.0});
  Tensor pa = softmax(a, 0), pb = softmax(b, 0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(pa.data()[i], pb.data()[i]);
}

TEST(Softmax, SlicesSumToOneAlongAnyAxis) {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({3, 4, 5}, rng, 3.0);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Tensor p = softmax(x, axis);
    const auto& s = x.shape();
    for (std::size_t i = 0; i < s[0]; ++i)
      for (std::size_t j = 0; j < s[1]; ++j)
        for (std::size_t k = 0; k < s[2]; ++k) {
          if ((axis == 0 && i) || (axis == 1 && j) || (axis == 2 && k)) continue;
          double total = 0.0;
          for (std::size_t m = 0; m < s[axis]; ++m) {
            std::size_t idx[3] = {i, j, k};
            idx[axis] = m;
            const double v = p.at({idx[0], idx[1], idx[2]});
            EXPECT_GT(v, 0.0);
            EXPECT_LT(v, 1.0);
            total += v;
          }
          EXPECT_NEAR(total, 1.0, 1e-12);
        }
  }
}

TEST(AvgPool, Windows) {
  Tensor a = avg_pool_time(Tensor({1, 1, 1, 4}, {1, 2, 3, 4}), 2);
  ASSERT_EQ(a.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(a.data()[0], 1.5);
  EXPECT_EQ(a.data()[1], 3.5);
  Tensor b = avg_pool_time(Tensor({1, 1, 1, 5}, {1, 2, 3, 4, 5}), 2);
  ASSERT_EQ(b.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(b.data()[1], 3.5);
  Tensor x({1, 2, 1, 3}, {1, 2, 3, 4, 5, 6});
  Tensor c = avg_pool_time(x, 1);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(c.data()[i], x.data()[i]);
  EXPECT_THROW(avg_pool_time(x, 4), ShapeError);
}

TEST(SmallOps, HadamardTransposeLinear) {
  std::mt19937_64 rng(10);
  Tensor x = random_tensor({2, 3, 4}, rng);
  Tensor h = hadamard(x, Tensor({2, 3, 4}, 1.0));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(h.data()[i], x.data()[i]);
  Tensor tt = transpose_axes(transpose_axes(x, 0, 2), 0, 2);
  ASSERT_EQ(tt.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(tt.data()[i], x.data()[i]);
  Tensor y = linear(Tensor({2}, {1, 2}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {1, 1}));
  EXPECT_EQ(y.data()[0], 2.0);
  EXPECT_EQ(y.data()[1], 3.0);
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
  EXPECT_THROW(hadamard(Tensor({2, 3}), Tensor({3, 3})), ShapeError);
}

TEST(SmallOps, TransposeMovesElements) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor t = transpose_axes(x, 0, 1);
  ASSERT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(t.at({0, 1}), 4.0);
  EXPECT_EQ(t.at({2, 0}), 3.0);
}

// Every differentiable op on three shapes, h = 1e-6, relative error < 1e-5.
TEST(SmallOps, PadReplicateCopiesEdges) {
  Tensor x({2, 3, 1}, {1, 2, 3, 4, 5, 6});
  Tensor p = pad_replicate(x, 1, 2, 1);
  ASSERT_EQ(p.shape(), (Shape{2, 6, 1}));
  const std::vector<double> want = {1, 1, 1, 2, 3, 3, 4, 4, 4, 5, 6, 6};
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(p.data()[i], want[i]);
  Tensor same = pad_replicate(x, 0, 0, 0);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(same.data()[i], x.data()[i]);
  EXPECT_THROW(pad_replicate(x, 3, 1, 1), ShapeError);
}

TEST(Gradients, EveryOpOnThreeShapes) {
  std::mt19937_64 rng(11);
  const Shape shapes[] = {{2, 3, 4, 5}, {1, 2, 3, 7}, {3, 1, 2, 6}};
  auto check = [](const char* name, Tensor leaf, const std::function<Tensor()>& f) {
    auto g = grad_check(leaf, f);
    EXPECT_LT(relative_error(g.analytic, g.numeric), 1e-5) << name;
  };
  for (const auto& s : shapes) {
    Tensor x = random_tensor(s, rng);
    Tensor y = random_tensor(s, rng);
    Tensor dir = random_tensor(s, rng);
    check("gelu", x, [&] { return project(gelu(x), dir); });
    for (std::size_t axis = 0; axis < 4; ++axis) {
      check("softmax", x, [&] { return project(softmax(x, axis), dir); });
      Shape ms = s;
      ms[axis] = 1;
      Tensor mdir = random_tensor(ms, rng);
      check("mean_axis", x, [&] { return project(mean_axis(x, axis), mdir); });
    }
    check("hadamard", x, [&] { return project(hadamard(x, y), dir); });
    Shape bs = s;
    bs[2] = 1;
    Tensor yb = random_tensor(bs, rng);
    check("hadamard broadcast", yb, [&] { return project(hadamard(x, yb), dir); });
    check("add", y, [&] { return project(add(x, y), dir); });
    check("scale", x, [&] { return project(scale(x, -1.7), dir); });
    Shape ts = {s[0], s[2], s[1], s[3]};
    Tensor tdir = random_tensor(ts, rng);
    check("transpose", x, [&] { return project(transpose_axes(x, 1, 2), tdir); });
    Shape ps = s;
    ps[3] = s[3] / 2;
    Tensor pdir = random_tensor(ps, rng);
    check("avg_pool", x, [&] { return project(avg_pool_time(x, 2), pdir); });
    for (std::size_t axis = 0; axis < 4; ++axis) {
      Shape rs = s;
      rs[axis] += 3;
      Tensor rdir = random_tensor(rs, rng);
      check("pad_replicate", x, [&] { return project(pad_replicate(x, axis, 2, 1), rdir); });
    }
    check("reshape", x, [&] {
      return project(reshape(x, {s[0], s[1] * s[2] * s[3]}),
                     reshape(dir, {s[0], s[1] * s[2] * s[3]}));
    });
  }
  const std::size_t dims[][3] = {{2, 3, 4}, {5, 1, 2}, {1, 6, 3}};
  for (const auto& d : dims) {
    Tensor a = random_tensor({d[0], d[1]}, rng), b = random_tensor({d[1], d[2]}, rng);
    Tensor dir = random_tensor({d[0], d[2]}, rng);
    check("matmul a", a, [&] { return project(matmul(a, b), dir); });
    check("matmul b", b, [&] { return project(matmul(a, b), dir); });
    Tensor w = random_tensor({d[2], d[1]}, rng), bias = random_tensor({d[2]}, rng);
    check("linear x", a, [&] { return project(linear(a, w, bias), dir); });
    check("linear w", w, [&] { return project(linear(a, w, bias), dir); });
    check("linear b", bias, [&] { return project(linear(a, w, bias), dir); });
  }
}

TEST(Gradients, BatchNormTraining) {
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({4, 3, 2, 5}, rng);
  Tensor gamma = random_tensor({3}, rng), beta = random_tensor({3}, rng);
  Tensor dir = random_tensor({4, 3, 2, 5}, rng);
  BatchNormState st{Tensor({3}, 0.0), Tensor({3}, 1.0)};
  auto loss = [&] { return project(batch_norm(x, gamma, beta, st, true), dir); };
  for (Tensor* t : {&x, &gamma, &beta}) {
    auto g = grad_check(*t, loss);
    EXPECT_LT(relative_error(g.analytic, g.numeric), 1e-5);
  }
}

TEST(BatchNorm, InferenceUsesRunningStatistics) {
  Tensor x({1, 1, 1, 2}, {1.0, 3.0});
  BatchNormState st{Tensor({1}, {2.0}), Tensor({1}, {4.0}), 0.1, 0.0};
  Tensor y = batch_norm(x, Tensor({1}, {1.0}), Tensor({1}, {0.5}), st, false);
  EXPECT_DOUBLE_EQ(y.data()[0], 0.0);
  EXPECT_DOUBLE_EQ(y.data()[1], 1.0);
  // Training updates running stats with momentum and the unbiased variance.
  batch_norm(x, Tensor({1}, {1.0}), Tensor({1}, {0.0}), st, true);
  EXPECT_DOUBLE_EQ(st.running_mean.data()[0], 0.9 * 2.0 + 0.1 * 2.0);
  EXPECT_DOUBLE_EQ(st.running_var.data()[0], 0.9 * 4.0 + 0.1 * 2.0);
}

TEST(Backward, SumAndSquare) {
  Tensor x({2}, {1.0, -2.0});
  x.set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(x));
  }
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 1.0);
  x.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(hadamard(x, x)));
  }
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], -4.0);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor x({2}, {1.0, -2.0});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = sum(hadamard(x, x));
  tape.backward(loss);
  tape.backward(loss);
  EXPECT_EQ(x.grad()[0], 4.0);
  EXPECT_EQ(x.grad()[1], -8.0);
}

TEST(Backward, RejectsNonScalar) {
  Tensor x({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = scale(x, 2.0);
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Backward, ReverseRecordingOrder) {
  Tape tape;
  std::vector<int> order;
  Tensor a({1}, 1.0), b({1}, 1.0), c({1}, 1.0);
  a.set_requires_grad(true);
  tape.record({a}, b, [&] {
    order.push_back(1);
    a.grad_buffer()[0] += b.grad()[0];
  });
  tape.record({b}, c, [&] {
    order.push_back(2);
    b.grad_buffer()[0] += c.grad()[0];
  });
  tape.backward(c);
  ASSERT_EQ(order.size(), 2u);
  EXPECT_EQ(order[0], 2);
  EXPECT_EQ(order[1], 1);
}

TEST(Backward, NoTapeNoRecording) {
  Tensor x({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  Tensor y = scale(x, 3.0);
  EXPECT_EQ(active_tape(), nullptr);
  Tape tape;
  EXPECT_FALSE(tape.is_recorded(y));
}

TEST(TensorHandle, CopiesAliasCloneDoesNot) {
  Tensor a({2}, {1.0, 2.0});
  Tensor b = a;
  b.mutable_data()[0] = 5.0;
  EXPECT_EQ(a.data()[0], 5.0);
  Tensor c = a.clone();
  c.mutable_data()[0] = 7.0;
  EXPECT_EQ(a.data()[0], 5.0);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1.0}), ShapeError);
}

}  // namespace
}  // namespace lmda
