#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "lidarshape/autodiff.hpp"
#include "support.hpp"

using namespace lidarshape;
using namespace lidarshape::ad;
using testing_support::grad_check;
using testing_support::random_tensor;
using testing_support::weighted_sum;

namespace {

constexpr int kInstances = 100;
constexpr double kTol = 1e-4;

std::size_t dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 5) { return lo + rng.index(hi - lo + 1); }

// Entries bounded away from zero so relu stays differentiable under +-h.
Tensor<double> away_from_zero(Rng& rng, Shape shape) {
  auto t = random_tensor(rng, std::move(shape));
  for (auto& v : t.data())
    if (std::abs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;
  return t;
}

template <typename MakeInputs, typename Build>
void check_op(const char* name, MakeInputs make, Build build) {
  Rng rng(std::hash<std::string>{}(name));
  double worst = 0.0;
  for (int inst = 0; inst < kInstances; ++inst) {
    const auto inputs = make(rng);
    const auto seed = rng.index(1u << 30);
    const auto r = grad_check(
        [&](Tape<double>& t, const std::vector<Var<double>>& v) { return weighted_sum(t, build(v), seed); }, inputs);
    worst = std::max(worst, r.max_rel);
  }
  EXPECT_LT(worst, kTol) << name;
}

}  // namespace

TEST(GradCheck, Matmul) {
  check_op(
      "matmul",
      [](Rng& r) {
        const auto m = dim(r), k = dim(r), n = dim(r);
        return std::vector{random_tensor(r, {m, k}), random_tensor(r, {k, n})};
      },
      [](const std::vector<Var<double>>& v) { return matmul(v[0], v[1]); });
}

TEST(GradCheck, MatmulLargeEnoughForTiling) {
  // 9 rows exercise both the four-row blocks and the remainder path.
  check_op(
      "matmul_tiled",
      [](Rng& r) { return std::vector{random_tensor(r, {9, 6}), random_tensor(r, {6, 5})}; },
      [](const std::vector<Var<double>>& v) { return matmul(v[0], v[1]); });
}

TEST(GradCheck, AddBias) {
  check_op(
      "add_bias",
      [](Rng& r) {
        const auto m = dim(r), n = dim(r);
        return std::vector{random_tensor(r, {m, n}), random_tensor(r, {n})};
      },
      [](const std::vector<Var<double>>& v) { return add_bias(v[0], v[1]); });
}

TEST(GradCheck, AddSubMul) {
  auto make = [](Rng& r) {
    const Shape s{dim(r), dim(r)};
    return std::vector{random_tensor(r, s), random_tensor(r, s)};
  };
  check_op("add", make, [](const std::vector<Var<double>>& v) { return add(v[0], v[1]); });
  check_op("sub", make, [](const std::vector<Var<double>>& v) { return sub(v[0], v[1]); });
  check_op("mul", make, [](const std::vector<Var<double>>& v) { return mul(v[0], v[1]); });
}

TEST(GradCheck, SameInputTwice) {
  check_op(
      "mul_self",
      [](Rng& r) { return std::vector{random_tensor(r, {dim(r), dim(r)})}; },
      [](const std::vector<Var<double>>& v) { return mul(v[0], v[0]); });
}

TEST(GradCheck, Scale) {
  check_op(
      "scale", [](Rng& r) { return std::vector{random_tensor(r, {dim(r), dim(r)})}; },
      [](const std::vector<Var<double>>& v) { return scale(v[0], -1.7); });
}

TEST(GradCheck, Relu) {
  check_op(
      "relu", [](Rng& r) { return std::vector{away_from_zero(r, {dim(r), dim(r)})}; },
      [](const std::vector<Var<double>>& v) { return relu(v[0]); });
}

TEST(GradCheck, TanhExp) {
  auto make = [](Rng& r) { return std::vector{random_tensor(r, {dim(r), dim(r)}, -2.0, 2.0)}; };
  check_op("tanh", make, [](const std::vector<Var<double>>& v) { return ad::tanh(v[0]); });
  check_op("exp", make, [](const std::vector<Var<double>>& v) { return ad::exp(v[0]); });
}

TEST(GradCheck, Sum) {
  check_op(
      "sum", [](Rng& r) { return std::vector{random_tensor(r, {dim(r), dim(r)})}; },
      [](const std::vector<Var<double>>& v) { return sum(v[0]); });
}

TEST(GradCheck, ConcatCols) {
  check_op(
      "concat_cols",
      [](Rng& r) {
        const auto m = dim(r);
        return std::vector{random_tensor(r, {m, dim(r)}), random_tensor(r, {m, dim(r)})};
      },
      [](const std::vector<Var<double>>& v) { return concat_cols(v[0], v[1]); });
}

TEST(GradCheck, ReduceMaxRows) {
  // Entries on a 0.01 lattice plus small noise: distinct by far more than h.
  check_op(
      "reduce_max_rows",
      [](Rng& r) {
        const auto m = dim(r, 1, 6), n = dim(r);
        Tensor<double> t({m, n});
        for (std::size_t j = 0; j < n; ++j) {
          std::vector<std::size_t> perm(m);
          for (std::size_t i = 0; i < m; ++i) perm[i] = i;
          r.shuffle(perm);
          for (std::size_t i = 0; i < m; ++i) t.at(i, j) = 0.01 * static_cast<double>(perm[i]) + r.uniform(0, 1e-3);
        }
        return std::vector{t};
      },
      [](const std::vector<Var<double>>& v) { return reduce_max_rows(v[0]); });
}

TEST(GradCheck, BroadcastRepeatSliceReshape) {
  check_op(
      "broadcast_rows", [](Rng& r) { return std::vector{random_tensor(r, {dim(r)})}; },
      [](const std::vector<Var<double>>& v) { return broadcast_rows(v[0], 3); });
  check_op(
      "repeat_rows", [](Rng& r) { return std::vector{random_tensor(r, {dim(r), dim(r)})}; },
      [](const std::vector<Var<double>>& v) { return repeat_rows(v[0], 3); });
  check_op(
      "slice_rows", [](Rng& r) { return std::vector{random_tensor(r, {4, dim(r)})}; },
      [](const std::vector<Var<double>>& v) { return slice_rows(v[0], 1, 3); });
  check_op(
      "reshape", [](Rng& r) { return std::vector{random_tensor(r, {2, 6})}; },
      [](const std::vector<Var<double>>& v) { return reshape(v[0], {3, 4}); });
}

TEST(GradCheck, Composite) {
  check_op(
      "mlp",
      [](Rng& r) {
        return std::vector{random_tensor(r, {4, 3}), random_tensor(r, {3, 5}), random_tensor(r, {5}),
                           random_tensor(r, {5, 2})};
      },
      [](const std::vector<Var<double>>& v) {
        auto h = ad::tanh(add_bias(matmul(v[0], v[1]), v[2]));
        return reduce_max_rows(matmul(h, v[3]));
      });
}

TEST(Tape, RecordingOffGivesBitwiseEqualValues) {
  Rng rng(9);
  const auto a = random_tensor(rng, {5, 4}), b = random_tensor(rng, {4, 3}), c = random_tensor(rng, {3});
  auto run = [&](bool rec) {
    Tape<double> t;
    t.set_recording(rec);
    auto out = reduce_max_rows(relu(add_bias(matmul(t.parameter(a), t.parameter(b)), t.parameter(c))));
    return out.value();
  };
  EXPECT_EQ(run(true), run(false));
}

TEST(Tape, RecordingOffKeepsNoGradient) {
  Tape<double> t;
  t.set_recording(false);
  auto p = t.parameter(Tensor<double>({2}, 1.0));
  auto loss = sum(mul(p, p));
  EXPECT_FALSE(loss.requires_grad());
  EXPECT_EQ(t.backward(loss).size(), 0u);
}

TEST(Tape, ConstantsGetNoGradient) {
  Tape<double> t;
  auto c = t.constant(Tensor<double>({2}, 3.0));
  auto p = t.parameter(Tensor<double>({2}, 2.0));
  auto g = t.backward(sum(mul(c, p)));
  EXPECT_FALSE(g.contains(c));
  EXPECT_EQ(g.at(p)[0], 3.0);
}

TEST(Tape, BackwardNeedsScalar) {
  Tape<double> t;
  auto p = t.parameter(Tensor<double>({2, 2}, 1.0));
  EXPECT_THROW(t.backward(p), ShapeError);
}

TEST(Tape, NonFiniteValuesAreRejected) {
  Tape<double> t;
  auto p = t.parameter(Tensor<double>({1}, 1000.0));
  EXPECT_THROW(ad::exp(p), NonFiniteError);
  Tensor<double> bad({1}, std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(t.constant(bad), NonFiniteError);
}

TEST(Ops, ShapeErrors) {
  Tape<double> t;
  auto a = t.constant(Tensor<double>({2, 3}));
  auto b = t.constant(Tensor<double>({2, 3}));
  EXPECT_THROW(matmul(a, b), ShapeError);
  EXPECT_THROW(add(a, t.constant(Tensor<double>({3, 2}))), ShapeError);
  EXPECT_THROW(add_bias(a, t.constant(Tensor<double>({2}))), ShapeError);
  EXPECT_THROW(slice_rows(a, 1, 3), ShapeError);
  EXPECT_THROW(reshape(a, {5}), ShapeError);
  EXPECT_THROW(concat_cols(a, t.constant(Tensor<double>({3, 1}))), ShapeError);
}

TEST(Ops, ReduceMaxTieGoesToLowestRow) {
  Tape<double> t;
  auto p = t.parameter(Tensor<double>({3, 2}, {1.0, 5.0, 2.0, 5.0, 2.0, 0.0}));
  auto m = reduce_max_rows(p);
  EXPECT_EQ(m.value(), (Tensor<double>({2}, {2.0, 5.0})));
  const auto g = t.backward(sum(m)).at(p);
  EXPECT_EQ(g, (Tensor<double>({3, 2}, {0.0, 1.0, 1.0, 0.0, 0.0, 0.0})));
}

TEST(Ops, MatmulMatchesNaiveProduct) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = dim(rng, 1, 13), k = dim(rng, 1, 300), n = dim(rng, 1, 300);
    const auto a = random_tensor(rng, {m, k}), b = random_tensor(rng, {k, n});
    Tape<double> t;
    const auto c = matmul(t.constant(a), t.constant(b)).value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
        ASSERT_NEAR(c.at(i, j), s, 1e-9);
      }
  }
}
