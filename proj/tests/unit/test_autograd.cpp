#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "maris/autograd.hpp"
#include "maris/random.hpp"
#include "oracles.hpp"

using namespace maris;

namespace {

Matrix rnd(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  return random_normal(r, c, sd, rng);
}

// Checks d(f)/d(x) for every input by central differences.
void expect_grads(std::vector<ag::Var> inputs, const std::function<ag::Var()>& f) {
  for (auto& v : inputs) v.zero_grad();
  ag::backward(f());
  for (auto& v : inputs) {
    const Matrix analytic = v.grad();
    for (std::size_t i = 0; i < v.value().size(); ++i) {
      const double orig = v.value()[i];
      const double h = 1e-6;
      v.mutable_value()[i] = orig + h;
      const double fp = f().scalar();
      v.mutable_value()[i] = orig - h;
      const double fm = f().scalar();
      v.mutable_value()[i] = orig;
      const double num = (fp - fm) / (2 * h);
      EXPECT_NEAR(analytic[i], num, 1e-6 * std::max(1.0, std::abs(num))) << "element " << i;
    }
  }
}

}  // namespace

TEST(Autograd, MatmulAddMulGradients) {
  auto rng = stream_rng(1, "t");
  auto a = ag::parameter(rnd(3, 4, rng)), b = ag::parameter(rnd(4, 2, rng));
  auto c = ag::parameter(rnd(3, 2, rng));
  expect_grads({a, b, c}, [&] {
    return ag::sum_all(ag::mul(ag::add(ag::matmul(a, b), c), ag::sub(c, ag::scale(c, 0.3))));
  });
}

TEST(Autograd, NonlinearitiesAndRowOps) {
  auto rng = stream_rng(2, "t");
  auto a = ag::parameter(rnd(3, 5, rng)), r = ag::parameter(rnd(1, 5, rng));
  auto s = ag::parameter(Matrix(1, 1, 0.7));
  expect_grads({a, r, s}, [&] {
    auto x = ag::add_row(a, r);
    auto y = ag::concat_cols(ag::sigmoid(x), ag::silu(ag::mul_scalar(x, s)));
    auto z = ag::div_rows(ag::softmax_rows(y), ag::add_scalar(ag::sum_rows(ag::exp(x)), s));
    return ag::mean_all(ag::mul(ag::normalize_rows(z), ag::transpose(ag::transpose(z))));
  });
}

TEST(Autograd, ReshapeAndSelectRows) {
  auto rng = stream_rng(3, "t");
  auto a = ag::parameter(rnd(4, 6, rng));
  std::vector<std::size_t> rows{3, 0, 3};
  expect_grads({a}, [&] {
    auto sel = ag::select_rows(ag::reshape(a, 6, 4), rows);
    return ag::sum_all(ag::mul(sel, sel));
  });
}

TEST(Autograd, BilinearSampleMatchesHandInterpolation) {
  // 2x2 map, one channel; sample at the centre of the four pixels.
  Matrix v(4, 1, std::vector<double>{1, 2, 3, 4});
  auto out = ag::bilinear_sample(ag::constant(v), 2, 2,
                                 ag::constant(Matrix(1, 2, std::vector<double>{0.5, 0.5})));
  EXPECT_DOUBLE_EQ(out.value()(0, 0), 2.5);
  // Outside the map reads zeros: halfway between pixel (1,0) and nothing.
  auto edge = ag::bilinear_sample(ag::constant(v), 2, 2,
                                  ag::constant(Matrix(1, 2, std::vector<double>{1.5, 0.0})));
  EXPECT_DOUBLE_EQ(edge.value()(0, 0), 1.0);
}

TEST(Autograd, BilinearSampleGradientsOffGrid) {
  auto rng = stream_rng(4, "t");
  auto v = ag::parameter(rnd(12, 3, rng));
  auto locs = ag::parameter(Matrix(3, 2, std::vector<double>{0.3, 0.6, 2.2, 1.7, -0.4, 2.1}));
  auto w = ag::parameter(rnd(1, 3, rng));
  expect_grads({v, locs, w}, [&] {
    auto s = ag::bilinear_sample(v, 3, 4, locs);
    auto g = ag::weighted_group_sum(s, ag::softmax_rows(w));
    return ag::sum_all(ag::mul(g, g));
  });
}

TEST(Autograd, LossOpsAgreeWithScalarOracles) {
  auto rng = stream_rng(5, "t");
  Matrix x = rnd(3, 4, rng, 2.0);
  Matrix t(3, 4);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (i * 7 % 3 == 0) ? 1.0 : 0.0;
  EXPECT_NEAR(ag::bce_with_logits(ag::constant(x), t).scalar(), oracle::bce(x, t), 1e-12);
  double dice = 0.0;
  for (std::size_t r = 0; r < 3; ++r) dice += oracle::dice_row(x.row(r), t.row(r), 1.0);
  EXPECT_NEAR(ag::dice_loss(ag::constant(x), t, 1.0).scalar(), dice / 3.0, 1e-12);

  auto p = ag::parameter(x);
  expect_grads({p}, [&] { return ag::add(ag::bce_with_logits(p, t), ag::dice_loss(p, t, 1.0)); });
  std::vector<std::size_t> cls{1, 3, 0};
  expect_grads({p}, [&] { return ag::softmax_cross_entropy(p, cls); });
}

TEST(Autograd, SharedSubgraphAccumulates) {
  auto a = ag::parameter(Matrix(1, 1, 3.0));
  auto y = ag::mul(a, a);  // used twice below
  ag::backward(ag::add(y, y));
  EXPECT_DOUBLE_EQ(a.grad()[0], 12.0);
}

TEST(Autograd, ShapeErrors) {
  auto a = ag::constant(Matrix(2, 3)), b = ag::constant(Matrix(2, 3));
  EXPECT_THROW(ag::matmul(a, b), ShapeError);
  EXPECT_THROW(ag::add(a, ag::constant(Matrix(3, 2))), ShapeError);
}
