#include <gtest/gtest.h>

#include <cmath>

#include "mgpvae/errors.hpp"
#include "mgpvae/grad_check.hpp"
#include "mgpvae/ops.hpp"
#include "test_util.hpp"

using namespace mgpvae;
using namespace mgpvae::ad;
using testutil::random_floats;
using testutil::random_param;

namespace {

// Direct 7-loop convolution with zero padding 1, in double.
std::vector<double> naive_conv(const std::vector<float>& x, std::size_t b, std::size_t ci,
                               std::size_t d, std::size_t h, std::size_t w,
                               const std::vector<float>& wt, const std::vector<float>& bias,
                               std::size_t co, int stride) {
  const std::size_t od = (d - 1) / stride + 1, oh = (h - 1) / stride + 1, ow = (w - 1) / stride + 1;
  std::vector<double> y(b * co * od * oh * ow, 0.0);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t r = 0; r < oh; ++r)
          for (std::size_t c = 0; c < ow; ++c) {
            double acc = bias[o];
            for (std::size_t i = 0; i < ci; ++i)
              for (int kz = 0; kz < 3; ++kz)
                for (int kr = 0; kr < 3; ++kr)
                  for (int kc = 0; kc < 3; ++kc) {
                    long iz = long(z) * stride + kz - 1, ir = long(r) * stride + kr - 1,
                         ic = long(c) * stride + kc - 1;
                    if (iz < 0 || ir < 0 || ic < 0 || iz >= long(d) || ir >= long(h) || ic >= long(w))
                      continue;
                    acc += double(wt[(((o * ci + i) * 3 + kz) * 3 + kr) * 3 + kc]) *
                           x[(((n * ci + i) * d + iz) * h + ir) * w + ic];
                  }
            y[(((n * co + o) * od + z) * oh + r) * ow + c] = acc;
          }
  return y;
}

GradCheckReport check(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                      double step = 1e-2) {
  GradCheckOptions o;
  o.step = step;
  o.max_probes = 40;
  return grad_check(f, std::move(params), o);
}

}  // namespace

TEST(Conv3d, ZeroInputZeroBiasGivesZero) {
  Tensor x({2, 4, 4, 4}, 0.0f);
  Tensor y = conv3d(x, random_param({3, 2, 3, 3, 3}, 1), Tensor({3}, 0.0f), 1);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv3d, OnesKernelCountsPaddedWindow) {
  Tensor y = conv3d(Tensor({1, 4, 4, 4}, 1.0f), Tensor({1, 1, 3, 3, 3}, 1.0f), Tensor({1}, 0.0f), 1);
  ASSERT_EQ(y.shape(), (Shape{1, 4, 4, 4}));
  auto at = [&](int z, int r, int c) { return y.data()[(z * 4 + r) * 4 + c]; };
  EXPECT_EQ(at(1, 1, 1), 27.0f);
  EXPECT_EQ(at(2, 2, 1), 27.0f);
  EXPECT_EQ(at(0, 0, 0), 8.0f);
  EXPECT_EQ(at(3, 3, 3), 8.0f);
  EXPECT_EQ(at(0, 3, 0), 8.0f);
  EXPECT_EQ(at(0, 1, 1), 18.0f);  // face voxel
}

TEST(Conv3d, StrideTwoHalvesEvenExtents) {
  Tensor y = conv3d(Tensor({1, 4, 4, 4}, 1.0f), Tensor({1, 1, 3, 3, 3}, 1.0f), Tensor({1}, 0.0f), 2);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2, 2}));
}

TEST(Conv3d, StrideOnePreservesAnyExtent) {
  for (std::size_t e : {1u, 2u, 3u, 5u}) {
    Tensor y = conv3d(Tensor({1, e, e + 1, e}, 1.0f), Tensor({2, 1, 3, 3, 3}, 0.5f),
                      Tensor({2}, 0.0f), 1);
    EXPECT_EQ(y.shape(), (Shape{2, e, e + 1, e}));
  }
}

TEST(Conv3d, MatchesDirectSummation) {
  for (int stride : {1, 2}) {
    const std::size_t b = 3, ci = 2, co = 3, d = 5, h = 4, w = 6;
    auto xv = random_floats(b * ci * d * h * w, 11);
    auto wv = random_floats(co * ci * 27, 12, 0.3);
    auto bv = random_floats(co, 13);
    Tensor y = conv3d(Tensor({b, ci, d, h, w}, xv), Tensor({co, ci, 3, 3, 3}, wv), Tensor({co}, bv),
                      stride);
    auto ref = naive_conv(xv, b, ci, d, h, w, wv, bv, co, stride);
    ASSERT_EQ(y.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-4) << i;
  }
}

TEST(Conv3d, ChannelMismatchIsShapeError) {
  try {
    conv3d(Tensor({2, 4, 4, 4}), Tensor({1, 3, 3, 3, 3}), Tensor({1}), 1);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos) << e.what();
  }
}

TEST(Conv3d, GradientsMatchFiniteDifferences) {
  for (int stride : {1, 2}) {
    Tensor x = random_param({2, 2, 4, 4, 4}, 21);
    Tensor w = random_param({3, 2, 3, 3, 3}, 22, 0.3);
    Tensor b = random_param({3}, 23);
    Tensor probe({2, 3, stride == 1 ? 4u : 2u, stride == 1 ? 4u : 2u, stride == 1 ? 4u : 2u},
                 random_floats(2 * 3 * (stride == 1 ? 64 : 8), 24));
    auto f = [&] { return sum(mul(conv3d(x, w, b, stride), probe)); };
    auto r = check(f, {{"x", x}, {"w", w}, {"b", b}});
    EXPECT_TRUE(r.passed()) << r.max_rel_error();
  }
}

TEST(Conv3d, BatchGradientsIndependentOfThreadCount) {
  Tensor x = random_param({6, 2, 4, 4, 4}, 31);
  Tensor w = random_param({3, 2, 3, 3, 3}, 32);
  Tensor b = random_param({3}, 33);
  auto grads = [&](int threads) {
    set_num_threads(threads);
    w.zero_grad();
    b.zero_grad();
    sum(square(conv3d(x, w, b, 1))).backward();
    std::vector<float> g(w.grad().begin(), w.grad().end());
    g.insert(g.end(), b.grad().begin(), b.grad().end());
    return g;
  };
  const int saved = num_threads();
  auto one = grads(1);
  auto four = grads(4);
  set_num_threads(saved);
  EXPECT_EQ(one, four);
}

TEST(Upsample, ReplicatesSingleVoxel) {
  Tensor y = upsample_nearest3d(Tensor({1, 1, 1, 1}, 2.5f));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2, 2}));
  for (float v : y.data()) EXPECT_EQ(v, 2.5f);
}

TEST(Upsample, BackwardCollectsEightChildren) {
  Tensor x = random_param({2, 2, 3, 2}, 41);
  sum(upsample_nearest3d(x)).backward();
  for (float g : x.grad()) EXPECT_EQ(g, 8.0f);
}

TEST(Upsample, StrideTwoAverageRecoversInput) {
  const std::size_t c = 2, d = 3, h = 2, w = 4;
  auto xv = random_floats(c * d * h * w, 42);
  Tensor y = upsample_nearest3d(Tensor({c, d, h, w}, xv));
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t z = 0; z < d; ++z)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t q = 0; q < w; ++q) {
          double acc = 0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dr = 0; dr < 2; ++dr)
              for (int dq = 0; dq < 2; ++dq)
                acc += y.data()[((ch * 2 * d + 2 * z + dz) * 2 * h + 2 * r + dr) * 2 * w + 2 * q + dq];
          EXPECT_FLOAT_EQ(acc / 8.0, xv[((ch * d + z) * h + r) * w + q]);
        }
}

TEST(Elu, ClosedFormValuesAndGradient) {
  Tensor x = Tensor::parameter({3}, {0.0f, 1.0f, -1.0f});
  Tensor y = elu(x);
  EXPECT_EQ(y.data()[0], 0.0f);
  EXPECT_EQ(y.data()[1], 1.0f);
  EXPECT_NEAR(y.data()[2], std::exp(-1.0) - 1.0, 1e-7);
  sum(y).backward();
  EXPECT_EQ(x.grad()[1], 1.0f);
  EXPECT_NEAR(x.grad()[2], std::exp(-1.0), 1e-7);
}

TEST(Dense, IdentityWeightReturnsInput) {
  std::vector<float> eye(16, 0.0f);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0f;
  auto xv = random_floats(4, 51);
  Tensor y = dense(Tensor({4}, xv), Tensor({4, 4}, eye), Tensor({4}, 0.0f));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(y.data()[i], xv[i]);
}

TEST(Dense, OnesWeightSumsInput) {
  auto xv = random_floats(5, 52);
  Tensor y = dense(Tensor({5}, xv), Tensor({1, 5}, 1.0f), Tensor({1}, 0.0f));
  double s = 0;
  for (float v : xv) s += v;
  EXPECT_NEAR(y.data()[0], s, 1e-6);
}

TEST(Dense, WeightGradientIsOuterProduct) {
  auto xv = random_floats(4, 53);
  Tensor x({2, 2}, xv);
  Tensor w = random_param({3, 2}, 54);
  Tensor b = random_param({3}, 55);
  Tensor u({2, 3}, random_floats(6, 56));
  auto f = [&] { return sum(mul(dense(x, w, b), u)); };
  f().backward();
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 2; ++i) {
      double expect = u.data()[o] * xv[i] + u.data()[3 + o] * xv[2 + i];
      EXPECT_NEAR(w.grad()[o * 2 + i], expect, 1e-5);
    }
  auto r = check(f, {{"w", w}, {"b", b}}, 1e-3);
  EXPECT_TRUE(r.passed()) << r.max_rel_error();
}

TEST(Dense, FeatureMismatchIsShapeError) {
  EXPECT_THROW(dense(Tensor({3}), Tensor({2, 4}), Tensor({2})), ShapeError);
}

TEST(GradCheck, QuadraticIsExact) {
  Tensor x = Tensor::parameter({1}, {3.0f});
  x.zero_grad();
  square(x).backward();
  EXPECT_EQ(x.grad()[0], 6.0f);
  auto r = grad_check([&] { return square(x); }, {{"x", x}});
  ASSERT_EQ(r.entries.size(), 1u);
  EXPECT_LT(r.entries[0].max_abs_error, 1e-6);
  EXPECT_EQ(x.data()[0], 3.0f);  // restored
}

TEST(GradCheck, ConstantObjectiveHasZeroGradient) {
  Tensor x = random_param({4}, 61);
  Tensor c({4}, 2.0f);
  auto r = grad_check([&] { return sum(c); }, {{"x", x}});
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(r.entries[0].sq_analytic, 0.0);
  EXPECT_EQ(r.entries[0].sq_numeric, 0.0);
}

TEST(GradCheck, NonFiniteProbeNamesCoordinate) {
  Tensor x = Tensor::parameter({2}, {1.0f, 0.005f});
  auto r = grad_check([&] { return sum(log(x)); }, {{"x", x}});
  EXPECT_FALSE(r.passed());
  EXPECT_NE(r.entries[0].failure.find("x[1]"), std::string::npos) << r.entries[0].failure;
}

TEST(GradCheck, ImpossibleToleranceFails) {
  Tensor x = random_param({3, 4}, 62);
  GradCheckOptions o;
  o.tolerance = 1e-12;
  auto r = grad_check([&] { return sum(elu(matmul_nt(x, x))); }, {{"x", x}}, o);
  EXPECT_FALSE(r.passed());
}

TEST(Ops, ElementwiseGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Tensor a = random_param({3, 5}, 100 + seed);
    Tensor b = random_param({3, 5}, 200 + seed);
    Tensor pos = Tensor::parameter({3, 5}, [&] {
      auto v = random_floats(15, 300 + seed);
      for (auto& x : v) x = 0.5f + std::abs(x);
      return v;
    }());
    Tensor u({3, 5}, random_floats(15, 400 + seed));
    auto probe = [&](Tensor t) { return sum(mul(t, u)); };
    const std::vector<std::pair<const char*, std::function<Tensor()>>> cases{
        {"elu", [&] { return probe(elu(a)); }},
        {"softplus", [&] { return probe(softplus(a)); }},
        {"exp", [&] { return probe(exp(scale(a, 0.5))); }},
        {"log", [&] { return probe(log(pos)); }},
        {"square", [&] { return probe(square(a)); }},
        {"add", [&] { return probe(add(a, b)); }},
        {"sub", [&] { return probe(sub(a, b)); }},
        {"mul", [&] { return probe(mul(a, b)); }},
        {"add_scalar", [&] { return probe(add_scalar(a, 0.7)); }},
        {"matmul_nt", [&] { return sum(mul(matmul_nt(a, b), Tensor({3, 3}, 0.3f))); }},
        {"lower_factor", [&] { return sum(mul(lower_factor(reshape(slice_cols(a, 0, 3), {3, 3})), Tensor({3, 3}, random_floats(9, 7)))); }},
        {"slice_cols", [&] { return sum(square(slice_cols(a, 1, 4))); }},
    };
    for (const auto& [name, f] : cases) {
      auto r = check(f, {{"a", a}, {"b", b}, {"pos", pos}});
      EXPECT_TRUE(r.passed()) << name << " seed " << seed << " err " << r.max_rel_error();
    }
  }
}

TEST(Ops, AdjointIsLinearInTheLoss) {
  Tensor a = random_param({4, 3}, 71);
  auto grad_of = [&](const std::function<Tensor()>& f) {
    a.zero_grad();
    f().backward();
    return std::vector<float>(a.grad().begin(), a.grad().end());
  };
  auto f1 = [&] { return sum(square(elu(a))); };
  auto f2 = [&] { return sum(softplus(matmul_nt(a, a))); };
  auto g1 = grad_of(f1), g2 = grad_of(f2);
  auto g12 = grad_of([&] { return add(f1(), f2()); });
  for (std::size_t i = 0; i < g12.size(); ++i) EXPECT_NEAR(g12[i], g1[i] + g2[i], 1e-5);
}

TEST(Ops, SharedInputAccumulatesBothPaths) {
  Tensor a = Tensor::parameter({2}, {1.5f, -2.0f});
  sum(mul(a, a)).backward();
  EXPECT_EQ(a.grad()[0], 3.0f);
  EXPECT_EQ(a.grad()[1], -4.0f);
}

TEST(Ops, NonFiniteResultsAreRejected) {
  EXPECT_THROW(exp(Tensor({2}, 200.0f)), NumericalError);
  EXPECT_THROW(log(Tensor({2}, -1.0f)), NumericalError);
  EXPECT_THROW(Tensor({1}, std::vector<float>{NAN}), NumericalError);
}

TEST(Ops, ShapeMismatchIsRejected) {
  EXPECT_THROW(add(Tensor({2, 3}), Tensor({3, 2})), ShapeError);
  EXPECT_THROW(reshape(Tensor({2, 3}), {4}), ShapeError);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
}

TEST(Ops, ScalarReductionsKeepDoublePrecision) {
  std::vector<float> v(1000, 0.1f);
  v[0] = 1e7f;
  const double exact = 1e7 + 999 * static_cast<double>(0.1f);
  EXPECT_DOUBLE_EQ(sum(Tensor({1000}, v)).item(), exact);
}

TEST(Ops, GraphEvaluationIsDeterministic) {
  Tensor x = random_param({2, 1, 4, 4, 4}, 81);
  Tensor w = random_param({2, 1, 3, 3, 3}, 82);
  Tensor b = random_param({2}, 83);
  auto run = [&] {
    w.zero_grad();
    Tensor y = sum(square(elu(conv3d(x, w, b, 2))));
    y.backward();
    return std::make_pair(y.item(), std::vector<float>(w.grad().begin(), w.grad().end()));
  };
  EXPECT_EQ(run(), run());
}

TEST(Tensor, LeavesOnlyAreMutable) {
  Tensor a = random_param({2}, 91);
  Tensor b = add(a, a);
  EXPECT_NO_THROW(a.mutable_data());
  EXPECT_THROW(b.mutable_data(), ValidationError);
  Tensor d = b.detach();
  EXPECT_TRUE(d.is_leaf());
  EXPECT_FALSE(d.requires_grad());
}
