#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "gridshock/rng.hpp"
#include "gridshock/weather_effect.hpp"

using namespace gridshock;

namespace {

Tensor3<double> series(std::initializer_list<double> values) {
  Tensor3<double> x(1, values.size(), 1);
  std::size_t t = 0;
  for (double v : values) x(0, t++, 0) = v;
  return x;
}

Tensor3<double> random_tensor(std::size_t k, std::size_t t_count, std::size_t m, std::uint64_t seed,
                              bool non_negative = false) {
  Rng rng(seed);
  Tensor3<double> x(k, t_count, m);
  for (auto& v : x.data()) v = non_negative ? uniform(rng, 0.0, 5.0) : standard_normal(rng);
  return x;
}

}  // namespace

TEST(Accumulate, ZeroDecayIsWindowedSum) {
  const auto v = accumulate(series({1, 2, 3}), DecayConfig{{0.0}, 3});
  EXPECT_DOUBLE_EQ(v(0, 2, 0), 6.0);
}

TEST(Accumulate, WindowOfOneIsIdentity) {
  const auto x = random_tensor(2, 6, 2, 1);
  EXPECT_EQ(accumulate(x, DecayConfig{{0.7, 0.0}, 1}), x);
}

TEST(Accumulate, HalvingDecayByHand) {
  const auto v = accumulate(series({4, 2, 1}), DecayConfig{{std::numbers::ln2}, 3});
  EXPECT_NEAR(v(0, 2, 0), 3.0, 1e-15);
}

TEST(Accumulate, WindowTruncatedAtSeriesStart) {
  const auto v = accumulate(series({1, 2, 3}), DecayConfig{{0.0}, 24});
  EXPECT_DOUBLE_EQ(v(0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(v(0, 1, 0), 3.0);
}

TEST(Accumulate, NanInputNamesTheCell) {
  auto x = random_tensor(2, 4, 2, 3);
  x(1, 2, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    accumulate(x, DecayConfig{{0.1, 0.1}, 2});
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("unit 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("slot 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("variable 0"), std::string::npos) << msg;
  }
}

TEST(AccumulateGrad, WindowOfOneHasZeroGradient) {
  const auto r = accumulate_with_grad(random_tensor(2, 5, 2, 2), DecayConfig{{0.3, 2.0}, 1});
  for (double g : r.d_d_omega.data()) EXPECT_EQ(g, 0.0);
}

TEST(AccumulateGrad, ZeroDecayByHand) {
  const auto r = accumulate_with_grad(series({1, 2, 3}), DecayConfig{{0.0}, 3});
  EXPECT_DOUBLE_EQ(r.d_d_omega(0, 2, 0), -4.0);
  EXPECT_DOUBLE_EQ(r.value(0, 2, 0), 6.0);
}

TEST(AccumulateGrad, ValueMatchesPlainAccumulate) {
  const auto x = random_tensor(3, 9, 2, 8);
  const DecayConfig cfg{{0.4, 1.3}, 4};
  EXPECT_EQ(accumulate_with_grad(x, cfg).value, accumulate(x, cfg));
}

TEST(AccumulateGrad, MatchesCentralDifferences) {
  const auto x = random_tensor(2, 5, 2, 4);
  const DecayConfig cfg{{0.35, 1.1}, 3};
  const auto r = accumulate_with_grad(x, cfg);
  const double h = 1e-6;
  for (std::size_t m = 0; m < 2; ++m) {
    auto up = cfg, down = cfg;
    up.omega[m] += h;
    down.omega[m] -= h;
    const auto vu = accumulate(x, up);
    const auto vd = accumulate(x, down);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t t = 0; t < 5; ++t) {
        const double fd = (vu(i, t, m) - vd(i, t, m)) / (2 * h);
        const double g = r.d_d_omega(i, t, m);
        if (std::abs(g) < 1e-8) {
          EXPECT_LT(std::abs(fd - g), 1e-7);
        } else {
          EXPECT_LT(std::abs(fd - g) / std::abs(g), 1e-6) << i << "," << t << "," << m;
        }
      }
    }
  }
}

TEST(AccumulateProperties, NonIncreasingInDecayForNonNegativeInput) {
  const auto x = random_tensor(2, 10, 1, 9, true);
  const auto slow = accumulate(x, DecayConfig{{0.1}, 5});
  const auto fast = accumulate(x, DecayConfig{{0.9}, 5});
  for (std::size_t n = 0; n < x.size(); ++n) EXPECT_LE(fast.data()[n], slow.data()[n]);
}

TEST(AccumulateProperties, LargeDecayLimit) {
  const auto x = random_tensor(2, 10, 1, 10);
  const auto v = accumulate(x, DecayConfig{{50.0}, 5});
  for (std::size_t n = 0; n < x.size(); ++n) EXPECT_NEAR(v.data()[n], x.data()[n], 1e-12);
}

TEST(AccumulateProperties, Linear) {
  const auto x = random_tensor(2, 8, 2, 11);
  const auto y = random_tensor(2, 8, 2, 12);
  const DecayConfig cfg{{0.2, 0.8}, 4};
  Tensor3<double> combo = x;
  for (std::size_t n = 0; n < x.size(); ++n) combo.data()[n] = 2.5 * x.data()[n] - 0.75 * y.data()[n];
  const auto vx = accumulate(x, cfg), vy = accumulate(y, cfg), vc = accumulate(combo, cfg);
  for (std::size_t n = 0; n < x.size(); ++n) EXPECT_NEAR(vc.data()[n], 2.5 * vx.data()[n] - 0.75 * vy.data()[n], 1e-12);
}

TEST(DecayConfigCheck, RejectsBadSettings) {
  EXPECT_THROW((DecayConfig{{-0.1}, 3}.validate(1, 10)), ValidationError);
  EXPECT_THROW((DecayConfig{{0.1}, 0}.validate(1, 10)), ValidationError);
  EXPECT_THROW((DecayConfig{{0.1}, 11}.validate(1, 10)), ValidationError);
  EXPECT_THROW((DecayConfig{{0.1, 0.2}, 3}.validate(1, 10)), ValidationError);
  EXPECT_NO_THROW((DecayConfig{{0.1}, 10}.validate(1, 10)));
}

TEST(Scaler, StandardizesEachVariable) {
  const auto x = random_tensor(3, 20, 2, 13, true);
  const auto s = WeatherScaler::fit(x);
  const auto z = s.apply(x);
  for (std::size_t m = 0; m < 2; ++m) {
    double sum = 0, ss = 0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t t = 0; t < 20; ++t) {
        sum += z(i, t, m);
        ss += z(i, t, m) * z(i, t, m);
      }
    EXPECT_NEAR(sum / 60, 0.0, 1e-12);
    EXPECT_NEAR(ss / 60, 1.0, 1e-12);
  }
}

TEST(Scaler, ConstantVariableKeepsUnitScale) {
  Tensor3<double> x(2, 4, 1, 3.0);
  const auto s = WeatherScaler::fit(x);
  EXPECT_EQ(s.scale[0], 1.0);
  EXPECT_EQ(s.apply(x)(1, 3, 0), 0.0);
}
