#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"

using namespace gps;

namespace {

// Batch-hard oracle enumerating every (anchor, positive, negative) pair.
double triplet_oracle(const std::vector<double>& x, const std::vector<int>& ids, double margin) {
  const auto b = x.size();
  double total = 0;
  for (std::size_t a = 0; a < b; ++a) {
    double hp = -1, hn = 1e300;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == a) continue;
      const double d = std::abs(x[a] - x[j]);
      if (ids[j] == ids[a]) hp = std::max(hp, d);
      else hn = std::min(hn, d);
    }
    total += std::max(0.0, hp - hn + margin);
  }
  return total / double(b);
}

Matd column(std::initializer_list<double> v) {
  Matd m(Eigen::Index(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

}  // namespace

TEST(AttributeLoss, ZeroLogitsIsLn2) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    Matd y = (fixtures::random_matrix(3, 6, s, 0, 1).array() > 0.5).cast<double>();
    EXPECT_NEAR(attribute_loss<double>(Matd::Zero(3, 6), y).value, std::log(2.0), 1e-9);
  }
}

TEST(AttributeLoss, SaturatedCorrectIsTiny) {
  Matd y(2, 3);
  y << 1, 0, 1, 0, 0, 1;
  Matd x = (2 * y.array() - 1) * 20;
  auto r = attribute_loss<double>(x, y);
  EXPECT_LE(r.value, 1e-8);
  EXPECT_TRUE(r.grad.allFinite());
  // far past saturation stays finite
  EXPECT_TRUE(std::isfinite(attribute_loss<double>(Matd(x * 50), y).value));
  EXPECT_NEAR(attribute_loss<double>(Matd(-x * 50), y).value, 1000.0, 1e-9);
}

TEST(AttributeLoss, ScalarOracle) {
  Matd x(1, 2), y(1, 2);
  x << 1, -1;
  y << 1, 0;
  const double oracle = std::log(1 + std::exp(-1.0));
  EXPECT_NEAR(attribute_loss<double>(x, y).value, oracle, 1e-12);
  EXPECT_NEAR(oracle, 0.313262, 1e-6);
}

TEST(AttributeLoss, NonBinaryLabelRejected) {
  Matd y = Matd::Constant(1, 2, 0.5);
  EXPECT_THROW(attribute_loss<double>(Matd::Zero(1, 2), y), InvalidArgument);
}

TEST(AttributeLoss, ColumnPermutationInvariant) {
  std::mt19937_64 rng(3);
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto x = fixtures::random_matrix(4, 7, s, -3, 3);
    Matd y = (fixtures::random_matrix(4, 7, s + 50, 0, 1).array() > 0.5).cast<double>();
    Eigen::PermutationMatrix<Eigen::Dynamic> p(7);
    p.setIdentity();
    std::shuffle(p.indices().data(), p.indices().data() + 7, rng);
    Matd xp = x * p, yp = y * p;
    EXPECT_NEAR(attribute_loss<double>(xp, yp).value, attribute_loss<double>(x, y).value, 1e-12);
  }
}

TEST(IdentityLogits, ZeroHeadIsUniform) {
  IdentityHead<double> h{Matd::Zero(5, 4), Vecd::Zero(5), true};
  auto p = identity_logits<double>(Vecd::Ones(2), Vecd::Ones(2), h);
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(p(c), 0.2, 1e-15);
}

TEST(IdentityLogits, LargeLogitIsOneHot) {
  Vecd z = Vecd::Zero(4);
  z(0) = 50;
  auto p = softmax<double>(z);
  EXPECT_NEAR(p(0), 1.0, 1e-9);
  for (int c = 1; c < 4; ++c) EXPECT_NEAR(p(c), 0.0, 1e-9);
}

TEST(IdentityLogits, ThreeClassOracle) {
  Vecd z(3);
  z << 1, 2, 3;
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  auto p = softmax<double>(z);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(p(c), std::exp(double(c + 1)) / denom, 1e-15);
  EXPECT_NEAR(p(0), 0.090031, 1e-6);
  EXPECT_NEAR(p(1), 0.244728, 1e-6);
  EXPECT_NEAR(p(2), 0.665241, 1e-6);
}

TEST(IdentityLogits, HeadDimMismatch) {
  IdentityHead<double> h{Matd::Zero(3, 5), Vecd::Zero(3), true};
  EXPECT_THROW(identity_scores<double>(Vecd::Ones(2), Vecd::Ones(2), h), InvalidArgument);
}

TEST(IdentityLoss, UniformIsLnC) {
  for (int c : {2, 3, 10, 751}) {
    auto r = identity_loss_from_scores<double>(Matd::Zero(2, c), {0, c - 1});
    EXPECT_NEAR(r.value, std::log(double(c)), 1e-9);
    EXPECT_NEAR(identity_loss<double>(Matd::Constant(1, c, 1.0 / c), Matd(Vecd::Unit(c, 0).transpose())),
                std::log(double(c)), 1e-9);
  }
}

TEST(IdentityLoss, PerfectPredictionIsZero) {
  Matd q = Matd::Identity(3, 3);
  EXPECT_EQ(identity_loss<double>(q, q), 0.0);
}

TEST(IdentityLoss, ThreeClassOracle) {
  Matd s(1, 3);
  s << 1, 2, 3;
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  const double oracle = -std::log(std::exp(3.0) / denom);
  EXPECT_NEAR(identity_loss_from_scores<double>(s, {2}).value, oracle, 1e-12);
  EXPECT_NEAR(oracle, 0.407606, 1e-6);
}

TEST(IdentityLoss, ZeroTrueProbabilityRejected) {
  Matd p(1, 2), q(1, 2);
  p << 1, 0;
  q << 0, 1;
  EXPECT_THROW(identity_loss<double>(p, q), InvalidArgument);
}

TEST(IdentityLoss, LogSoftmaxConsistency) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Matd scores = fixtures::random_matrix(1, 6, s, -10, 10);
    const int t = int(s % 6);
    Vecd p = softmax<double>(scores.row(0).transpose());
    EXPECT_NEAR(identity_loss_from_scores<double>(scores, {t}).value, -std::log(p(t)), 1e-10);
  }
}

TEST(TripletLoss, IdenticalEmbeddingsGiveMargin) {
  for (double m : {0.3, 1.0, 2.5}) {
    auto r = triplet_loss<double>(Matd::Constant(6, 3, 0.7), {0, 0, 1, 1, 2, 2}, m);
    EXPECT_NEAR(r.value, m, 1e-12);
  }
}

TEST(TripletLoss, SeparatedClustersGiveZero) {
  auto r = triplet_loss<double>(column({0, 0, 5, 5}), {0, 0, 1, 1}, 0.3);
  EXPECT_EQ(r.value, 0.0);
}

TEST(TripletLoss, OneDimensionalExample) {
  auto e = column({0, 0.1, 1.0, 1.1});
  std::vector<int> ids{0, 0, 1, 1};
  EXPECT_EQ(triplet_loss<double>(e, ids, 0.3).value, 0.0);
  EXPECT_EQ(triplet_oracle({0, 0.1, 1.0, 1.1}, ids, 0.3), 0.0);
  // nearest negatives are 1.0, 0.9, 0.9, 1.0 away: terms 0.1, 0.2, 0.2, 0.1
  const double oracle = triplet_oracle({0, 0.1, 1.0, 1.1}, ids, 1.0);
  EXPECT_NEAR(oracle, 0.15, 1e-12);
  EXPECT_NEAR(triplet_loss<double>(e, ids, 1.0).value, oracle, 1e-12);
}

TEST(TripletLoss, MatchesOracleOnRandomBatches) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto e = fixtures::random_matrix(8, 1, s, -2, 2);
    std::vector<double> x(e.data(), e.data() + 8);
    std::vector<int> ids{0, 0, 1, 1, 2, 2, 3, 3};
    EXPECT_NEAR(triplet_loss<double>(e, ids, 0.5).value, triplet_oracle(x, ids, 0.5), 1e-12);
  }
}

TEST(TripletLoss, TranslationInvariant) {
  std::vector<int> ids{0, 0, 1, 1, 2, 2};
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto e = fixtures::random_matrix(6, 4, s);
    Vecd shift = fixtures::random_matrix(4, 1, s + 99, -10, 10);
    Matd moved = e.rowwise() + shift.transpose();
    EXPECT_NEAR(triplet_loss<double>(moved, ids, 0.3).value, triplet_loss<double>(e, ids, 0.3).value,
                1e-10);
  }
}

TEST(TripletLoss, ScalingNeverShrinksPositiveTerms) {
  std::vector<int> ids{0, 0, 1, 1, 2, 2};
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto e = fixtures::random_matrix(6, 3, s);
    for (double c : {1.5, 3.0}) {
      // margin 0: each pre-clamp term scales by c
      for (int a = 0; a < 6; ++a) {
        auto term = [&](const Matd& m) {
          double hp = -1, hn = 1e300;
          for (int j = 0; j < 6; ++j) {
            if (j == a) continue;
            const double d = (m.row(a) - m.row(j)).norm();
            if (ids[std::size_t(j)] == ids[std::size_t(a)]) hp = std::max(hp, d);
            else hn = std::min(hn, d);
          }
          return hp - hn;
        };
        const double t0 = term(e);
        if (t0 > 0) {
          EXPECT_GE(term(Matd(c * e)), t0);
        }
      }
      EXPECT_GE(triplet_loss<double>(Matd(c * e), ids, 0.0).value,
                triplet_loss<double>(e, ids, 0.0).value - 1e-12);
    }
  }
}

TEST(TripletLoss, PkStructureEnforced) {
  EXPECT_THROW(triplet_loss<double>(Matd::Zero(3, 2), {0, 0, 1}, 0.3), InvalidArgument);
  EXPECT_THROW(triplet_loss<double>(Matd::Zero(2, 2), {0, 0}, 0.3), InvalidArgument);
  EXPECT_THROW(triplet_loss<double>(Matd::Zero(3, 2), {0, 0}, 0.3), InvalidArgument);
  EXPECT_THROW(parse_mining("semi"), ConfigError);
}

TEST(TripletLoss, AllMiningAveragesTriplets) {
  // 2 anchors per id x 1 positive x 2 negatives = 8 triplets
  auto e = column({0, 0.1, 1.0, 1.1});
  double sum = 0;
  std::vector<double> x{0, 0.1, 1.0, 1.1};
  std::vector<int> ids{0, 0, 1, 1};
  for (int a = 0; a < 4; ++a)
    for (int p = 0; p < 4; ++p) {
      if (p == a || ids[std::size_t(p)] != ids[std::size_t(a)]) continue;
      for (int n = 0; n < 4; ++n)
        if (ids[std::size_t(n)] != ids[std::size_t(a)])
          sum += std::max(0.0, std::abs(x[std::size_t(a)] - x[std::size_t(p)]) -
                                   std::abs(x[std::size_t(a)] - x[std::size_t(n)]) + 1.0);
    }
  EXPECT_NEAR(triplet_loss<double>(e, ids, 1.0, TripletMining::all).value, sum / 8, 1e-12);
}

TEST(CenterLoss, AtCentersIsZeroAndUpdateIsNoop) {
  Matd c = fixtures::random_matrix(3, 2, 1);
  Matd e(3, 2);
  e << c.row(2), c.row(0), c.row(2);
  std::vector<int> ids{2, 0, 2};
  EXPECT_EQ(center_loss<double>(e, ids, c).value, 0.0);
  CenterState<double> st{c, 0.5};
  update_centers(st, e, ids);
  EXPECT_EQ(st.centers, c);
}

TEST(CenterLoss, DistanceTwo) {
  Matd c = Matd::Zero(1, 2), e(1, 2);
  e << 2, 0;
  EXPECT_EQ(center_loss<double>(e, {0}, c).value, 2.0);
}

TEST(CenterLoss, TwoSampleOracle) {
  EXPECT_EQ(center_loss<double>(column({0, 4}), {0, 0}, column({1})).value, 2.5);
}

TEST(CenterLoss, UnknownIdentity) {
  EXPECT_THROW(center_loss<double>(column({0}), {3}, column({1})), InvalidArgument);
}

TEST(CenterLoss, UpdateRuleOracle) {
  CenterState<double> st{column({1, 10}), 0.5};
  update_centers(st, column({0, 4}), {0, 0});
  // c - 0.5 * ((1-0) + (1-4)) / 3
  EXPECT_NEAR(st.centers(0, 0), 1 - 0.5 * (-2.0) / 3.0, 1e-15);
  EXPECT_EQ(st.centers(1, 0), 10.0);
}

TEST(TotalLoss, WeightedSum) {
  LossParts<double> p{1, 2, 3, 4};
  EXPECT_NEAR(total_loss(p, LossWeights{1, 1, 0.0005, 1}), 7.0015, 1e-12);
  EXPECT_EQ(total_loss(p, LossWeights{1, 0, 0, 0}), 1.0);
  EXPECT_EQ(total_loss(p, LossWeights{0, 0, 0, 0}), 0.0);
}

TEST(TotalLoss, LinearInEachWeight) {
  LossParts<double> p{0.7, 1.3, 9.1, 0.4};
  LossWeights base{1, 1, 0.0005, 1};
  for (int k = 0; k < 4; ++k) {
    auto at = [&](double v) {
      LossWeights w = base;
      (k == 0 ? w.id : k == 1 ? w.triplet : k == 2 ? w.center : w.attribute) = v;
      return total_loss(p, w);
    };
    EXPECT_NEAR(at(2.0) - at(1.0), at(3.0) - at(2.0), 1e-12);
  }
  EXPECT_THROW((LossWeights{-1, 1, 1, 1}.validate()), ConfigError);
}
