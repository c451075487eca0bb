#include "bcmppi/surrogate.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

using namespace bcmppi;

namespace {

// Phi(x) = 1/2 + integral_0^x phi(t) dt by composite Simpson with panels of at most 1e-3.
double cdf_oracle(double x) {
  if (x == 0.0) return 0.5;
  const int n = 2 * static_cast<int>(std::ceil(std::abs(x) / 2e-3));
  const double h = x / n;
  auto phi = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
  double s = phi(0.0) + phi(x);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * phi(i * h);
  return 0.5 + s * h / 3.0;
}

// Member whose output is the constant c regardless of input.
Mlp constant_member(double c) {
  DenseLayer hidden{Eigen::MatrixXd::Zero(2, kFeatureDim), Eigen::VectorXd::Zero(2)};
  DenseLayer out{Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Constant(1, c)};
  return Mlp({hidden, out});
}

SurrogateEnsemble stub_ensemble(std::vector<double> outputs) {
  SurrogateEnsemble e;
  for (double c : outputs) e.members.push_back(constant_member(c));
  e.standardizer.mean = Eigen::VectorXd::Zero(kFeatureDim);
  e.standardizer.std = Eigen::VectorXd::Ones(kFeatureDim);
  return e;
}

Dataset random_dataset(int rows, std::uint64_t seed) {
  auto rng = RandomStream(seed).engine();
  std::normal_distribution<double> normal;
  Dataset d{Eigen::MatrixXd(rows, kFeatureDim), Eigen::VectorXd(rows)};
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < kFeatureDim; ++j) d.features(i, j) = normal(rng);
  }
  d.targets.setZero();
  return d;
}

FeatureVector random_feature(std::mt19937_64& rng) {
  FeatureVector f(kFeatureDim);
  for (int j = 0; j < kFeatureDim; ++j) f(j) = uniform(rng, -3, 3);
  return f;
}

}  // namespace

TEST(NormalCdf, Examples) {
  EXPECT_EQ(normal_cdf(0.0), 0.5);
  EXPECT_NEAR(normal_cdf(-1.6448536), 0.05, 1e-6);
  EXPECT_NEAR(cdf_oracle(-1.6448536), 0.05, 1e-6);
  EXPECT_NEAR(normal_cdf(8.0), 1.0, 1e-12);
}

TEST(NormalCdf, MatchesIntegrationOracleOnGrid) {
  double worst = 0.0;
  double prev = -1.0;
  for (int i = 0; i < 10000; ++i) {
    const double x = -8.0 + 16.0 * i / 9999.0;
    const double v = normal_cdf(x);
    worst = std::max(worst, std::abs(v - cdf_oracle(x)));
    // Strict growth is checked wherever the true increment exceeds the double spacing near
    // the value; in the far upper tail consecutive values round to the same double.
    const double true_step = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI) * (16.0 / 9999.0);
    if (i > 0 && true_step > 4.0 * std::numeric_limits<double>::epsilon() * v) {
      EXPECT_GT(v, prev) << "x = " << x;
    } else {
      EXPECT_GE(v, prev) << "x = " << x;
    }
    prev = v;
  }
  EXPECT_LE(worst, 1e-7);
}

TEST(Predict, IdenticalMembersGiveSigmaFloor) {
  const auto pos = predict(stub_ensemble({0.3, 0.3, 0.3}), FeatureVector::Zero(kFeatureDim));
  EXPECT_EQ(pos.std, kSigmaFloor);
  EXPECT_NEAR(pos.feasibility_probability, 0.0, 1e-12);
  const auto neg = predict(stub_ensemble({-0.3, -0.3}), FeatureVector::Zero(kFeatureDim));
  EXPECT_NEAR(neg.feasibility_probability, 1.0, 1e-12);
}

TEST(Predict, ZeroMeanIsCoinFlip) {
  for (auto outs : {std::vector<double>{-1, 1}, std::vector<double>{-3, 0, 3}, std::vector<double>{0, 0}}) {
    const auto p = predict(stub_ensemble(outs), FeatureVector::Zero(kFeatureDim));
    EXPECT_EQ(p.mean, 0.0);
    EXPECT_EQ(p.feasibility_probability, 0.5);
  }
}

TEST(Predict, HandStatistics) {
  const auto p = predict(stub_ensemble({-1, 1}), FeatureVector::Zero(kFeatureDim));
  EXPECT_EQ(p.mean, 0.0);
  EXPECT_EQ(p.std, 1.0);
  SurrogateEnsemble scaled = stub_ensemble({1, 2, 3});
  scaled.label_offset = 0.5;
  scaled.label_scale = 2.0;
  const auto q = predict(scaled, FeatureVector::Zero(kFeatureDim));
  EXPECT_NEAR(q.mean, 0.5 + 2.0 * 2.0, 1e-15);
  EXPECT_NEAR(q.std, 2.0 * std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(q.feasibility_probability, cdf_oracle(-q.mean / q.std), 1e-9);
}

TEST(Predict, PenaltyAverageUsesThreshold) {
  SurrogateEnsemble e = stub_ensemble({0.0, 2.0});
  e.label_convention = LabelConvention::kPenaltyAverage;
  e.penalty_threshold = 1.0;
  EXPECT_EQ(predict(e, FeatureVector::Zero(kFeatureDim)).feasibility_probability, 0.5);
}

TEST(Predict, MemberOrderDoesNotMatter) {
  const Dataset d = random_dataset(200, 7);
  TrainingConfig cfg;
  cfg.epochs = 3;
  Dataset labelled = d;
  labelled.targets = d.features.col(0) + 0.5 * d.features.col(1);
  SurrogateEnsemble e = train(labelled, cfg, 1).ensemble;
  SurrogateEnsemble r = e;
  std::reverse(r.members.begin(), r.members.end());
  std::rotate(r.members.begin(), r.members.begin() + 2, r.members.end());
  auto rng = RandomStream(8).engine();
  for (int i = 0; i < 50; ++i) {
    const FeatureVector f = random_feature(rng);
    const auto a = predict(e, f), b = predict(r, f);
    EXPECT_NEAR(a.mean, b.mean, 1e-12);
    EXPECT_NEAR(a.std, b.std, 1e-12);
    EXPECT_EQ(a.mean, predict(e, f).mean);
  }
}

TEST(Predict, InputErrors) {
  EXPECT_THROW(predict(SurrogateEnsemble{}, FeatureVector::Zero(kFeatureDim)), std::logic_error);
  EXPECT_THROW(predict(stub_ensemble({0, 1}), FeatureVector::Zero(112)), std::invalid_argument);
}

TEST(Standardizer, FitProperties) {
  Dataset d = random_dataset(300, 3);
  d.features.col(5).setConstant(4.2);
  d.features.col(9) = 100.0 * d.features.col(9).array() + 7.0;
  const Standardizer s = Standardizer::fit(d.features);
  EXPECT_EQ(s.std(5), kStdFloor);
  Eigen::MatrixXd z(d.features.rows(), kFeatureDim);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    z.row(i) = s.transform(d.features.row(i).transpose()).transpose();
    EXPECT_LT((s.inverse(z.row(i).transpose()) - d.features.row(i).transpose()).cwiseAbs().maxCoeff(), 1e-9);
  }
  for (int j = 0; j < kFeatureDim; ++j) {
    const double mean = z.col(j).mean();
    EXPECT_LE(std::abs(mean), 1e-9) << j;
    if (j == 5) continue;
    const double sd = std::sqrt((z.col(j).array() - mean).square().mean());
    EXPECT_NEAR(sd, 1.0, 1e-9) << j;
  }
}

TEST(Training, ConstantTarget) {
  Dataset d = random_dataset(300, 4);
  d.targets.setConstant(0.75);
  TrainingConfig cfg;
  cfg.epochs = 20;
  const auto r = train(d, cfg, 2);
  EXPECT_EQ(r.report.train_size, 210u);
  EXPECT_EQ(r.report.test_size, 90u);
  EXPECT_LE(r.report.test.mse, 1e-3);
  for (Eigen::Index i = 0; i < 20; ++i) {
    EXPECT_NEAR(predict(r.ensemble, d.features.row(i).transpose()).mean, 0.75, 1e-2);
  }
}

TEST(Training, LinearTargetOnFiveFeatures) {
  Dataset d = random_dataset(1000, 5);
  const int active[5] = {0, 13, 40, 77, 112};
  const double coef[5] = {1.0, -2.0, 0.5, 1.5, -1.0};
  for (int k = 0; k < 5; ++k) d.targets += coef[k] * d.features.col(active[k]);
  const auto r = train(d, TrainingConfig{}, 6);
  EXPECT_EQ(r.report.train_size, 700u);
  EXPECT_EQ(r.report.test_size, 300u);
  EXPECT_GE(r.report.test.r2, 0.9);
}

TEST(Training, RejectsBadInput) {
  EXPECT_THROW(train(Dataset{}, TrainingConfig{}, 1), std::invalid_argument);
  TrainingConfig one;
  one.members = 1;
  EXPECT_THROW(train(random_dataset(10, 1), one, 1), std::invalid_argument);
  Dataset wrong{Eigen::MatrixXd::Zero(10, 50), Eigen::VectorXd::Zero(10)};
  EXPECT_THROW(train(wrong, TrainingConfig{}, 1), std::invalid_argument);
}

TEST(Training, DivergenceIsReported) {
  Dataset d = random_dataset(100, 2);
  d.targets = d.features.col(0);
  TrainingConfig cfg;
  cfg.learning_rate = 1e6;
  cfg.epochs = 50;
  EXPECT_THROW(train(d, cfg, 1), TrainingDivergedError);
}

TEST(Training, SameSeedSameModel) {
  Dataset d = random_dataset(150, 9);
  d.targets = d.features.col(3);
  TrainingConfig cfg;
  cfg.epochs = 5;
  cfg.workers = 1;
  const auto a = train(d, cfg, 3);
  cfg.workers = 4;
  const auto b = train(d, cfg, 3);
  EXPECT_EQ(model_hash(a.ensemble), model_hash(b.ensemble));
  EXPECT_NE(model_hash(a.ensemble), model_hash(train(d, cfg, 4).ensemble));
}

TEST(Features, HoverLayout) {
  QuadrotorParams p;
  const auto f = features_from_rollout(State::hover_at({0, 0, 0}), ControlPlan::hover(25, 0.02, p));
  ASSERT_EQ(f.size(), 113);
  EXPECT_EQ(f(3), 1.0);
  for (int j = 13; j < 113; ++j) EXPECT_EQ(f(j), p.mass * p.gravity / 4.0);
}

TEST(Features, RoundTripAndIndexArithmetic) {
  QuadrotorParams p;
  auto rng = RandomStream(12).engine();
  State s = State::hover_at({1, -2, 3});
  s.linear_velocity = Vec3(0.1, 0.2, 0.3);
  s.angular_velocity = Vec3(-0.5, 0.0, 0.25);
  s.attitude = Eigen::Quaterniond(Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()));
  ControlPlan plan = ControlPlan::hover(25, 0.02, p);
  for (int i = 0; i < 25; ++i) {
    for (int r = 0; r < 4; ++r) plan.theta(i, r) = uniform(rng, 0, p.u_max);
  }
  const auto f = features_from_rollout(s, plan);
  const auto [s2, plan2] = unpack_features(f, 0.02);
  EXPECT_EQ(s2, s);
  EXPECT_EQ(plan2.theta, plan.theta);

  ControlPlan other = plan;
  other.theta(24, 3) += 0.5;
  const Eigen::VectorXd diff = features_from_rollout(s, other) - f;
  for (int j = 0; j < 113; ++j) {
    if (j == 13 + 24 * 4 + 3) {
      EXPECT_NE(diff(j), 0.0);
    } else {
      EXPECT_EQ(diff(j), 0.0) << j;
    }
  }
}

TEST(Features, HorizonMismatch) {
  QuadrotorParams p;
  EXPECT_THROW(features_from_rollout(State::hover_at({0, 0, 0}), ControlPlan::hover(20, 0.02, p)),
               HorizonMismatchError);
}

TEST(ModelFile, SaveLoadIsBitExact) {
  Dataset d = random_dataset(200, 10);
  d.targets = d.features.col(2) - d.features.col(50);
  TrainingConfig cfg;
  cfg.epochs = 5;
  const SurrogateEnsemble e = train(d, cfg, 11).ensemble;
  const auto path = (std::filesystem::temp_directory_path() / "bcmppi_model_roundtrip.json").string();
  save_ensemble(e, path);
  const SurrogateEnsemble back = load_ensemble(path);
  EXPECT_EQ(model_hash(back), model_hash(e));
  auto rng = RandomStream(13).engine();
  for (int i = 0; i < 100; ++i) {
    const FeatureVector f = random_feature(rng);
    const auto a = predict(e, f), b = predict(back, f);
    ASSERT_EQ(a.mean, b.mean);
    ASSERT_EQ(a.std, b.std);
    ASSERT_EQ(a.feasibility_probability, b.feasibility_probability);
  }
  std::filesystem::remove(path);
}

TEST(ModelFile, TamperingAndSingleMemberAreRejected) {
  SurrogateEnsemble e = stub_ensemble({0.1, 0.2});
  nlohmann::json doc = ensemble_to_json(e);
  EXPECT_NO_THROW(ensemble_from_json(doc));
  nlohmann::json tampered = doc;
  tampered["model"]["label_offset"] = 3.0;
  EXPECT_THROW(ensemble_from_json(tampered), ModelFormatError);

  nlohmann::json single = ensemble_to_json(stub_ensemble({0.1}));
  EXPECT_THROW(ensemble_from_json(single), ModelFormatError);

  nlohmann::json other = doc;
  other["version"] = 99;
  EXPECT_THROW(ensemble_from_json(other), ModelFormatError);
  EXPECT_THROW(load_ensemble("/nonexistent/model.json"), std::runtime_error);
}
