// Deep-ensemble surrogate of the obstacle-constraint score.
//
// Input features are the 13-dim initial state followed by the 25x4 thrust plan
// (row-major over steps, then rotors). Each member regresses the standardized
// label; the spread of member outputs is the predictive standard deviation and
// Phi((threshold - mean) / std) the probability that the constraint holds.
#pragma once

#include "bcmppi/dynamics.hpp"
#include "bcmppi/mlp.hpp"
#include "bcmppi/mppi.hpp"
#include "bcmppi/parallel.hpp"
#include "bcmppi/random.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcmppi {

inline constexpr int kSurrogateHorizon = 25;
inline constexpr int kFeatureDim = kStateDim + kSurrogateHorizon * kNumRotors;  // 113
inline constexpr double kStdFloor = 1e-8;
inline constexpr double kSigmaFloor = 1e-6;

using FeatureVector = Eigen::VectorXd;

class HorizonMismatchError : public std::invalid_argument {
 public:
  explicit HorizonMismatchError(int n)
      : std::invalid_argument("surrogate features need a horizon of " +
                              std::to_string(kSurrogateHorizon) + " steps, got " + std::to_string(n)) {}
};

class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline FeatureVector features_from_rollout(const State& initial, const ControlPlan& plan) {
  if (plan.horizon() != kSurrogateHorizon) throw HorizonMismatchError(plan.horizon());
  FeatureVector f(kFeatureDim);
  f.head<kStateDim>() = initial.to_vector();
  for (int i = 0; i < kSurrogateHorizon; ++i) {
    for (int r = 0; r < kNumRotors; ++r) f(kStateDim + i * kNumRotors + r) = plan.theta(i, r);
  }
  return f;
}

inline std::pair<State, ControlPlan> unpack_features(const FeatureVector& f, double dt) {
  if (f.size() != kFeatureDim) throw std::invalid_argument("feature vector must have 113 entries");
  State s = State::from_vector(f.head<kStateDim>());
  ControlPlan plan{PlanMatrix(kSurrogateHorizon, kNumRotors), dt};
  for (int i = 0; i < kSurrogateHorizon; ++i) {
    for (int r = 0; r < kNumRotors; ++r) plan.theta(i, r) = f(kStateDim + i * kNumRotors + r);
  }
  return {s, plan};
}

struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  /// Population statistics over the rows of `x`; std floored at 1e-8.
  static Standardizer fit(const Eigen::MatrixXd& rows) {
    if (rows.rows() == 0) throw std::invalid_argument("standardizer: no rows to fit");
    Standardizer s;
    s.mean = rows.colwise().mean().transpose();
    const Eigen::MatrixXd centered = rows.rowwise() - s.mean.transpose();
    s.std = (centered.array().square().colwise().sum() / static_cast<double>(rows.rows()))
                .sqrt()
                .transpose();
    s.std = s.std.cwiseMax(kStdFloor);
    // Constant columns: the summed mean can be off by an ulp, which the floor would amplify.
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      if (rows.col(c).minCoeff() == rows.col(c).maxCoeff()) s.mean(c) = rows(0, c);
    }
    return s;
  }

  Eigen::VectorXd transform(const Eigen::VectorXd& x) const {
    return (x - mean).cwiseQuotient(std);
  }
  Eigen::VectorXd inverse(const Eigen::VectorXd& z) const { return z.cwiseProduct(std) + mean; }

  bool operator==(const Standardizer& o) const { return mean == o.mean && std == o.std; }
};

enum class LabelConvention { kMargin, kPenaltyAverage };

inline const char* to_string(LabelConvention c) {
  return c == LabelConvention::kMargin ? "margin" : "penalty_average";
}

inline LabelConvention label_convention_from_string(const std::string& s) {
  if (s == "margin") return LabelConvention::kMargin;
  if (s == "penalty_average") return LabelConvention::kPenaltyAverage;
  throw std::invalid_argument("unknown label convention '" + s + "'");
}

struct SurrogatePrediction {
  double mean = 0.0;
  double std = kSigmaFloor;
  double feasibility_probability = 0.5;
};

struct SurrogateEnsemble {
  std::vector<Mlp> members;
  Standardizer standardizer;
  double label_offset = 0.0;
  double label_scale = 1.0;
  LabelConvention label_convention = LabelConvention::kMargin;
  double penalty_threshold = 1.0;  // standardized units, penalty_average only
  double sigma_floor = kSigmaFloor;

  bool loaded() const { return !members.empty(); }

  void validate() const {
    if (members.size() < 2) {
      throw ModelFormatError("surrogate ensemble needs at least 2 members, has " +
                             std::to_string(members.size()));
    }
    for (const auto& m : members) {
      if (m.input_dim() != kFeatureDim) throw ModelFormatError("surrogate member input width is not 113");
    }
    if (standardizer.mean.size() != kFeatureDim || standardizer.std.size() != kFeatureDim) {
      throw ModelFormatError("standardizer width is not 113");
    }
    if (!(label_scale > 0) || !(sigma_floor > 0)) throw ModelFormatError("non-positive label scale");
  }

  bool operator==(const SurrogateEnsemble&) const = default;
};

inline SurrogatePrediction predict(const SurrogateEnsemble& ens, const FeatureVector& feature) {
  if (!ens.loaded()) throw std::logic_error("surrogate model is not loaded");
  if (feature.size() != kFeatureDim) {
    throw std::invalid_argument("feature length " + std::to_string(feature.size()) +
                                " does not match 113");
  }
  const Eigen::VectorXd z = ens.standardizer.transform(feature);
  const double m = static_cast<double>(ens.members.size());
  std::vector<double> outputs;
  outputs.reserve(ens.members.size());
  for (const auto& member : ens.members) outputs.push_back(member.forward(z));
  // Sorted summation keeps the statistics invariant to member order.
  std::sort(outputs.begin(), outputs.end());
  double mean_s = 0.0;
  for (double o : outputs) mean_s += o;
  mean_s /= m;
  double var_s = 0.0;
  for (double o : outputs) var_s += (o - mean_s) * (o - mean_s);
  var_s /= m;

  SurrogatePrediction p;
  p.mean = ens.label_offset + ens.label_scale * mean_s;
  p.std = std::max(ens.label_scale * std::sqrt(var_s), ens.sigma_floor);
  if (ens.label_convention == LabelConvention::kMargin) {
    p.feasibility_probability = normal_cdf(-p.mean / p.std);
  } else {
    const double std_s = std::max(std::sqrt(var_s), ens.sigma_floor);
    p.feasibility_probability = normal_cdf((ens.penalty_threshold - mean_s) / std_s);
  }
  return p;
}

// ---------------------------------------------------------------- training

struct Dataset {
  Eigen::MatrixXd features;  // rows x 113
  Eigen::VectorXd targets;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
};

struct TrainingConfig {
  int members = 5;
  std::vector<int> hidden = {64, 64};
  int epochs = 400;
  int batch_size = 64;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double weight_decay = 0.0;  // L2 coefficient on weight matrices (biases excluded)
  // Group-lasso strength on the first layer, one group per input feature. Applied as a
  // proximal shrink after each step so uninformative inputs are driven to exactly zero.
  double input_group_penalty = 0.3;
  double train_fraction = 0.7;
  LabelConvention label_convention = LabelConvention::kMargin;
  double penalty_threshold = 1.0;
  int workers = 1;

  void validate() const {
    if (members < 2) throw std::invalid_argument("training: at least 2 ensemble members");
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("training: epochs and batch size must be >= 1");
    if (!(learning_rate > 0) || momentum < 0 || momentum >= 1 || weight_decay < 0 ||
        input_group_penalty < 0) {
      throw std::invalid_argument("training: invalid learning rate or momentum");
    }
    if (!(train_fraction > 0 && train_fraction <= 1)) {
      throw std::invalid_argument("training: train fraction must lie in (0, 1]");
    }
    for (int h : hidden) {
      if (h < 1) throw std::invalid_argument("training: hidden widths must be >= 1");
    }
  }
};

struct RegressionScores {
  double mse = std::numeric_limits<double>::quiet_NaN();
  double r2 = std::numeric_limits<double>::quiet_NaN();
};

struct TrainingReport {
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  RegressionScores train;
  RegressionScores test;
  std::vector<double> final_member_loss;  // standardized training MSE after the last epoch
};

struct TrainingResult {
  SurrogateEnsemble ensemble;
  TrainingReport report;
};

/// Seeded Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, const RandomStream& stream) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto rng = stream.engine();
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
  }
  return idx;
}

inline RegressionScores score_predictions(std::span<const double> predicted,
                                          std::span<const double> actual) {
  RegressionScores s;
  if (actual.empty()) return s;
  const double n = static_cast<double>(actual.size());
  double mean = 0.0;
  for (double a : actual) mean += a;
  mean /= n;
  double sse = 0.0;
  double sst = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    sse += (predicted[i] - actual[i]) * (predicted[i] - actual[i]);
    sst += (actual[i] - mean) * (actual[i] - mean);
  }
  s.mse = sse / n;
  s.r2 = sst > 0 ? 1.0 - sse / sst : (sse == 0 ? 1.0 : 0.0);
  return s;
}

namespace detail {

/// Proximal operator of t * sum_c ||W[:, c]||: scales each column toward zero.
inline void shrink_input_groups(Eigen::MatrixXd& w, double t) {
  for (Eigen::Index c = 0; c < w.cols(); ++c) {
    const double norm = w.col(c).norm();
    w.col(c) *= norm > t ? 1.0 - t / norm : 0.0;
  }
}

inline Mlp train_member(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y,
                        const TrainingConfig& cfg, const RandomStream& stream, double& final_loss) {
  std::vector<int> sizes{static_cast<int>(x.rows())};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(1);
  Mlp net = Mlp::glorot(sizes, stream.child(0));

  auto& layers = net.mutable_layers();
  std::vector<Eigen::MatrixXd> vel_w;
  std::vector<Eigen::VectorXd> vel_b;
  for (const auto& l : layers) {
    vel_w.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    vel_b.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }

  const auto n = static_cast<std::size_t>(x.cols());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  MlpGradients g;
  Eigen::MatrixXd xb;
  Eigen::RowVectorXd yb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = seeded_permutation(n, stream.child(1).child(static_cast<std::uint64_t>(epoch)));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      xb.resize(x.rows(), static_cast<Eigen::Index>(count));
      yb.resize(static_cast<Eigen::Index>(count));
      for (std::size_t j = 0; j < count; ++j) {
        xb.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(order[start + j]));
        yb(static_cast<Eigen::Index>(j)) = y(static_cast<Eigen::Index>(order[start + j]));
      }
      const double loss = net.loss_and_gradients(xb, yb, g);
      if (!std::isfinite(loss)) {
        throw TrainingDivergedError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
      }
      epoch_loss += loss * static_cast<double>(count);
      for (std::size_t l = 0; l < layers.size(); ++l) {
        if (cfg.weight_decay > 0) g.weight[l] += cfg.weight_decay * layers[l].weight;
        vel_w[l] = cfg.momentum * vel_w[l] - cfg.learning_rate * g.weight[l];
        vel_b[l] = cfg.momentum * vel_b[l] - cfg.learning_rate * g.bias[l];
        layers[l].weight += vel_w[l];
        layers[l].bias += vel_b[l];
      }
      if (cfg.input_group_penalty > 0) {
        shrink_input_groups(layers.front().weight, cfg.learning_rate * cfg.input_group_penalty);
      }
    }
    final_loss = epoch_loss / static_cast<double>(n);
  }
  return net;
}

}  // namespace detail

/// Seeded shuffle, train/test split, standardization fitted on the training split only,
/// then independent members trained by mini-batch gradient descent with momentum.
inline TrainingResult train(const Dataset& data, const TrainingConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("training: empty dataset");
  if (data.features.cols() != kFeatureDim) {
    throw std::invalid_argument("training: dataset has " + std::to_string(data.features.cols()) +
                                " feature columns, expected 113");
  }
  if (data.targets.size() != data.features.rows()) {
    throw std::invalid_argument("training: feature and target row counts differ");
  }
  const RandomStream root(seed);
  const std::size_t n = data.size();
  const auto order = seeded_permutation(n, root.child(0));
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(n))), 1, n);

  Eigen::MatrixXd train_rows(static_cast<Eigen::Index>(n_train), kFeatureDim);
  Eigen::VectorXd train_y(static_cast<Eigen::Index>(n_train));
  for (std::size_t i = 0; i < n_train; ++i) {
    train_rows.row(static_cast<Eigen::Index>(i)) = data.features.row(static_cast<Eigen::Index>(order[i]));
    train_y(static_cast<Eigen::Index>(i)) = data.targets(static_cast<Eigen::Index>(order[i]));
  }

  TrainingResult result;
  SurrogateEnsemble& ens = result.ensemble;
  ens.standardizer = Standardizer::fit(train_rows);
  ens.label_convention = cfg.label_convention;
  ens.penalty_threshold = cfg.penalty_threshold;
  ens.label_offset = train_y.mean();
  ens.label_scale = std::max(
      std::sqrt((train_y.array() - ens.label_offset).square().sum() / static_cast<double>(n_train)), kStdFloor);

  Eigen::MatrixXd x(kFeatureDim, static_cast<Eigen::Index>(n_train));
  for (std::size_t i = 0; i < n_train; ++i) {
    x.col(static_cast<Eigen::Index>(i)) = ens.standardizer.transform(train_rows.row(static_cast<Eigen::Index>(i)).transpose());
  }
  const Eigen::RowVectorXd y = ((train_y.array() - ens.label_offset) / ens.label_scale).matrix().transpose();

  ens.members.resize(static_cast<std::size_t>(cfg.members));
  result.report.final_member_loss.assign(static_cast<std::size_t>(cfg.members), 0.0);
  parallel_for(static_cast<std::size_t>(cfg.members), cfg.workers, [&](std::size_t m) {
    ens.members[m] = detail::train_member(x, y, cfg, root.child(1 + m), result.report.final_member_loss[m]);
  });

  auto scores_for = [&](std::size_t begin, std::size_t end) {
    std::vector<double> predicted;
    std::vector<double> actual;
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = static_cast<Eigen::Index>(order[i]);
      predicted.push_back(predict(ens, data.features.row(row).transpose()).mean);
      actual.push_back(data.targets(row));
    }
    return score_predictions(predicted, actual);
  };
  result.report.train_size = n_train;
  result.report.test_size = n - n_train;
  result.report.train = scores_for(0, n_train);
  result.report.test = scores_for(n_train, n);
  return result;
}

// ---------------------------------------------------------------- persistence

inline constexpr const char* kModelFormat = "bcmppi-surrogate";
inline constexpr int kModelVersion = 1;

/// FNV-1a 64-bit, rendered as 16 hex digits.
inline std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline nlohmann::json vector_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd json_vector(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline nlohmann::json ensemble_payload(const SurrogateEnsemble& ens) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : ens.members) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : m.layers()) {
      std::vector<double> w;
      w.reserve(static_cast<std::size_t>(l.weight.size()));
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
      }
      layers.push_back({{"rows", l.weight.rows()}, {"cols", l.weight.cols()}, {"weight", w},
                        {"bias", vector_json(l.bias)}});
    }
    members.push_back({{"layers", layers}});
  }
  return {{"members", members},
          {"standardizer", {{"mean", vector_json(ens.standardizer.mean)}, {"std", vector_json(ens.standardizer.std)}}},
          {"label_offset", ens.label_offset},
          {"label_scale", ens.label_scale},
          {"label_convention", to_string(ens.label_convention)},
          {"penalty_threshold", ens.penalty_threshold},
          {"sigma_floor", ens.sigma_floor},
          {"activation", "tanh"},
          {"feature_dim", kFeatureDim}};
}

}  // namespace detail

inline nlohmann::json ensemble_to_json(const SurrogateEnsemble& ens) {
  const nlohmann::json payload = detail::ensemble_payload(ens);
  return {{"format", kModelFormat},
          {"version", kModelVersion},
          {"content_hash", content_hash(payload.dump())},
          {"model", payload}};
}

inline std::string model_hash(const SurrogateEnsemble& ens) {
  return content_hash(detail::ensemble_payload(ens).dump());
}

inline SurrogateEnsemble ensemble_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format") != kModelFormat) throw ModelFormatError("not a surrogate model file");
    if (doc.at("version").get<int>() != kModelVersion) {
      throw ModelFormatError("unsupported model version " + doc.at("version").dump());
    }
    const auto& payload = doc.at("model");
    if (content_hash(payload.dump()) != doc.at("content_hash").get<std::string>()) {
      throw ModelFormatError("model content hash mismatch");
    }
    SurrogateEnsemble ens;
    for (const auto& jm : payload.at("members")) {
      std::vector<DenseLayer> layers;
      for (const auto& jl : jm.at("layers")) {
        const auto rows = jl.at("rows").get<Eigen::Index>();
        const auto cols = jl.at("cols").get<Eigen::Index>();
        const auto w = jl.at("weight").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(w.size()) != rows * cols) throw ModelFormatError("layer weight size mismatch");
        DenseLayer l{Eigen::MatrixXd(rows, cols), detail::json_vector(jl.at("bias"))};
        for (Eigen::Index r = 0; r < rows; ++r) {
          for (Eigen::Index c = 0; c < cols; ++c) l.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
        }
        layers.push_back(std::move(l));
      }
      ens.members.emplace_back(std::move(layers));
    }
    ens.standardizer.mean = detail::json_vector(payload.at("standardizer").at("mean"));
    ens.standardizer.std = detail::json_vector(payload.at("standardizer").at("std"));
    ens.label_offset = payload.at("label_offset").get<double>();
    ens.label_scale = payload.at("label_scale").get<double>();
    ens.label_convention = label_convention_from_string(payload.at("label_convention").get<std::string>());
    ens.penalty_threshold = payload.at("penalty_threshold").get<double>();
    ens.sigma_floor = payload.at("sigma_floor").get<double>();
    ens.validate();
    return ens;
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(std::string("malformed model file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ModelFormatError(e.what());
  }
}

inline void save_ensemble(const SurrogateEnsemble& ens, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file " + path);
  out << ensemble_to_json(ens).dump(1) << "\n";
  if (!out) throw std::runtime_error("failed writing model file " + path);
}

inline SurrogateEnsemble load_ensemble(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError("model file " + path + " is not valid JSON: " + e.what());
  }
  return ensemble_from_json(doc);
}

inline nlohmann::json report_to_json(const TrainingReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"train_size", r.train_size},
          {"test_size", r.test_size},
          {"train_mse", num(r.train.mse)},
          {"train_r2", num(r.train.r2)},
          {"test_mse", num(r.test.mse)},
          {"test_r2", num(r.test.r2)},
          {"final_member_loss", r.final_member_loss}};
}

}  // namespace bcmppi
