// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number of failures.
#include "bcmppi/bc_weighting.hpp"
#include "bcmppi/experiment.hpp"
#include "bcmppi/mlp.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>

using namespace bcmppi;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_s) {
    o.pass = false;
    o.detail += " [runtime " + std::to_string(secs) + " s over budget " + std::to_string(budget_s) + " s]";
  }
  failures += o.pass ? 0 : 1;
  std::cout << "criterion " << std::setw(2) << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << name << " ("
            << std::fixed << std::setprecision(1) << secs << " s): " << o.detail << std::endl;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

ExperimentConfig load_config(const std::string& name) {
  const fs::path path = fs::path(BCMPPI_CONFIG_DIR) / name;
  ExperimentConfig c = config_from_json(read_json_file(path.string()));
  anchor_relative_paths(c, path.parent_path());
  return c;
}

double margin_oracle(const Vec3& a, const Vec3& b, double r) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += a(i) > b(i) ? a(i) - b(i) : b(i) - a(i);
  return s - r;
}

// Composite Simpson integral of the standard normal density from 0 to x.
double cdf_oracle(double x) {
  if (x == 0.0) return 0.5;
  const int n = 2 * static_cast<int>(std::ceil(std::abs(x) / 2e-3));
  const double h = x / n;
  auto phi = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
  double s = phi(0.0) + phi(x);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * phi(i * h);
  return 0.5 + s * h / 3.0;
}

State integrate(State s, const ControlInput& u, double dt, int steps, const QuadrotorParams& p) {
  for (int i = 0; i < steps; ++i) s = step(s, u, dt, p);
  return s;
}

struct Trained {
  TrainingResult result;
  std::array<std::size_t, 3> motion_counts{};
  Eigen::Index csv_rows = 0;
  std::size_t csv_columns = 0;
};

Trained generate_and_train(const ExperimentConfig& c, const fs::path& out) {
  const Scenario tmpl = resolve_scenario(c.scenario);
  const GeneratedDataset gd = generate_dataset(c.dataset, tmpl, c.quadrotor, c.mppi.dt, c.seed);
  fs::create_directories(out);
  const std::string csv = (out / "dataset.csv").string();
  write_dataset_csv(gd.data, csv);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);

  Trained t;
  t.motion_counts = gd.motion_counts;
  t.csv_columns = split_csv_line(header).size();
  const Dataset back = read_dataset_csv(csv);
  t.csv_rows = back.features.rows();
  TrainingConfig tc = c.training;
  tc.workers = c.workers;
  t.result = train(back, tc, c.seed);
  save_ensemble(t.result.ensemble, (out / "model.json").string());
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BC-MPPI acceptance run"};
  double violation_threshold = 0.10;
  std::string out_dir = (fs::temp_directory_path() / "bcmppi_acceptance").string();
  app.add_option("--violation-threshold", violation_threshold, "Allowed fraction of BC-MPPI episodes with a collision");
  app.add_option("-o,--out", out_dir, "Scratch directory for datasets, models and metrics");
  CLI11_PARSE(app, argc, argv);
  const fs::path out(out_dir);

  criterion(1, "unit feasibility reproduces classic closed loop", 30, [] {
    ExperimentConfig c = load_config("moving5.json");
    EpisodeConfig classic = episode_config(c, resolve_scenario(c.scenario));
    classic.controller = ControllerKind::kClassicMppi;
    classic.duration = 10.0;
    EpisodeConfig bc = classic;
    bc.controller = ControllerKind::kBcMppi;
    bc.feasibility = [](const State&, const ControlPlan&) { return 1.0; };
    const EpisodeResult a = run_episode(classic), b = run_episode(bc);
    const bool same = a.trace == b.trace && a.metrics.same_outcome(b.metrics) && a.trace.size() == 500;
    return Outcome{same, std::to_string(a.trace.size()) + " steps, traces " + (same ? "bit-identical" : "differ")};
  });

  criterion(2, "weight normalization, shift invariance, temperature limits", 600, [] {
    auto rng = RandomStream(202).engine();
    double worst_sum = 0.0, worst_shift = 0.0, worst_hot = 0.0, worst_cold = 0.0;
    for (int k : {1, 100, 1500}) {
      std::vector<double> ones(static_cast<std::size_t>(k), 1.0);
      for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> costs(static_cast<std::size_t>(k)), shifted(costs.size());
        const double shift = uniform(rng, -1e3, 1e3);
        for (std::size_t i = 0; i < costs.size(); ++i) {
          costs[i] = uniform(rng, 0.0, 50.0);
          shifted[i] = costs[i] + shift;
        }
        const double lambda = std::exp(uniform(rng, std::log(0.05), std::log(50.0)));
        const auto w = compute_weights(costs, lambda, ones).evaluations;
        const auto ws = compute_weights(shifted, lambda, ones).evaluations;
        double sum = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
          sum += w[i].normalized_weight;
          worst_shift = std::max(worst_shift, std::abs(w[i].normalized_weight - ws[i].normalized_weight));
        }
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        if (trial % 100 == 0) {
          for (const auto& e : compute_weights(costs, 1e9, ones).evaluations) {
            worst_hot = std::max(worst_hot, std::abs(e.normalized_weight - 1.0 / k));
          }
          const auto best = static_cast<std::size_t>(std::min_element(costs.begin(), costs.end()) - costs.begin());
          worst_cold = std::max(worst_cold, 1.0 - compute_weights(costs, 1e-9, ones).evaluations[best].normalized_weight);
        }
      }
    }
    const bool ok = worst_sum <= 1e-12 && worst_shift <= 1e-12 && worst_hot <= 1e-6 && worst_cold <= 1e-6;
    return Outcome{ok, "max |sum-1| " + fmt(worst_sum) + ", max shift change " + fmt(worst_shift) +
                           ", lambda=1e9 max |w-1/K| " + fmt(worst_hot) + ", lambda=1e-9 best-sample shortfall " +
                           fmt(worst_cold)};
  });

  criterion(3, "penalty values, margin oracle, translation invariance", 600, [] {
    auto rng = RandomStream(303).engine();
    std::size_t mismatches = 0, bad_penalty = 0;
    double worst_translation = 0.0;
    for (int i = 0; i < 100000; ++i) {
      Vec3 a, b, shift;
      for (int j = 0; j < 3; ++j) {
        a(j) = uniform(rng, -5, 5);
        b(j) = uniform(rng, -5, 5);
        shift(j) = uniform(rng, -5, 5);
      }
      const double r = uniform(rng, 0.01, 3.0);
      const double d = l1_margin(a, b, r);
      mismatches += d == margin_oracle(a, b, r) ? 0 : 1;
      const double p = penalty_term(d);
      bad_penalty += ((p == 0.0 || p == 1000.0) && ((p == 1000.0) == (d < 0.0))) ? 0 : 1;
      worst_translation = std::max(worst_translation, std::abs(l1_margin(a + shift, b + shift, r) - d));
    }
    const bool ok = mismatches == 0 && bad_penalty == 0 && worst_translation <= 1e-12;
    return Outcome{ok, std::to_string(mismatches) + " oracle mismatches, " + std::to_string(bad_penalty) +
                           " bad penalties, max translation change " + fmt(worst_translation)};
  });

  criterion(4, "normal CDF against numerical integration", 600, [] {
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const double x = -8.0 + 16.0 * i / 9999.0;
      worst = std::max(worst, std::abs(normal_cdf(x) - cdf_oracle(x)));
    }
    return Outcome{worst <= 1e-7, "max abs error " + fmt(worst) + " over 1e4 points in [-8, 8]"};
  });

  Trained moving;
  criterion(5, "dataset generation and surrogate training protocol", 600, [&] {
    moving = generate_and_train(load_config("moving5.json"), out / "moving5");
    const auto& rep = moving.result.report;
    const bool ok = moving.motion_counts == std::array<std::size_t, 3>{400, 400, 200} && moving.csv_rows == 1000 &&
                    moving.csv_columns == 114 && rep.train_size == 700 && rep.test_size == 300 && rep.test.r2 > 0.0;
    return Outcome{ok, "motions " + std::to_string(moving.motion_counts[0]) + "/" +
                           std::to_string(moving.motion_counts[1]) + "/" + std::to_string(moving.motion_counts[2]) +
                           ", csv " + std::to_string(moving.csv_rows) + "x" + std::to_string(moving.csv_columns) +
                           ", split " + std::to_string(rep.train_size) + "/" + std::to_string(rep.test_size) +
                           ", held-out R2 " + fmt(rep.test.r2) + " MSE " + fmt(rep.test.mse)};
  });

  criterion(6, "backpropagation matches central differences", 600, [] {
    const Mlp net = Mlp::glorot({kFeatureDim, 64, 64, 1}, RandomStream(606));
    auto rng = RandomStream(607).engine();
    Eigen::MatrixXd x(kFeatureDim, 16);
    Eigen::RowVectorXd y(16);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = uniform(rng, -2, 2);
      y(j) = uniform(rng, -1, 1);
    }
    MlpGradients g;
    net.loss_and_gradients(x, y, g);
    auto loss = [&](const Mlp& m) {
      MlpGradients unused;
      return m.loss_and_gradients(x, y, unused);
    };
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      const auto& w = net.layers()[l].weight;
      for (int t = 0; t < 20; ++t) {
        const auto r = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(w.rows()));
        const auto c = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(w.cols()));
        Mlp plus = net, minus = net;
        plus.mutable_layers()[l].weight(r, c) += h;
        minus.mutable_layers()[l].weight(r, c) -= h;
        const double fd = (loss(plus) - loss(minus)) / (2 * h);
        const double a = g.weight[l](r, c);
        worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
      }
    }
    return Outcome{worst <= 1e-4, "max relative error " + fmt(worst) + " over 20 weights in each of " +
                                      std::to_string(net.layers().size()) + " layers"};
  });

  criterion(7, "lower feasibility never raises a sample's weight", 600, [] {
    auto rng = RandomStream(707).engine();
    int violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const int k = 2 + static_cast<int>(uniform01(rng) * 200);
      std::vector<double> costs(static_cast<std::size_t>(k)), feas(costs.size());
      for (std::size_t i = 0; i < costs.size(); ++i) {
        costs[i] = uniform(rng, 0, 30);
        feas[i] = uniform01(rng);
      }
      const auto j = static_cast<std::size_t>(uniform01(rng) * k);
      const double before = compute_weights(costs, 1.0, feas).evaluations[j].normalized_weight;
      feas[j] *= uniform01(rng);
      const double after = compute_weights(costs, 1.0, feas).evaluations[j].normalized_weight;
      violations += after > before ? 1 : 0;
    }
    return Outcome{violations == 0, std::to_string(violations) + " increases in 1000 trials"};
  });

  criterion(8, "controller ordering on the moving five-obstacle scenario", 1800, [&] {
    ExperimentConfig c = load_config("moving5.json");
    const SurrogateEnsemble model = load_ensemble((out / "moving5" / "model.json").string());
    EpisodeConfig base = episode_config(c, resolve_scenario(c.scenario));
    base.feasibility = surrogate_feasibility({&model});
    SweepSpec spec;
    spec.k_values = c.sweep.k_values;
    spec.n_seeds = c.sweep.n_seeds;
    spec.controllers = c.sweep.controllers;
    const auto rows = run_sweep(base, spec);
    write_metrics_csv(rows, (out / "moving5" / "sweep_metrics.csv").string());
    std::map<ControllerKind, std::array<double, 4>> sums;  // final distance, collisions, rejection, failures
    for (const auto& r : rows) {
      auto& s = sums[r.controller];
      s[0] += r.metrics.final_target_distance;
      s[1] += r.metrics.collision_events;
      s[2] += r.metrics.rejection_rate;
      s[3] += r.metrics.failed ? 1 : 0;
    }
    const double n = static_cast<double>(spec.n_seeds);
    const auto& bc = sums[ControllerKind::kBcMppi];
    const auto& classic = sums[ControllerKind::kClassicMppi];
    const auto& penalty = sums[ControllerKind::kMppiPenalty];
    const bool a = bc[0] / n < penalty[0] / n;
    const bool b = bc[1] <= classic[1];
    const bool cc = bc[2] / n <= classic[2] / n;
    const bool none_failed = bc[3] + classic[3] + penalty[3] == 0;
    std::ostringstream d;
    d << rows.size() << " episodes at K=" << spec.k_values.front() << "; (a) final distance bc " << fmt(bc[0] / n)
      << " vs penalty " << fmt(penalty[0] / n) << (a ? " ok" : " NOT LOWER") << "; (b) collisions bc " << bc[1]
      << " vs classic " << classic[1] << (b ? " ok" : " MORE") << "; (c) rejection bc " << fmt(bc[2] / n)
      << " vs classic " << fmt(classic[2] / n) << (cc ? " ok" : " HIGHER");
    if (!none_failed) d << "; some episodes failed";
    return Outcome{a && b && cc && none_failed, d.str()};
  });

  criterion(9, "collision-episode fraction on the stationary three-obstacle K sweep", 3600, [&] {
    ExperimentConfig c = load_config("stationary3_ksweep.json");
    const Trained t = generate_and_train(c, out / "stationary3");
    EpisodeConfig base = episode_config(c, resolve_scenario(c.scenario));
    base.feasibility = surrogate_feasibility({&t.result.ensemble});
    SweepSpec spec;
    spec.k_values = c.sweep.k_values;
    spec.n_seeds = c.sweep.n_seeds;
    spec.controllers = {ControllerKind::kBcMppi};
    const auto rows = run_sweep(base, spec);
    write_metrics_csv(rows, (out / "stationary3" / "sweep_metrics.csv").string());
    std::size_t colliding = 0, failed = 0;
    for (const auto& r : rows) {
      colliding += r.metrics.collision_events > 0 ? 1 : 0;
      failed += r.metrics.failed ? 1 : 0;
    }
    const double fraction = static_cast<double>(colliding) / static_cast<double>(rows.size());
    return Outcome{fraction <= violation_threshold && failed == 0,
                   std::to_string(colliding) + "/" + std::to_string(rows.size()) + " episodes collided (" +
                       fmt(fraction) + ", threshold " + fmt(violation_threshold) + "), surrogate held-out R2 " +
                       fmt(t.result.report.test.r2)};
  });

  criterion(10, "one worker and eight workers give identical episodes", 600, [&] {
    ExperimentConfig c = load_config("moving5.json");
    const SurrogateEnsemble model = load_ensemble((out / "moving5" / "model.json").string());
    bool all_same = true;
    std::string detail;
    for (ControllerKind kind : {ControllerKind::kClassicMppi, ControllerKind::kMppiPenalty, ControllerKind::kBcMppi}) {
      EpisodeConfig e = episode_config(c, resolve_scenario(c.scenario));
      e.controller = kind;
      e.duration = 4.0;
      e.seed = 11;
      e.feasibility = surrogate_feasibility({&model});
      e.keep_diagnostics = true;
      e.workers = 1;
      const EpisodeResult one = run_episode(e);
      e.workers = 8;
      const EpisodeResult eight = run_episode(e);
      const bool same = one.trace == eight.trace && one.metrics.same_outcome(eight.metrics) &&
                        one.diagnostics == eight.diagnostics;
      all_same = all_same && same;
      detail += std::string(to_string(kind)) + (same ? " identical; " : " DIFFERS; ");
    }
    return Outcome{all_same, detail};
  });

  criterion(11, "hover drift, RK4 order, quaternion norm", 600, [] {
    QuadrotorParams p;
    const State h0 = State::hover_at({0.3, -0.7, 2.0});
    const double drift = (integrate(h0, ControlInput::hover(p), 0.02, 50, p).position - h0.position).norm();

    State s0 = State::hover_at({0, 0, 2});
    s0.attitude = Eigen::Quaterniond(Eigen::AngleAxisd(0.2, Vec3(1, 1, 0).normalized()));
    s0.linear_velocity = Vec3(0.5, -0.3, 0.2);
    s0.angular_velocity = Vec3(0.4, -0.6, 0.3);
    const ControlInput u{Thrusts(1.6, 2.2, 1.9, 2.4)};
    const State ref = integrate(s0, u, 0.02 / 64, 64 * 25, p);
    const double e1 = (integrate(s0, u, 0.02, 25, p).to_vector() - ref.to_vector()).norm();
    const double e2 = (integrate(s0, u, 0.01, 50, p).to_vector() - ref.to_vector()).norm();

    QuadrotorParams weightless = p;
    weightless.gravity = 1e-6;  // keeps the long torque-free tumble inside the divergence bound
    State s = State::hover_at({0, 0, 0});
    s.angular_velocity = Vec3(1.0, 0.5, 2.0);
    double worst_norm = 0.0;
    for (int i = 0; i < 100000; ++i) {
      s = step(s, ControlInput{}, 0.02, weightless);
      worst_norm = std::max(worst_norm, std::abs(s.attitude.norm() - 1.0));
    }
    const bool ok = drift < 1e-9 && e1 / e2 >= 8.0 && worst_norm <= 1e-9;
    return Outcome{ok, "hover drift " + fmt(drift) + " m, error ratio on halving " + fmt(e1 / e2) +
                           ", max | |q| - 1 | " + fmt(worst_norm)};
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures;
}
