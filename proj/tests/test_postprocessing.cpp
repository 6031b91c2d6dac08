#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "fedfact/postprocessing.hpp"

using namespace fedfact;

namespace {

FederatedDataset biased_binary_data(int per_cell_scale, uint64_t seed) {
  SyntheticSpec spec;
  spec.num_clients = 2;
  spec.num_classes = 2;
  spec.num_groups = 2;
  for (int k = 0; k < 2; ++k)
    for (int a = 0; a < 2; ++a)
      for (int y = 0; y < 2; ++y) {
        GaussianCellSpec c;
        c.client = k;
        c.group = a;
        c.label = y;
        c.mean = {y == 0 ? -1.0 : 1.0, a == 0 ? -1.0 : 1.0};
        c.var = {0.6, 0.6};
        c.count = per_cell_scale * ((a == y) ? 3 : 1);
        spec.cells.push_back(c);
      }
  return synth_gaussian_mixture(spec, seed);
}

PluginScores random_scores(int num_clients, int num_classes, int num_groups,
                           int n_per_client, uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> ud(0.05, 1.0);
  std::uniform_int_distribution<int> ad(0, num_groups - 1), yd(0, num_classes - 1);
  PluginScores s;
  s.num_classes = num_classes;
  s.num_groups = num_groups;
  s.clients.resize(num_clients);
  for (int k = 0; k < num_clients; ++k)
    for (int i = 0; i < n_per_client; ++i) {
      ScoreRow row;
      row.probs.resize(num_classes);
      double sum = 0.0;
      for (double& p : row.probs) {
        p = ud(rng);
        sum += p;
      }
      for (double& p : row.probs) p /= sum;
      row.group = ad(rng);
      row.label = yd(rng);
      s.clients[k].push_back(std::move(row));
    }
  return s;
}

DualState random_feasible_dual(const ConstraintSet& cons, double bound,
                               uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> ud(0.0, 0.5);
  auto dual = DualState::zeros(cons, bound);
  for (double& v : dual.lambda1) v = ud(rng);
  for (double& v : dual.lambda2) v = ud(rng);
  for (auto& mu : dual.mu1)
    for (double& v : mu) v = ud(rng);
  for (auto& mu : dual.mu2)
    for (double& v : mu) v = ud(rng);
  dual.project_lambda();
  for (size_t k = 0; k < dual.mu1.size(); ++k)
    dual.project_mu(static_cast<int>(k));
  return dual;
}

}  // namespace

TEST_CASE("score validation catches simplex violations") {
  PluginScores s;
  s.num_classes = 2;
  s.num_groups = 2;
  s.clients.resize(1);
  s.clients[0].push_back({{0.6, 0.4}, 0, 1});
  s.validate();
  s.clients[0].push_back({{0.8, 0.4}, 0, -1});
  CHECK_THROWS_AS(s.validate(), DataError);
  s.clients[0].back().probs = {1.2, -0.2};
  CHECK_THROWS_AS(s.validate(), DataError);
  s.clients[0].back().probs = {0.5};
  CHECK_THROWS_AS(s.validate(), DataError);
  s.clients[0].pop_back();
  s.clients[0][0].group = 7;
  CHECK_THROWS_AS(s.validate(), DataError);
}

TEST_CASE("plug-in pretraining: deterministic and accurate on separable data") {
  auto data = biased_binary_data(20, 9);
  InprocessingHyper hyper;
  hyper.rounds = 15;
  hyper.local_steps = 8;
  hyper.lr = 0.2;
  hyper.seed = 3;
  auto s1 = pretrain_plugin(data, hyper);
  auto s2 = pretrain_plugin(data, hyper);
  s1.validate();
  long long correct = 0, total = 0;
  for (int k = 0; k < 2; ++k)
    for (size_t i = 0; i < s1.clients[k].size(); ++i) {
      CHECK(s1.clients[k][i].probs == s2.clients[k][i].probs);
      ++total;
      if (argmax_lowest(s1.clients[k][i].probs) == data.clients[k][i].label)
        ++correct;
    }
  CHECK(static_cast<double>(correct) / total >= 0.9);
  // labels and groups carried through
  CHECK(s1.clients[0][0].label == data.clients[0][0].label);
  CHECK(s1.clients[1][3].group == data.clients[1][3].group);
  // stats from the labelled rows equal stats of the data
  auto st = stats_from_scores(s1);
  auto ref = compute_stats(data);
  CHECK(st.count == ref.count);
}

TEST_CASE("soft-max average: sandwich bound and constant reduction") {
  Rng rng = make_rng(41);
  std::uniform_real_distribution<double> ud(-2.0, 2.0);
  for (int rep = 0; rep < 300; ++rep) {
    int m = 2 + rep % 4;
    double beta = (rep % 3 == 0) ? 0.01 : 0.1;
    std::vector<double> x(m);
    for (double& v : x) v = ud(rng);
    double mx = *std::max_element(x.begin(), x.end());
    double s = soft_max_beta(x, beta);
    CHECK(s <= mx + 1e-12);
    CHECK(mx <= s + beta * std::log(m) + 1e-12);
  }
  CHECK(soft_max_beta({0.37, 0.37, 0.37}, 0.1) == doctest::Approx(0.37).epsilon(1e-12));
  CHECK_THROWS_AS(soft_max_beta({1.0}, 0.0), ConfigError);
}

TEST_CASE("soft-max gradient matches finite differences") {
  Rng rng = make_rng(42);
  std::uniform_real_distribution<double> ud(-1.5, 1.5);
  for (int rep = 0; rep < 100; ++rep) {
    int m = 2 + rep % 3;
    double beta = (rep % 2 == 0) ? 0.1 : 0.5;
    std::vector<double> x(m);
    for (double& v : x) v = ud(rng);
    auto g = soft_max_beta_grad(x, beta);
    for (int j = 0; j < m; ++j) {
      double h = 1e-6;
      auto xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      double fd = (soft_max_beta(xp, beta) - soft_max_beta(xm, beta)) / (2 * h);
      CHECK(g[j] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("zero-dual objective values") {
  // uniform scores: sigma_beta of the constant vector (1/m, ...) is 1/m
  PluginScores s;
  s.num_classes = 4;
  s.num_groups = 1;
  s.clients.resize(1);
  for (int i = 0; i < 10; ++i)
    s.clients[0].push_back({{0.25, 0.25, 0.25, 0.25}, 0, i % 4});
  auto st = stats_from_scores(s);
  FairnessSpec spec;
  spec.criterion = Criterion::DP;
  auto cons = build_constraint_set(spec, st, true);
  auto dual = DualState::zeros(cons, 5.0);
  CHECK(relaxed_local_objective(dual, cons, st, s, 0, 0.1, 0.01, 0.01) ==
        doctest::Approx(0.25).epsilon(1e-12));

  // confident scores: objective about the mean max probability
  auto conf = random_scores(1, 3, 2, 200, 7);
  for (auto& row : conf.clients[0]) {
    int top = argmax_lowest(row.probs);
    for (int j = 0; j < 3; ++j) row.probs[j] = (j == top) ? 0.96 : 0.02;
  }
  auto st2 = stats_from_scores(conf);
  auto cons2 = build_constraint_set(spec, st2, true);
  auto dual2 = DualState::zeros(cons2, 5.0);
  double v = relaxed_local_objective(dual2, cons2, st2, conf, 0, 0.1, 0.0, 0.0);
  CHECK(v == doctest::Approx(0.96).epsilon(0.01));
}

TEST_CASE("objective gradient matches finite differences (100 cases)") {
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    auto scores = random_scores(2, 2 + rep % 2, 2, 25, 600 + rep);
    auto st = stats_from_scores(scores);
    Criterion crit =
        (rep % 3 == 0) ? Criterion::DP : (rep % 3 == 1 ? Criterion::EOP : Criterion::EO);
    FairnessSpec spec;
    spec.criterion = crit;
    ConstraintSet cons;
    try {
      cons = build_constraint_set(spec, st, false);
    } catch (const EmptyCellError&) {
      continue;  // tiny random shard missing a cell; not the point here
    }
    double beta = (rep % 2 == 0) ? 0.1 : 0.3;
    double xi_g = 0.02, xi_l = 0.015;
    int client = rep % 2;
    auto dual = random_feasible_dual(cons, 5.0, 700 + rep);
    auto g = objective_gradient(dual, cons, st, scores, client, beta, xi_g, xi_l);

    const double h = 1e-6;
    auto eval = [&]() {
      return relaxed_local_objective(dual, cons, st, scores, client, beta, xi_g, xi_l);
    };
    auto probe = [&](std::vector<double>& coord, size_t u, const double analytic) {
      double keep = coord[u];
      double fd;
      if (keep == 0.0) {
        // the l1 term kinks at zero; the analytic gradient is the right
        // derivative there, so use a one-sided second-order stencil
        double f0 = eval();
        coord[u] = 2 * h;
        double f2 = eval();
        coord[u] = h;
        double f1 = eval();
        coord[u] = keep;
        fd = (-3 * f0 + 4 * f1 - f2) / (2 * h);
      } else {
        coord[u] = keep + h;
        double fp = eval();
        coord[u] = keep - h;
        double fm = eval();
        coord[u] = keep;
        fd = (fp - fm) / (2 * h);
      }
      double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-3});
      worst = std::max(worst, std::fabs(fd - analytic) / denom);
    };
    for (size_t u = 0; u < dual.lambda1.size(); ++u) {
      probe(dual.lambda1, u, g.lambda1[u]);
      probe(dual.lambda2, u, g.lambda2[u]);
    }
    for (size_t u = 0; u < dual.mu1[client].size(); ++u) {
      probe(dual.mu1[client], u, g.mu1[u]);
      probe(dual.mu2[client], u, g.mu2[u]);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("the l1 part of the gradient is exactly the slack") {
  auto scores = random_scores(2, 2, 2, 30, 10);
  auto st = stats_from_scores(scores);
  FairnessSpec spec;
  spec.criterion = Criterion::DP;
  auto cons = build_constraint_set(spec, st, false);
  auto dual = random_feasible_dual(cons, 5.0, 11);
  auto g0 = objective_gradient(dual, cons, st, scores, 0, 0.1, 0.0, 0.0);
  auto g1 = objective_gradient(dual, cons, st, scores, 0, 0.1, 0.3, 0.2);
  for (size_t u = 0; u < g0.lambda1.size(); ++u) {
    CHECK(g1.lambda1[u] - g0.lambda1[u] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(g1.lambda2[u] - g0.lambda2[u] == doctest::Approx(0.3).epsilon(1e-12));
  }
  double pk = st.p_k(0);
  for (size_t u = 0; u < g0.mu1.size(); ++u) {
    CHECK(g1.mu1[u] - g0.mu1[u] == doctest::Approx(0.2 / pk).epsilon(1e-12));
    CHECK(g1.mu2[u] - g0.mu2[u] == doctest::Approx(0.2 / pk).epsilon(1e-12));
  }
}

TEST_CASE("vacuous slacks keep the duals at zero and the argmax rule intact") {
  auto scores = random_scores(2, 3, 2, 60, 21);
  auto st = stats_from_scores(scores);
  FairnessSpec spec;
  spec.criterion = Criterion::DP;
  spec.xi_global = 1.0;
  spec.xi_local = 1.0;
  PostprocessingHyper hyper;
  hyper.rounds = 10;
  hyper.inner_steps = 3;
  hyper.lr_dual = 0.2;
  auto result = run_postprocessing(scores, st, spec, hyper);
  CHECK(result.classifier.dual.lambda_l1() == 0.0);
  for (int k = 0; k < 2; ++k) CHECK(result.classifier.dual.mu_l1(k) == 0.0);
  auto preds = result.classifier.predict_all(scores);
  for (int k = 0; k < 2; ++k)
    for (size_t i = 0; i < scores.clients[k].size(); ++i)
      CHECK(preds[k][i] == argmax_lowest(scores.clients[k][i].probs));
}

TEST_CASE("objective trajectory is non-increasing") {
  auto data = biased_binary_data(15, 22);
  InprocessingHyper pre;
  pre.rounds = 10;
  pre.local_steps = 6;
  pre.lr = 0.2;
  pre.seed = 5;
  auto scores = pretrain_plugin(data, pre);
  auto st = compute_stats(data);
  FairnessSpec spec;
  spec.criterion = Criterion::DP;
  spec.xi_global = 0.01;
  spec.xi_local = 0.01;
  PostprocessingHyper hyper;
  hyper.rounds = 30;
  hyper.inner_steps = 5;
  hyper.lr_dual = 0.2;
  auto result = run_postprocessing(scores, st, spec, hyper);
  REQUIRE(result.trajectory.size() == 31);
  for (size_t t = 1; t < result.trajectory.size(); ++t)
    CHECK(result.trajectory[t] <= result.trajectory[t - 1] + 1e-6);
  CHECK(result.classifier.dual.feasible());
}

TEST_CASE("calibration reduces disparity on biased data") {
  auto data = biased_binary_data(25, 23);
  InprocessingHyper pre;
  pre.rounds = 12;
  pre.local_steps = 8;
  pre.lr = 0.2;
  pre.seed = 6;
  auto scores = pretrain_plugin(data, pre);
  auto st = compute_stats(data);
  FairnessSpec spec;
  spec.criterion = Criterion::DP;
  spec.xi_global = 0.01;
  spec.xi_local = 0.01;
  auto cons = build_constraint_set(spec, st, false);

  // baseline: plain argmax of the plug-in
  std::vector<std::vector<int>> base_preds(2);
  for (int k = 0; k < 2; ++k)
    for (const auto& row : scores.clients[k])
      base_preds[k].push_back(argmax_lowest(row.probs));
  auto base_rep = evaluate_disparities(cons, compute_confusions(base_preds, data));
  CHECK(base_rep.max_global > 0.1);

  PostprocessingHyper hyper;
  hyper.rounds = 40;
  hyper.inner_steps = 5;
  hyper.lr_dual = 0.2;
  auto result = run_postprocessing(scores, st, spec, hyper);
  auto preds = result.classifier.predict_all(scores);
  auto rep = evaluate_disparities(cons, compute_confusions(preds, data));
  CHECK(rep.max_global < 0.5 * base_rep.max_global);

  auto rm = RiskMatrix::classification_error(2);
  double base_risk = risk(base_preds, data, rm);
  double cal_risk = risk(preds, data, rm);
  CHECK(cal_risk <= base_risk + 0.25);  // fairness costs some accuracy, bounded
}

TEST_CASE("predictions never read labels") {
  auto scores = random_scores(2, 3, 2, 40, 31);
  auto st = stats_from_scores(scores);
  FairnessSpec spec;
  spec.criterion = Criterion::DP;
  spec.xi_global = 0.02;
  spec.xi_local = 0.02;
  PostprocessingHyper hyper;
  hyper.rounds = 15;
  hyper.inner_steps = 4;
  hyper.lr_dual = 0.15;
  auto result = run_postprocessing(scores, st, spec, hyper);
  auto preds = result.classifier.predict_all(scores);
  auto scrambled = scores;
  for (auto& shard : scrambled.clients)
    for (auto& row : shard) row.label = (row.label + 1) % 3;
  auto preds2 = result.classifier.predict_all(scrambled);
  CHECK(preds == preds2);
}

TEST_CASE("predict hand cases: zero duals, constant shift, engineered flip") {
  auto scores = random_scores(1, 2, 2, 10, 33);
  auto st = stats_from_scores(scores);
  FairnessSpec spec;
  spec.criterion = Criterion::DP;
  auto cons = build_constraint_set(spec, st, false);
  CalibratedClassifier c;
  c.dual = DualState::zeros(cons, 5.0);
  c.constraints = cons;
  c.stats = st;
  c.spec = spec;
  CHECK(c.predict({0.6, 0.4}, 0, 0) == 0);
  CHECK(c.predict({0.5, 0.5}, 0, 0) == 0);  // tie -> lowest index

  // boost enough dual mass on a probe whose column is class 1 to flip it:
  // pick the probe (a'=0, y=1); lambda2 raises column 1 for group 0 when the
  // coefficient is positive, lambda1 lowers it
  size_t flip_u = 0;
  for (size_t u = 0; u < cons.global_constraints.size(); ++u)
    if (cons.global_constraints[u].index.probe_class == 1 &&
        cons.global_constraints[u].index.probe_group == 0)
      flip_u = u;
  double coef = cons.global_constraints[flip_u].coef(0, 0);
  REQUIRE(coef != 0.0);
  auto& side = coef > 0 ? c.dual.lambda2 : c.dual.lambda1;
  side[flip_u] = 4.0;
  // M(0,0) column 1 gains 4*|coef|/p_{0,0} * sum(eta) > 0.2 needed for a flip
  CHECK(c.predict({0.6, 0.4}, 0, 0) == 1);
}

TEST_CASE("calibrated classifier JSON round-trip reproduces predictions") {
  auto scores = random_scores(2, 3, 2, 50, 35);
  auto st = stats_from_scores(scores);
  FairnessSpec spec;
  spec.criterion = Criterion::EO;
  spec.xi_global = 0.05;
  spec.xi_local = 0.05;
  PostprocessingHyper hyper;
  hyper.rounds = 8;
  hyper.inner_steps = 3;
  hyper.lr_dual = 0.1;
  auto result = run_postprocessing(scores, st, spec, hyper);
  auto j = result.classifier.to_json();
  auto restored = CalibratedClassifier::from_json(j);
  CHECK(restored.predict_all(scores) == result.classifier.predict_all(scores));
  // tampered probe list is rejected
  auto bad = j;
  bad["probes"][0] = "dp/global/a'=9/y=9";
  CHECK_THROWS_AS(CalibratedClassifier::from_json(bad), ConfigError);
}

TEST_CASE("score CSV round-trip and jitter") {
  auto scores = random_scores(2, 3, 2, 20, 37);
  save_scores_csv(scores, "./scores_tmp.csv");
  auto loaded = load_scores_csv("./scores_tmp.csv", 3, 2);
  REQUIRE(loaded.num_clients() == 2);
  for (int k = 0; k < 2; ++k) {
    REQUIRE(loaded.clients[k].size() == scores.clients[k].size());
    for (size_t i = 0; i < loaded.clients[k].size(); ++i) {
      CHECK(loaded.clients[k][i].probs == scores.clients[k][i].probs);
      CHECK(loaded.clients[k][i].label == scores.clients[k][i].label);
    }
  }
  std::remove("./scores_tmp.csv");

  // malformed score file rejected with its row
  {
    std::ofstream bad("./bad_scores.csv");
    bad << "0,0,0.5,0.5,0.3,1\n";  // sums to 1.3
  }
  CHECK_THROWS_AS(load_scores_csv("./bad_scores.csv", 3, 2), DataError);
  std::remove("./bad_scores.csv");

  auto jittered = scores;
  jitter_scores(jittered, 1e-4, 9);
  for (int k = 0; k < 2; ++k)
    for (size_t i = 0; i < jittered.clients[k].size(); ++i) {
      double sum = 0.0;
      for (double p : jittered.clients[k][i].probs) {
        CHECK(p >= 0.0);
        sum += p;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(jittered.clients[k][i].probs != scores.clients[k][i].probs);
    }
}

TEST_CASE("hyperparameter validation") {
  auto scores = random_scores(1, 2, 2, 10, 39);
  auto st = stats_from_scores(scores);
  FairnessSpec spec;
  PostprocessingHyper hyper;
  hyper.rounds = 0;
  CHECK_THROWS_AS(run_postprocessing(scores, st, spec, hyper), ConfigError);
  hyper.rounds = 5;
  hyper.beta = 0.0;
  CHECK_THROWS_AS(run_postprocessing(scores, st, spec, hyper), ConfigError);
}
