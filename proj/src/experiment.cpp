#include "fedfact/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace fedfact {

std::string method_name(Method m) {
  switch (m) {
    case Method::Inprocessing: return "inprocessing";
    case Method::Postprocessing: return "postprocessing";
    case Method::FedAvgBaseline: return "fedavg";
    case Method::Oracle: return "oracle";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "inprocessing") return Method::Inprocessing;
  if (s == "postprocessing") return Method::Postprocessing;
  if (s == "fedavg" || s == "fedavg-baseline") return Method::FedAvgBaseline;
  if (s == "oracle") return Method::Oracle;
  throw ConfigError("unknown method: " + s);
}

namespace {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

SyntheticSpec synth_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  maybe(j, "num_clients", s.num_clients);
  maybe(j, "num_classes", s.num_classes);
  maybe(j, "num_groups", s.num_groups);
  for (const auto& cj : j.at("cells")) {
    GaussianCellSpec c;
    maybe(cj, "client", c.client);
    maybe(cj, "group", c.group);
    maybe(cj, "label", c.label);
    c.mean = cj.at("mean").get<std::vector<double>>();
    c.var = cj.at("var").get<std::vector<double>>();
    c.count = cj.at("count").get<int>();
    s.cells.push_back(std::move(c));
  }
  return s;
}

nlohmann::json synth_to_json(const SyntheticSpec& s) {
  nlohmann::json j;
  j["num_clients"] = s.num_clients;
  j["num_classes"] = s.num_classes;
  j["num_groups"] = s.num_groups;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : s.cells) {
    nlohmann::json cj;
    cj["client"] = c.client;
    cj["group"] = c.group;
    cj["label"] = c.label;
    cj["mean"] = c.mean;
    cj["var"] = c.var;
    cj["count"] = c.count;
    cells.push_back(std::move(cj));
  }
  j["cells"] = std::move(cells);
  return j;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    std::string type = d.value("type", "synthetic");
    if (type == "synthetic") {
      c.synthetic = true;
      c.synth = synth_from_json(d.at("synthetic"));
    } else if (type == "csv") {
      c.synthetic = false;
      c.csv_path = d.at("path").get<std::string>();
      const auto& sj = d.at("schema");
      c.schema.label_col = sj.at("label_col").get<std::string>();
      c.schema.group_col = sj.at("group_col").get<std::string>();
      if (sj.contains("client_col"))
        c.schema.client_col = sj.at("client_col").get<std::string>();
    } else {
      throw ConfigError("unknown dataset type: " + type);
    }
  } else {
    throw ConfigError("config needs a dataset section");
  }
  if (j.contains("partition")) {
    const auto& p = j.at("partition");
    c.partition = p.value("type", std::string("given"));
    maybe(p, "clients", c.clients);
    maybe(p, "gamma", c.gamma);
    maybe(p, "corr_lo", c.corr_lo);
    maybe(p, "corr_hi", c.corr_hi);
  }
  if (j.contains("split")) maybe(j.at("split"), "train_frac", c.train_frac);
  if (j.contains("fairness")) {
    const auto& f = j.at("fairness");
    if (f.contains("criterion"))
      c.fairness.criterion = parse_criterion(f.at("criterion").get<std::string>());
    maybe(f, "xi_global", c.fairness.xi_global);
    maybe(f, "xi_local", c.fairness.xi_local);
    maybe(f, "enable_global", c.fairness.enable_global);
    maybe(f, "enable_local", c.fairness.enable_local);
  }
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  if (j.contains("hyper")) {
    const auto& h = j.at("hyper");
    maybe(h, "rounds", c.train_hyper.rounds);
    maybe(h, "local_steps", c.train_hyper.local_steps);
    maybe(h, "lr", c.train_hyper.lr);
    maybe(h, "lr_dual", c.train_hyper.lr_dual);
    maybe(h, "lr_weight", c.train_hyper.lr_weight);
    maybe(h, "batch_size", c.train_hyper.batch_size);
    maybe(h, "dual_bound", c.train_hyper.dual_bound);
    maybe(h, "hidden_dim", c.train_hyper.hidden_dim);
    maybe(h, "average_window", c.train_hyper.average_window);
    maybe(h, "post_rounds", c.post_hyper.rounds);
    maybe(h, "inner_steps", c.post_hyper.inner_steps);
    maybe(h, "post_lr_dual", c.post_hyper.lr_dual);
    maybe(h, "beta", c.post_hyper.beta);
    maybe(h, "refine_steps", c.post_hyper.refine_steps);
    maybe(h, "refine_step_size", c.post_hyper.refine_step_size);
    c.post_hyper.dual_bound = c.train_hyper.dual_bound;
    maybe(h, "post_dual_bound", c.post_hyper.dual_bound);
  }
  maybe(j, "seed", c.seed);
  maybe(j, "drop_degenerate_probes", c.drop_degenerate_probes);
  maybe(j, "jitter", c.jitter);
  maybe(j, "out_dir", c.out_dir);
  c.train_hyper.seed = c.seed;
  c.train_hyper.drop_degenerate_probes = c.drop_degenerate_probes;
  c.post_hyper.drop_degenerate_probes = c.drop_degenerate_probes;
  c.validate();
  c.echo = c.to_json();
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  nlohmann::json d;
  if (synthetic) {
    d["type"] = "synthetic";
    d["synthetic"] = synth_to_json(synth);
  } else {
    d["type"] = "csv";
    d["path"] = csv_path;
    nlohmann::json sj;
    sj["label_col"] = schema.label_col;
    sj["group_col"] = schema.group_col;
    if (schema.client_col) sj["client_col"] = *schema.client_col;
    d["schema"] = std::move(sj);
  }
  j["dataset"] = std::move(d);
  j["partition"] = {{"type", partition},
                    {"clients", clients},
                    {"gamma", gamma},
                    {"corr_lo", corr_lo},
                    {"corr_hi", corr_hi}};
  j["split"] = {{"train_frac", train_frac}};
  j["fairness"] = {{"criterion", criterion_name(fairness.criterion)},
                   {"xi_global", fairness.xi_global},
                   {"xi_local", fairness.xi_local},
                   {"enable_global", fairness.enable_global},
                   {"enable_local", fairness.enable_local}};
  j["method"] = method_name(method);
  j["hyper"] = {{"rounds", train_hyper.rounds},
                {"local_steps", train_hyper.local_steps},
                {"lr", train_hyper.lr},
                {"lr_dual", train_hyper.lr_dual},
                {"lr_weight", train_hyper.lr_weight},
                {"batch_size", train_hyper.batch_size},
                {"dual_bound", train_hyper.dual_bound},
                {"hidden_dim", train_hyper.hidden_dim},
                {"average_window", train_hyper.average_window},
                {"post_rounds", post_hyper.rounds},
                {"inner_steps", post_hyper.inner_steps},
                {"post_lr_dual", post_hyper.lr_dual},
                {"beta", post_hyper.beta},
                {"refine_steps", post_hyper.refine_steps},
                {"refine_step_size", post_hyper.refine_step_size},
                {"post_dual_bound", post_hyper.dual_bound}};
  j["seed"] = seed;
  j["drop_degenerate_probes"] = drop_degenerate_probes;
  j["jitter"] = jitter;
  j["out_dir"] = out_dir;
  return j;
}

void ExperimentConfig::validate() const {
  if (partition != "given" && partition != "dirichlet" && partition != "hetero")
    throw ConfigError("unknown partition type: " + partition);
  if (partition != "given" && clients <= 0)
    throw ConfigError("partition needs a positive client count");
  if (train_frac <= 0.0 || train_frac >= 1.0)
    throw ConfigError("train_frac must be in (0, 1)");
  if (fairness.xi_global < 0.0 || fairness.xi_local < 0.0)
    throw ConfigError("slacks must be nonnegative");
  if (train_hyper.rounds <= 0 || train_hyper.local_steps <= 0)
    throw ConfigError("training rounds and local steps must be positive");
  if (jitter < 0.0) throw ConfigError("jitter must be nonnegative");
  if (method == Method::Oracle)
    throw ConfigError("the oracle runs on instance files, use the oracle subcommand");
}

SplitMetrics evaluate_predictions(const std::vector<std::vector<int>>& preds,
                                  const FederatedDataset& data,
                                  const FairnessSpec& spec) {
  auto stats = compute_stats(data);
  auto constraints = build_constraint_set(spec, stats, true);
  auto conf = compute_confusions(preds, data);
  auto risk_matrix = RiskMatrix::classification_error(data.num_classes);
  SplitMetrics m;
  m.accuracy = 1.0 - risk(preds, data, risk_matrix);
  auto report = evaluate_disparities(constraints, conf);
  m.max_global_disparity = report.max_global;
  m.max_local_disparity = report.max_local;
  for (const auto& [idx, v] : report.per_probe)
    m.per_probe.emplace_back(idx.describe(), v);
  m.dropped_probes = static_cast<int>(constraints.dropped.size());
  return m;
}

namespace {

FederatedDataset materialize_dataset(const ExperimentConfig& c) {
  FederatedDataset data;
  if (c.synthetic) {
    data = synth_gaussian_mixture(c.synth, c.seed);
  } else {
    data = load_csv(c.csv_path, c.schema);
  }
  if (c.partition == "dirichlet") {
    data = dirichlet_partition(pool_clients(data), c.clients, c.gamma, c.seed);
  } else if (c.partition == "hetero") {
    data = heterogeneous_split(pool_clients(data), c.clients, c.corr_lo, c.corr_hi,
                               c.seed);
  }
  data.validate();
  return data;
}

nlohmann::json metrics_to_json(const SplitMetrics& m) {
  nlohmann::json j;
  j["accuracy"] = m.accuracy;
  j["max_global_disparity"] = m.max_global_disparity;
  j["max_local_disparity"] = m.max_local_disparity;
  j["dropped_probes"] = m.dropped_probes;
  nlohmann::json probes = nlohmann::json::object();
  for (const auto& [name, v] : m.per_probe) probes[name] = v;
  j["per_probe"] = std::move(probes);
  return j;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config) {
  auto t0 = std::chrono::steady_clock::now();
  FederatedDataset data = materialize_dataset(config);
  SplitDataset split = train_test_split(data, config.train_frac, config.seed);

  ExperimentReport report;
  report.config = config;

  std::vector<std::vector<int>> train_preds, test_preds;
  switch (config.method) {
    case Method::FedAvgBaseline: {
      auto trained = run_fedavg(split.train, config.train_hyper);
      report.trajectory = trained.round_losses;
      auto predict_all = [&](const FederatedDataset& d) {
        std::vector<std::vector<int>> p(d.num_clients());
        for (int k = 0; k < d.num_clients(); ++k)
          for (const auto& s : d.clients[k])
            p[k].push_back(trained.unified.predict(s.features));
        return p;
      };
      train_preds = predict_all(split.train);
      test_preds = predict_all(split.test);
      break;
    }
    case Method::Inprocessing: {
      auto result = run_inprocessing(split.train, config.fairness,
                                     config.train_hyper);
      for (const auto& r : result.reports) report.trajectory.push_back(r.risk);
      train_preds = ensemble_predictions(result.ensemble, split.train);
      test_preds = ensemble_predictions(result.ensemble, split.test);
      break;
    }
    case Method::Postprocessing: {
      FederatedDataset aug = augment_with_group(split.train);
      auto trained = run_fedavg(aug, config.train_hyper);
      for (double l : trained.round_losses)
        if (!std::isfinite(l)) throw NumericError("plug-in pretraining diverged");
      PluginScores train_scores = plugin_scores(trained.unified, split.train);
      PluginScores test_scores = plugin_scores(trained.unified, split.test);
      if (config.jitter > 0.0) {
        jitter_scores(train_scores, config.jitter, config.seed);
        jitter_scores(test_scores, config.jitter, config.seed + 1);
      }
      auto stats = compute_stats(split.train);
      auto result = run_postprocessing(train_scores, stats, config.fairness,
                                       config.post_hyper);
      report.trajectory = result.trajectory;
      train_preds = result.classifier.predict_all(train_scores);
      test_preds = result.classifier.predict_all(test_scores);
      break;
    }
    case Method::Oracle:
      throw ConfigError("oracle method is not an experiment pipeline");
  }

  report.train = evaluate_predictions(train_preds, split.train, config.fairness);
  report.test = evaluate_predictions(test_preds, split.test, config.fairness);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json j;
  j["config"] = config.echo.is_null() ? config.to_json() : config.echo;
  j["train"] = metrics_to_json(train);
  j["test"] = metrics_to_json(test);
  j["trajectory"] = trajectory;
  j["timing"] = {{"wall_seconds", wall_seconds}};
  return j;
}

std::string ExperimentReport::csv_header() {
  return "method,criterion,xi_global,xi_local,seed,clients,"
         "train_accuracy,train_global_disparity,train_local_disparity,"
         "test_accuracy,test_global_disparity,test_local_disparity";
}

std::string ExperimentReport::csv_row() const {
  std::ostringstream os;
  os.precision(17);
  os << method_name(config.method) << ',' << criterion_name(config.fairness.criterion)
     << ',' << config.fairness.xi_global << ',' << config.fairness.xi_local << ','
     << config.seed << ',' << config.clients << ',' << train.accuracy << ','
     << train.max_global_disparity << ',' << train.max_local_disparity << ','
     << test.accuracy << ',' << test.max_global_disparity << ','
     << test.max_local_disparity;
  return os.str();
}

std::vector<ExperimentConfig> expand_grid(const nlohmann::json& sweep_spec) {
  if (!sweep_spec.contains("base")) throw ConfigError("sweep needs a base config");
  nlohmann::json base = sweep_spec.at("base");
  std::vector<std::pair<std::string, std::vector<nlohmann::json>>> axes;
  if (sweep_spec.contains("grid")) {
    for (const auto& [key, values] : sweep_spec.at("grid").items()) {
      if (!values.is_array() || values.empty())
        throw ConfigError("grid axis " + key + " must be a nonempty array");
      axes.emplace_back(key, std::vector<nlohmann::json>(values.begin(),
                                                         values.end()));
    }
    std::sort(axes.begin(), axes.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  std::vector<nlohmann::json> configs{base};
  for (const auto& [key, values] : axes) {
    std::vector<nlohmann::json> next;
    for (const auto& cfg : configs)
      for (const auto& v : values) {
        nlohmann::json c = cfg;
        // dotted path assignment
        nlohmann::json* node = &c;
        std::string rest = key;
        size_t dot;
        while ((dot = rest.find('.')) != std::string::npos) {
          node = &(*node)[rest.substr(0, dot)];
          rest = rest.substr(dot + 1);
        }
        (*node)[rest] = v;
        next.push_back(std::move(c));
      }
    configs = std::move(next);
  }
  if (configs.empty()) throw ConfigError("empty sweep grid");
  std::vector<ExperimentConfig> out;
  out.reserve(configs.size());
  for (const auto& c : configs) out.push_back(ExperimentConfig::from_json(c));
  return out;
}

SweepResult run_sweep(const nlohmann::json& sweep_spec) {
  auto configs = expand_grid(sweep_spec);
  SweepResult result;
  std::ostringstream csv;
  csv << ExperimentReport::csv_header() << '\n';
  for (const auto& cfg : configs) {
    try {
      auto rep = run_experiment(cfg);
      csv << rep.csv_row() << '\n';
      result.reports.push_back(std::move(rep));
      result.errors.emplace_back();
    } catch (const std::exception& e) {
      result.errors.emplace_back(e.what());
      csv << method_name(cfg.method) << ",error:" << e.what() << '\n';
    }
  }
  result.csv = csv.str();

  // aggregate over seeds per (xi_global, xi_local, method) group
  std::map<std::string, std::vector<const ExperimentReport*>> groups;
  for (const auto& r : result.reports) {
    std::ostringstream key;
    key << method_name(r.config.method) << '|' << r.config.fairness.xi_global << '|'
        << r.config.fairness.xi_local;
    groups[key.str()].push_back(&r);
  }
  nlohmann::json agg = nlohmann::json::array();
  for (const auto& [key, reps] : groups) {
    double mean = 0.0;
    for (const auto* r : reps) mean += r->test.accuracy;
    mean /= reps.size();
    double var = 0.0;
    for (const auto* r : reps) var += (r->test.accuracy - mean) * (r->test.accuracy - mean);
    var = reps.size() > 1 ? var / (reps.size() - 1) : 0.0;
    agg.push_back({{"group", key},
                   {"runs", reps.size()},
                   {"mean_test_accuracy", mean},
                   {"std_test_accuracy", std::sqrt(var)}});
  }
  result.summary["groups"] = std::move(agg);

  // monotonicity: accuracy should not fall as the total slack loosens, up to
  // half a point of noise
  std::vector<std::pair<double, double>> pairs;  // (xi sum, accuracy)
  for (const auto& r : result.reports)
    pairs.emplace_back(r.config.fairness.xi_global + r.config.fairness.xi_local,
                       r.test.accuracy);
  std::sort(pairs.begin(), pairs.end());
  bool monotone = true;
  double best = -1.0;
  for (const auto& [xi, acc] : pairs) {
    if (acc < best - 0.005) monotone = false;
    best = std::max(best, acc);
  }
  result.summary["accuracy_monotone_in_slack"] = monotone;
  return result;
}

std::vector<ParetoPoint> pareto_frontier(std::vector<ParetoPoint> points) {
  for (size_t i = 0; i < points.size(); ++i) {
    points[i].dominated = false;
    for (size_t j = 0; j < points.size(); ++j) {
      if (i == j) continue;
      bool weakly = points[j].accuracy >= points[i].accuracy &&
                    points[j].disparity <= points[i].disparity;
      bool strictly = points[j].accuracy > points[i].accuracy ||
                      points[j].disparity < points[i].disparity;
      if (weakly && strictly) {
        points[i].dominated = true;
        break;
      }
    }
  }
  return points;
}

std::string pareto_csv(const std::vector<ParetoPoint>& points) {
  std::ostringstream os;
  os.precision(17);
  os << "tag,accuracy,disparity,dominated\n";
  for (const auto& p : points)
    os << p.tag << ',' << p.accuracy << ',' << p.disparity << ','
       << (p.dominated ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace fedfact
