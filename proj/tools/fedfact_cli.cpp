#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fedfact/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fedfact::ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw fedfact::ConfigError("config parse error in " + path + ": " + e.what());
  }
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out) throw fedfact::ConfigError("cannot write output file: " + path);
  out << text;
}

struct Overrides {
  std::optional<uint64_t> seed;
  std::optional<std::string> method, criterion;
  std::optional<double> xi_global, xi_local, gamma, lr, lr_dual, lr_weight, beta,
      dual_bound;
  std::optional<int> clients, rounds, local_rounds;
  bool drop_degenerate = false;

  void apply(json& cfg) const {
    if (seed) cfg["seed"] = *seed;
    if (method) cfg["method"] = *method;
    if (criterion) cfg["fairness"]["criterion"] = *criterion;
    if (xi_global) cfg["fairness"]["xi_global"] = *xi_global;
    if (xi_local) cfg["fairness"]["xi_local"] = *xi_local;
    if (clients) cfg["partition"]["clients"] = *clients;
    if (gamma) cfg["partition"]["gamma"] = *gamma;
    if (rounds) {
      cfg["hyper"]["rounds"] = *rounds;
      cfg["hyper"]["post_rounds"] = *rounds;
    }
    if (local_rounds) {
      cfg["hyper"]["local_steps"] = *local_rounds;
      cfg["hyper"]["inner_steps"] = *local_rounds;
    }
    if (lr) cfg["hyper"]["lr"] = *lr;
    if (lr_dual) {
      cfg["hyper"]["lr_dual"] = *lr_dual;
      cfg["hyper"]["post_lr_dual"] = *lr_dual;
    }
    if (lr_weight) cfg["hyper"]["lr_weight"] = *lr_weight;
    if (beta) cfg["hyper"]["beta"] = *beta;
    if (dual_bound) cfg["hyper"]["dual_bound"] = *dual_bound;
    if (drop_degenerate) cfg["drop_degenerate_probes"] = true;
  }
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--seed", ov.seed);
  cmd->add_option("--method", ov.method)
      ->check(CLI::IsMember({"inprocessing", "postprocessing", "fedavg",
                             "fedavg-baseline"}));
  cmd->add_option("--criterion", ov.criterion)
      ->check(CLI::IsMember({"dp", "eop", "eo"}));
  cmd->add_option("--xi-global", ov.xi_global);
  cmd->add_option("--xi-local", ov.xi_local);
  cmd->add_option("--clients", ov.clients);
  cmd->add_option("--gamma", ov.gamma);
  cmd->add_option("--rounds", ov.rounds);
  cmd->add_option("--local-rounds", ov.local_rounds);
  cmd->add_option("--lr", ov.lr);
  cmd->add_option("--lr-dual", ov.lr_dual);
  cmd->add_option("--lr-weight", ov.lr_weight);
  cmd->add_option("--beta", ov.beta);
  cmd->add_option("--dual-bound", ov.dual_bound);
  cmd->add_flag("--drop-degenerate-probes", ov.drop_degenerate);
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Federated group-fairness calibration toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path, in_path, instance_path;
  Overrides run_ov;
  auto* run_cmd = app.add_subcommand("run", "Run one experiment");
  run_cmd->add_option("--config", config_path)->required();
  run_cmd->add_option("--out", out_path);
  add_override_flags(run_cmd, run_ov);

  Overrides sweep_ov;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a config grid");
  sweep_cmd->add_option("--config", config_path)->required();
  sweep_cmd->add_option("--out", out_path);
  add_override_flags(sweep_cmd, sweep_ov);

  auto* pareto_cmd = app.add_subcommand("pareto", "Extract the frontier of a sweep CSV");
  pareto_cmd->add_option("--in", in_path)->required();
  pareto_cmd->add_option("--out", out_path);

  std::string oracle_criterion = "dp", oracle_mode = "aware";
  double oracle_xi_g = 0.01, oracle_xi_l = 0.01;
  bool oracle_bayes = false;
  auto* oracle_cmd = app.add_subcommand("oracle", "Solve a discrete instance exactly");
  oracle_cmd->add_option("--instance", instance_path)->required();
  oracle_cmd->add_option("--criterion", oracle_criterion)
      ->check(CLI::IsMember({"dp", "eop", "eo"}));
  oracle_cmd->add_option("--xi-global", oracle_xi_g);
  oracle_cmd->add_option("--xi-local", oracle_xi_l);
  oracle_cmd->add_option("--mode", oracle_mode)
      ->check(CLI::IsMember({"aware", "blind"}));
  oracle_cmd->add_flag("--bayes", oracle_bayes, "Ignore fairness constraints");
  oracle_cmd->add_option("--out", out_path);

  CLI11_PARSE(app, argc, argv);

  if (run_cmd->parsed()) {
    json cfg = load_json_file(config_path);
    run_ov.apply(cfg);
    auto config = fedfact::ExperimentConfig::from_json(cfg);
    auto report = fedfact::run_experiment(config);
    std::string text = report.to_json().dump(2) + "\n";
    if (out_path.empty() && !config.out_dir.empty())
      out_path = (fs::path(config.out_dir) / "report.json").string();
    if (out_path.empty()) {
      std::cout << text;
    } else {
      write_text(out_path, text);
      fs::path csv_path = fs::path(out_path).replace_extension(".csv");
      write_text(csv_path.string(), fedfact::ExperimentReport::csv_header() + "\n" +
                                        report.csv_row() + "\n");
      std::cout << "wrote " << out_path << " and " << csv_path.string() << "\n";
    }
    return 0;
  }

  if (sweep_cmd->parsed()) {
    json spec = load_json_file(config_path);
    if (spec.contains("base")) sweep_ov.apply(spec["base"]);
    auto result = fedfact::run_sweep(spec);
    if (out_path.empty()) {
      std::cout << result.csv;
      std::cout << result.summary.dump(2) << "\n";
    } else {
      fs::create_directories(out_path);
      write_text((fs::path(out_path) / "sweep.csv").string(), result.csv);
      write_text((fs::path(out_path) / "summary.json").string(),
                 result.summary.dump(2) + "\n");
      std::cout << "wrote sweep.csv and summary.json under " << out_path << "\n";
    }
    for (const auto& e : result.errors)
      if (!e.empty()) std::cerr << "run failed: " << e << "\n";
    return 0;
  }

  if (pareto_cmd->parsed()) {
    std::ifstream in(in_path);
    if (!in) throw fedfact::ConfigError("cannot open sweep CSV: " + in_path);
    std::string header;
    if (!std::getline(in, header))
      throw fedfact::ConfigError("empty sweep CSV: " + in_path);
    std::vector<std::string> cols;
    {
      std::stringstream ss(header);
      std::string tok;
      while (std::getline(ss, tok, ',')) cols.push_back(tok);
    }
    auto col_of = [&](const std::string& name) {
      for (size_t i = 0; i < cols.size(); ++i)
        if (cols[i] == name) return static_cast<int>(i);
      throw fedfact::ConfigError("sweep CSV lacks column " + name);
    };
    int acc_col = col_of("test_accuracy");
    int disp_col = col_of("test_global_disparity");
    std::vector<fedfact::ParetoPoint> points;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line.find("error:") != std::string::npos) continue;
      std::vector<std::string> fields;
      std::stringstream ss(line);
      std::string tok;
      while (std::getline(ss, tok, ',')) fields.push_back(tok);
      if (static_cast<int>(fields.size()) <= std::max(acc_col, disp_col)) continue;
      fedfact::ParetoPoint p;
      p.tag = fields[0] + "/" + fields[2] + "/" + fields[3];
      p.accuracy = std::stod(fields[acc_col]);
      p.disparity = std::stod(fields[disp_col]);
      points.push_back(std::move(p));
    }
    if (points.size() < 2)
      throw fedfact::ConfigError("pareto extraction needs at least two rows");
    auto flagged = fedfact::pareto_frontier(std::move(points));
    std::string csv = fedfact::pareto_csv(flagged);
    if (out_path.empty())
      std::cout << csv;
    else
      write_text(out_path, csv);
    return 0;
  }

  // oracle subcommand
  auto instance =
      fedfact::DiscreteInstance::from_json(load_json_file(instance_path));
  fedfact::FairnessSpec spec;
  spec.criterion = fedfact::parse_criterion(oracle_criterion);
  spec.xi_global = oracle_xi_g;
  spec.xi_local = oracle_xi_l;
  auto mode = oracle_mode == "blind" ? fedfact::OracleMode::AttributeBlind
                                     : fedfact::OracleMode::AttributeAware;
  fedfact::LPSolution sol = oracle_bayes
                                ? fedfact::solve_bayes(instance, mode)
                                : fedfact::solve_primal_lp(instance, spec, mode);
  std::string text = fedfact::solution_to_json(sol).dump(2) + "\n";
  if (out_path.empty())
    std::cout << text;
  else
    write_text(out_path, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const fedfact::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const fedfact::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fedfact::DataError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
