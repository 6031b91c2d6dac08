#include "fedfact/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fedfact {

void FederatedDataset::validate() const {
  if (clients.empty()) throw DataError("dataset has no clients");
  int d = -1;
  for (size_t k = 0; k < clients.size(); ++k) {
    if (clients[k].empty())
      throw DataError("client " + std::to_string(k) + " is empty");
    for (const auto& s : clients[k]) {
      if (d < 0) d = static_cast<int>(s.features.size());
      if (static_cast<int>(s.features.size()) != d)
        throw DataError("inconsistent feature dimension");
      if (s.label < 0 || s.label >= num_classes)
        throw DataError("label index out of range");
      if (s.group < 0 || s.group >= num_groups)
        throw DataError("group index out of range");
    }
  }
}

PopulationStats compute_stats(const FederatedDataset& data) {
  if (data.total_samples() == 0) throw DataError("empty dataset");
  PopulationStats st;
  st.num_classes = data.num_classes;
  st.num_groups = data.num_groups;
  st.num_clients = data.num_clients();
  st.total = data.total_samples();
  st.count.assign(st.num_groups,
                  std::vector<std::vector<long long>>(
                      st.num_classes, std::vector<long long>(st.num_clients, 0)));
  for (int k = 0; k < st.num_clients; ++k)
    for (const auto& s : data.clients[k]) st.count[s.group][s.label][k]++;
  return st;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim whitespace
    size_t b = field.find_first_not_of(" \t\r");
    size_t e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

int dense_index(std::map<std::string, int>& map, std::vector<std::string>& names,
                const std::string& token) {
  auto it = map.find(token);
  if (it != map.end()) return it->second;
  int id = static_cast<int>(names.size());
  map[token] = id;
  names.push_back(token);
  return id;
}

}  // namespace

FederatedDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path);
  auto header = split_csv_line(line);

  int label_idx = -1, group_idx = -1, client_idx = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == schema.label_col) label_idx = static_cast<int>(i);
    if (header[i] == schema.group_col) group_idx = static_cast<int>(i);
    if (schema.client_col && header[i] == *schema.client_col)
      client_idx = static_cast<int>(i);
  }
  if (label_idx < 0) throw DataError("label column not found: " + schema.label_col);
  if (group_idx < 0)
    throw DataError("sensitive column not found: " + schema.group_col);
  if (schema.client_col && client_idx < 0)
    throw DataError("client column not found: " + *schema.client_col);

  std::vector<int> feature_cols;
  for (size_t i = 0; i < header.size(); ++i) {
    int ii = static_cast<int>(i);
    if (ii != label_idx && ii != group_idx && ii != client_idx)
      feature_cols.push_back(ii);
  }

  std::map<std::string, int> label_map, group_map, client_map;
  std::vector<std::string> label_names, group_names, client_names;
  std::vector<std::vector<Sample>> clients;

  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw DataError("row " + std::to_string(row) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    Sample s;
    s.label = dense_index(label_map, label_names, fields[label_idx]);
    s.group = dense_index(group_map, group_names, fields[group_idx]);
    int client = 0;
    if (client_idx >= 0)
      client = dense_index(client_map, client_names, fields[client_idx]);
    s.features.reserve(feature_cols.size());
    for (int fc : feature_cols) {
      try {
        size_t pos = 0;
        double v = std::stod(fields[fc], &pos);
        if (pos != fields[fc].size()) throw std::invalid_argument("trailing");
        s.features.push_back(v);
      } catch (const std::exception&) {
        throw DataError("row " + std::to_string(row) + ": non-numeric feature '" +
                        fields[fc] + "' in column " + header[fc]);
      }
    }
    if (client >= static_cast<int>(clients.size())) clients.resize(client + 1);
    clients[client].push_back(std::move(s));
  }
  if (clients.empty()) throw DataError("no data rows in " + path);

  FederatedDataset data;
  data.clients = std::move(clients);
  data.num_classes = static_cast<int>(label_names.size());
  data.num_groups = static_cast<int>(group_names.size());
  data.label_names = std::move(label_names);
  data.group_names = std::move(group_names);
  data.validate();
  return data;
}

FederatedDataset pool_clients(const FederatedDataset& data) {
  FederatedDataset out = data;
  out.clients.assign(1, {});
  for (const auto& c : data.clients)
    out.clients[0].insert(out.clients[0].end(), c.begin(), c.end());
  return out;
}

FederatedDataset dirichlet_partition(const FederatedDataset& data, int num_clients,
                                     double gamma, uint64_t seed) {
  if (num_clients < 2) throw ConfigError("dirichlet_partition needs N >= 2");
  if (gamma <= 0) throw ConfigError("dirichlet_partition needs gamma > 0");
  auto pooled = pool_clients(data);
  const auto& all = pooled.clients[0];

  constexpr int kRetryBudget = 20;
  for (int attempt = 0; attempt < kRetryBudget; ++attempt) {
    Rng rng = make_rng(seed, 0x9d7u, attempt);
    std::vector<std::vector<Sample>> clients(num_clients);
    for (int a = 0; a < data.num_groups; ++a) {
      std::vector<size_t> idx;
      for (size_t i = 0; i < all.size(); ++i)
        if (all[i].group == a) idx.push_back(i);
      std::shuffle(idx.begin(), idx.end(), rng);
      // Dirichlet via normalized Gamma draws.
      std::gamma_distribution<double> gd(gamma, 1.0);
      std::vector<double> w(num_clients);
      double tot = 0.0;
      for (double& v : w) {
        v = gd(rng);
        tot += v;
      }
      if (tot <= 0) tot = 1.0;
      // cumulative slicing keeps every sample assigned exactly once
      double cum = 0.0;
      size_t start = 0;
      for (int k = 0; k < num_clients; ++k) {
        cum += w[k] / tot;
        size_t end = (k == num_clients - 1)
                         ? idx.size()
                         : static_cast<size_t>(std::llround(cum * idx.size()));
        end = std::min(end, idx.size());
        end = std::max(end, start);
        for (size_t i = start; i < end; ++i) clients[k].push_back(all[idx[i]]);
        start = end;
      }
    }
    bool ok = true;
    for (const auto& c : clients)
      if (c.empty()) ok = false;
    if (!ok) continue;
    FederatedDataset out = data;
    out.clients = std::move(clients);
    return out;
  }
  throw DataError("dirichlet_partition: a client received zero samples after retries");
}

std::vector<long long> largest_remainder_allocation(const std::vector<double>& weights,
                                                    long long n) {
  const int num = static_cast<int>(weights.size());
  if (num == 0) throw ConfigError("allocation needs at least one weight");
  double total_w = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ConfigError("allocation weights must be nonnegative");
    total_w += w;
  }
  std::vector<long long> cnt(num, 0);
  std::vector<double> frac(num, 0.0);
  long long assigned = 0;
  for (int k = 0; k < num; ++k) {
    double share = (total_w > 0) ? weights[k] / total_w * n
                                 : static_cast<double>(n) / num;
    cnt[k] = static_cast<long long>(std::floor(share));
    frac[k] = share - cnt[k];
    assigned += cnt[k];
  }
  long long rem = n - assigned;
  std::vector<int> order(num);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return frac[x] > frac[y]; });
  for (long long r = 0; r < rem; ++r) cnt[order[r % num]]++;
  return cnt;
}

FederatedDataset heterogeneous_split(const FederatedDataset& data, int num_clients,
                                     double corr_lo, double corr_hi, uint64_t seed) {
  if (data.num_groups != 2 || data.num_classes != 2)
    throw ConfigError("heterogeneous_split requires binary A and Y");
  if (corr_lo > corr_hi || corr_lo < 0.0 || corr_hi > 1.0)
    throw ConfigError("heterogeneous_split: invalid correlation range");
  auto pooled = pool_clients(data);
  const auto& all = pooled.clients[0];

  Rng rng = make_rng(seed, 0x4e7u);
  std::vector<double> gamma(num_clients);
  std::uniform_real_distribution<double> ud(corr_lo, corr_hi);
  for (double& g : gamma) g = ud(rng);

  std::vector<std::vector<Sample>> clients(num_clients);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      std::vector<size_t> idx;
      for (size_t s = 0; s < all.size(); ++s)
        if (all[s].group == i && all[s].label == j) idx.push_back(s);
      std::shuffle(idx.begin(), idx.end(), rng);
      long long n_ij = static_cast<long long>(idx.size());

      std::vector<double> w(num_clients);
      for (int k = 0; k < num_clients; ++k)
        w[k] = (i == j) ? gamma[k] : 1.0 - gamma[k];
      auto cnt = largest_remainder_allocation(w, n_ij);

      size_t pos = 0;
      for (int k = 0; k < num_clients; ++k)
        for (long long c = 0; c < cnt[k]; ++c) clients[k].push_back(all[idx[pos++]]);
    }
  }
  for (size_t k = 0; k < clients.size(); ++k)
    if (clients[k].empty())
      throw DataError("heterogeneous_split: client " + std::to_string(k) +
                      " received zero samples");
  FederatedDataset out = data;
  out.clients = std::move(clients);
  return out;
}

FederatedDataset synth_gaussian_mixture(const SyntheticSpec& spec, uint64_t seed) {
  FederatedDataset out;
  out.num_classes = spec.num_classes;
  out.num_groups = spec.num_groups;
  out.clients.assign(spec.num_clients, {});
  Rng rng = make_rng(seed, 0x5a1u);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (const auto& cell : spec.cells) {
    if (cell.count < 1) throw ConfigError("synthetic cell count must be >= 1");
    if (cell.client < 0 || cell.client >= spec.num_clients ||
        cell.group < 0 || cell.group >= spec.num_groups ||
        cell.label < 0 || cell.label >= spec.num_classes)
      throw ConfigError("synthetic cell index out of range");
    for (double v : cell.var)
      if (v <= 0) throw ConfigError("synthetic covariance must be positive definite");
    for (int i = 0; i < cell.count; ++i) {
      Sample s;
      s.label = cell.label;
      s.group = cell.group;
      s.features.resize(cell.mean.size());
      for (size_t d = 0; d < cell.mean.size(); ++d)
        s.features[d] = cell.mean[d] + std::sqrt(cell.var[d]) * nd(rng);
      out.clients[cell.client].push_back(std::move(s));
    }
  }
  out.validate();
  return out;
}

std::vector<double> synth_posterior(const SyntheticSpec& spec,
                                    const std::vector<double>& x, int group,
                                    int client) {
  std::vector<double> log_weighted(spec.num_classes,
                                   -std::numeric_limits<double>::infinity());
  for (const auto& cell : spec.cells) {
    if (cell.client != client || cell.group != group) continue;
    double lp = std::log(static_cast<double>(cell.count));
    for (size_t d = 0; d < cell.mean.size(); ++d) {
      double diff = x[d] - cell.mean[d];
      lp += -0.5 * diff * diff / cell.var[d] - 0.5 * std::log(2 * M_PI * cell.var[d]);
    }
    double& acc = log_weighted[cell.label];
    acc = (acc == -std::numeric_limits<double>::infinity())
              ? lp
              : log_sum_exp({acc, lp});
  }
  return softmax(log_weighted);
}

SplitDataset train_test_split(const FederatedDataset& data, double train_frac,
                              uint64_t seed) {
  SplitDataset out;
  out.train = data;
  out.test = data;
  out.train.clients.assign(data.num_clients(), {});
  out.test.clients.assign(data.num_clients(), {});
  for (int k = 0; k < data.num_clients(); ++k) {
    std::vector<size_t> idx(data.clients[k].size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(seed, 0x7e5u, k);
    std::shuffle(idx.begin(), idx.end(), rng);
    size_t n_train = static_cast<size_t>(std::llround(train_frac * idx.size()));
    n_train = std::min(std::max<size_t>(n_train, 1), idx.size() - 1);
    for (size_t i = 0; i < idx.size(); ++i) {
      auto& dst = (i < n_train) ? out.train.clients[k] : out.test.clients[k];
      dst.push_back(data.clients[k][idx[i]]);
    }
  }
  return out;
}

}  // namespace fedfact
