#include "fedfact/constraints.hpp"

#include <algorithm>
#include <cmath>

namespace fedfact {

std::string criterion_name(Criterion c) {
  switch (c) {
    case Criterion::DP: return "dp";
    case Criterion::EOP: return "eop";
    case Criterion::EO: return "eo";
  }
  return "?";
}

Criterion parse_criterion(const std::string& s) {
  if (s == "dp") return Criterion::DP;
  if (s == "eop") return Criterion::EOP;
  if (s == "eo") return Criterion::EO;
  throw ConfigError("unknown fairness criterion: " + s);
}

std::string ConstraintIndex::describe() const {
  std::string s = criterion_name(criterion);
  s += global ? "/global" : "/local(k=" + std::to_string(client) + ")";
  s += "/a'=" + std::to_string(probe_group) + "/y=" + std::to_string(probe_class);
  if (criterion == Criterion::EO) s += "/branch=" + std::to_string(branch);
  return s;
}

double ConstraintMatrix::inner(int a, int k, const Mat& confusion) const {
  double c = coef(a, k);
  if (c == 0.0) return 0.0;
  double s = 0.0;
  switch (row_kind) {
    case RowKind::AllRows:
      for (int i = 0; i < num_classes; ++i) s += confusion(i, column);
      break;
    case RowKind::DiagOnly:
      s = confusion(column, column);
      break;
    case RowKind::OffDiagRows:
      for (int i = 0; i < num_classes; ++i)
        if (i != column) s += confusion(i, column);
      break;
  }
  return c * s;
}

double ConstraintMatrix::transpose_apply_at_column(int a, int k,
                                                   const std::vector<double>& v) const {
  double c = coef(a, k);
  if (c == 0.0) return 0.0;
  double s = 0.0;
  switch (row_kind) {
    case RowKind::AllRows:
      for (int i = 0; i < num_classes; ++i) s += v[i];
      break;
    case RowKind::DiagOnly:
      s = v[column];
      break;
    case RowKind::OffDiagRows:
      for (int i = 0; i < num_classes; ++i)
        if (i != column) s += v[i];
      break;
  }
  return c * s;
}

Mat ConstraintMatrix::dense(int a, int k) const {
  Mat d(num_classes, num_classes, 0.0);
  double c = coef(a, k);
  for (int i = 0; i < num_classes; ++i) {
    bool hit = row_kind == RowKind::AllRows ||
               (row_kind == RowKind::DiagOnly && i == column) ||
               (row_kind == RowKind::OffDiagRows && i != column);
    if (hit) d(i, column) = c;
  }
  return d;
}

std::vector<ConstraintIndex> enumerate_probes(Criterion c, bool global, int client,
                                              int num_groups, int num_classes) {
  std::vector<ConstraintIndex> out;
  int branches = (c == Criterion::EO) ? 2 : 1;
  for (int a = 0; a < num_groups; ++a)
    for (int y = 0; y < num_classes; ++y)
      for (int b = 0; b < branches; ++b) {
        ConstraintIndex idx;
        idx.criterion = c;
        idx.global = global;
        idx.client = global ? -1 : client;
        idx.probe_group = a;
        idx.probe_class = y;
        idx.branch = b;
        out.push_back(idx);
      }
  return out;
}

namespace {

[[noreturn]] void degenerate(const ConstraintIndex& idx, const std::string& what) {
  throw EmptyCellError("constraint " + idx.describe() +
                       " unbuildable: zero probability in " + what);
}

}  // namespace

ConstraintMatrix build_constraint(const ConstraintIndex& index,
                                  const PopulationStats& st) {
  const int A = st.num_groups, N = st.num_clients, m = st.num_classes;
  const int ap = index.probe_group, y = index.probe_class;
  ConstraintMatrix cm;
  cm.index = index;
  cm.column = y;
  cm.num_classes = m;
  cm.coef = Mat(A, N, 0.0);

  auto fill_global = [&](auto coef_fn) {
    for (int a = 0; a < A; ++a)
      for (int k = 0; k < N; ++k) cm.coef(a, k) = coef_fn(a, k);
  };
  auto fill_local = [&](auto coef_fn) {
    int k = index.client;
    for (int a = 0; a < A; ++a) cm.coef(a, k) = coef_fn(a, k);
  };

  bool eop_like =
      index.criterion == Criterion::EOP ||
      (index.criterion == Criterion::EO && index.branch == 0);
  bool eo_fpr = index.criterion == Criterion::EO && index.branch == 1;

  if (index.criterion == Criterion::DP) {
    cm.row_kind = ConstraintMatrix::RowKind::AllRows;
    if (index.global) {
      if (st.c_a(ap) == 0) degenerate(index, "p_{a'}");
      fill_global([&](int a, int k) {
        return st.p_k_given_a(k, ap) * (a == ap ? 1.0 : 0.0) - st.p_ak(a, k);
      });
    } else {
      if (st.c_k(index.client) == 0) degenerate(index, "p_k");
      if (st.c_ak(ap, index.client) == 0) degenerate(index, "p_{a',k}");
      fill_local([&](int a, int k) {
        return (a == ap ? 1.0 : 0.0) - st.p_a_given_k(a, k);
      });
    }
  } else if (eop_like) {
    cm.row_kind = ConstraintMatrix::RowKind::DiagOnly;
    if (index.global) {
      if (st.c_ay(ap, y) == 0) degenerate(index, "p_{a',y}");
      if (st.c_y(y) == 0) degenerate(index, "p_y");
      fill_global([&](int a, int k) {
        return st.p_ak(ap, k) / st.p_ay(ap, y) * (a == ap ? 1.0 : 0.0) -
               st.p_ak(a, k) / st.p_y(y);
      });
    } else {
      int k0 = index.client;
      if (st.count[ap][y][k0] == 0) degenerate(index, "p_{a',y,k}");
      if (st.c_yk(y, k0) == 0) degenerate(index, "p_{y,k}");
      fill_local([&](int a, int k) {
        return st.p_ak(ap, k) / st.p_ayk(ap, y, k) * (a == ap ? 1.0 : 0.0) -
               st.p_ak(a, k) / st.p_yk(y, k);
      });
    }
  } else if (eo_fpr) {
    cm.row_kind = ConstraintMatrix::RowKind::OffDiagRows;
    if (index.global) {
      double pa_not_y = st.p_a(ap) - st.p_ay(ap, y);
      double p_not_y = 1.0 - st.p_y(y);
      if (pa_not_y <= 0) degenerate(index, "sum_{y'!=y} p_{a',y'}");
      if (p_not_y <= 0) degenerate(index, "sum_{y'!=y} p_{y'}");
      fill_global([&](int a, int k) {
        return st.p_ak(ap, k) / pa_not_y * (a == ap ? 1.0 : 0.0) -
               st.p_ak(a, k) / p_not_y;
      });
    } else {
      int k0 = index.client;
      double pa_not_yk = st.p_ak(ap, k0) - st.p_ayk(ap, y, k0);
      double p_not_yk = st.p_k(k0) - st.p_yk(y, k0);
      if (pa_not_yk <= 0) degenerate(index, "sum_{y'!=y} p_{a',y',k}");
      if (p_not_yk <= 0) degenerate(index, "sum_{y'!=y} p_{y',k}");
      fill_local([&](int a, int k) {
        return st.p_ak(ap, k) / pa_not_yk * (a == ap ? 1.0 : 0.0) -
               st.p_ak(a, k) / p_not_yk;
      });
    }
  }
  return cm;
}

ConstraintSet build_constraint_set(const FairnessSpec& spec,
                                   const PopulationStats& stats,
                                   bool drop_degenerate) {
  ConstraintSet out;
  out.local_constraints.resize(stats.num_clients);
  auto try_build = [&](const ConstraintIndex& idx,
                       std::vector<ConstraintMatrix>& dst) {
    try {
      dst.push_back(build_constraint(idx, stats));
    } catch (const EmptyCellError&) {
      if (!drop_degenerate) throw;
      out.dropped.push_back(idx);
    }
  };
  if (spec.enable_global) {
    for (const auto& idx : enumerate_probes(spec.criterion, true, -1,
                                            stats.num_groups, stats.num_classes))
      try_build(idx, out.global_constraints);
  }
  if (spec.enable_local) {
    for (int k = 0; k < stats.num_clients; ++k)
      for (const auto& idx : enumerate_probes(spec.criterion, false, k,
                                              stats.num_groups, stats.num_classes))
        try_build(idx, out.local_constraints[k]);
  }
  return out;
}

ConfusionMatrix empirical_confusion(const std::vector<int>& predictions,
                                    const std::vector<Sample>& shard, int group,
                                    int client) {
  if (predictions.size() != shard.size())
    throw DataError("predictions not aligned with shard");
  int m = 0;
  for (const auto& s : shard) m = std::max(m, s.label + 1);
  for (int p : predictions) m = std::max(m, p + 1);
  long long n_group = 0;
  for (const auto& s : shard)
    if (s.group == group) ++n_group;
  if (n_group == 0)
    throw EmptyCellError("no samples of group " + std::to_string(group) +
                         " at client " + std::to_string(client));
  ConfusionMatrix cm;
  cm.group = group;
  cm.client = client;
  cm.entries = Mat(m, m, 0.0);
  for (size_t i = 0; i < shard.size(); ++i)
    if (shard[i].group == group)
      cm.entries(shard[i].label, predictions[i]) += 1.0 / n_group;
  return cm;
}

ConfusionFamily compute_confusions(
    const std::vector<std::vector<int>>& predictions_per_client,
    const FederatedDataset& data) {
  ConfusionFamily fam;
  fam.num_groups = data.num_groups;
  fam.num_clients = data.num_clients();
  fam.cells.assign(fam.num_groups,
                   std::vector<std::optional<ConfusionMatrix>>(fam.num_clients));
  for (int k = 0; k < fam.num_clients; ++k) {
    for (int a = 0; a < fam.num_groups; ++a) {
      bool has = false;
      for (const auto& s : data.clients[k])
        if (s.group == a) {
          has = true;
          break;
        }
      if (!has) continue;
      auto cm = empirical_confusion(predictions_per_client[k], data.clients[k], a, k);
      // force m x m shape even if some class never appears
      if (cm.entries.rows < data.num_classes) {
        Mat full(data.num_classes, data.num_classes, 0.0);
        for (int i = 0; i < cm.entries.rows; ++i)
          for (int j = 0; j < cm.entries.cols; ++j) full(i, j) = cm.entries(i, j);
        cm.entries = std::move(full);
      }
      fam.cells[a][k] = std::move(cm);
    }
  }
  return fam;
}

double disparity(const ConstraintMatrix& constraint,
                 const ConfusionFamily& confusions) {
  double s = 0.0;
  for (int a = 0; a < confusions.num_groups; ++a)
    for (int k = 0; k < confusions.num_clients; ++k) {
      if (constraint.coef(a, k) == 0.0) continue;
      const Mat* c = confusions.get(a, k);
      if (!c)
        throw EmptyCellError("missing confusion cell (a=" + std::to_string(a) +
                             ", k=" + std::to_string(k) + ") for probe " +
                             constraint.index.describe());
      s += constraint.inner(a, k, *c);
    }
  return s;
}

double risk(const std::vector<std::vector<int>>& predictions_per_client,
            const FederatedDataset& data, const RiskMatrix& r) {
  double total = 0.0;
  size_t n = data.total_samples();
  for (int k = 0; k < data.num_clients(); ++k) {
    const auto& shard = data.clients[k];
    const auto& preds = predictions_per_client[k];
    if (preds.size() != shard.size())
      throw DataError("predictions not aligned with shard");
    for (size_t i = 0; i < shard.size(); ++i)
      total += r.entries(shard[i].label, preds[i]);
  }
  return total / n;
}

DisparityReport evaluate_disparities(const ConstraintSet& constraints,
                                     const ConfusionFamily& confusions) {
  DisparityReport rep;
  // EO probes pair branch 0/1 per (a', y); the reported value is the mean of
  // the two branch magnitudes. enumerate_probes emits branch 0 then 1
  // back-to-back, so adjacent pairs match up.
  auto scan = [&](const std::vector<ConstraintMatrix>& list, double& maxv) {
    for (size_t i = 0; i < list.size(); ++i) {
      double v = disparity(list[i], confusions);
      rep.per_probe.emplace_back(list[i].index, v);
      double mag = std::fabs(v);
      if (list[i].index.criterion == Criterion::EO) {
        if (list[i].index.branch == 1 && i > 0 &&
            list[i - 1].index.probe_group == list[i].index.probe_group &&
            list[i - 1].index.probe_class == list[i].index.probe_class) {
          double prev = std::fabs(rep.per_probe[rep.per_probe.size() - 2].second);
          maxv = std::max(maxv, 0.5 * (prev + mag));
        }
      } else {
        maxv = std::max(maxv, mag);
      }
    }
  };
  scan(constraints.global_constraints, rep.max_global);
  for (const auto& loc : constraints.local_constraints) scan(loc, rep.max_local);
  return rep;
}

}  // namespace fedfact
