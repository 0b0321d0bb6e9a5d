#include "fairleak/fair_reduction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fairleak/random.hpp"

namespace fairleak {

void RandomizedClassifier::validate() const {
  if (members.empty())
    throw std::invalid_argument("randomized classifier has no members");
  double sum = 0.0;
  for (const auto& [model, weight] : members) {
    if (!model) throw std::invalid_argument("null member model");
    if (weight < 0.0) throw std::invalid_argument("negative mixture weight");
    sum += weight;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("mixture weights must sum to 1");
}

RandomizedClassifier RandomizedClassifier::singleton(ModelPtr model) {
  RandomizedClassifier clf;
  clf.members.emplace_back(std::move(model), 1.0);
  return clf;
}

double expected_prediction(const RandomizedClassifier& clf,
                           std::span<const double> x) {
  double p = 0.0;
  for (const auto& [model, weight] : clf.members)
    p += weight * model->predict_prob(x);
  return p;
}

double expected_loss(const RandomizedClassifier& clf, const DataPoint& z) {
  double loss = 0.0;
  for (const auto& [model, weight] : clf.members)
    loss += weight * cross_entropy(model->predict_prob(z.x), z.y);
  return loss;
}

void EGConfig::validate() const {
  if (delta < 0.0) throw std::invalid_argument("delta must be >= 0");
  if (iterations <= 0) throw std::invalid_argument("iterations must be > 0");
  if (bound <= 0.0 || eta <= 0.0)
    throw std::invalid_argument("bound and eta must be > 0");
}

double point_error(const RandomizedClassifier& clf, const DataPoint& pt,
                   bool hard_decisions) {
  if (!hard_decisions)
    return std::abs(expected_prediction(clf, pt.x) - pt.y);
  double err = 0.0;
  for (const auto& [model, weight] : clf.members) {
    int pred = model->predict_prob(pt.x) >= 0.5 ? 1 : 0;
    err += weight * (pred != pt.y ? 1.0 : 0.0);
  }
  return err;
}

ErrorRates error_rates(const RandomizedClassifier& clf, const DatasetView& view,
                       bool hard_decisions) {
  std::map<SubgroupKey, double> cell_sum;
  std::map<SubgroupKey, std::size_t> cell_count;
  std::map<int, double> label_sum;
  std::map<int, std::size_t> label_count;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const DataPoint& pt = view.point(i);
    double err = point_error(clf, pt, hard_decisions);
    SubgroupKey key{pt.g, pt.y};
    cell_sum[key] += err;
    cell_count[key] += 1;
    label_sum[pt.y] += err;
    label_count[pt.y] += 1;
  }
  for (int g : view.data->groups())
    for (int y : {0, 1})
      if (cell_count.find({g, y}) == cell_count.end())
        throw std::runtime_error("empty subgroup cell " +
                                 to_string(SubgroupKey{g, y}));
  ErrorRates rates;
  for (const auto& [key, sum] : cell_sum)
    rates.by_cell[key] = sum / static_cast<double>(cell_count[key]);
  for (const auto& [y, sum] : label_sum)
    rates.by_label[y] = sum / static_cast<double>(label_count[y]);
  return rates;
}

namespace {

double gap_from_rates(const std::map<SubgroupKey, double>& by_cell) {
  double gap = 0.0;
  for (const auto& [a, ra] : by_cell)
    for (const auto& [b, rb] : by_cell)
      if (a.y == b.y) gap = std::max(gap, std::abs(ra - rb));
  return gap;
}

}  // namespace

double fairness_gap(const RandomizedClassifier& clf, const DatasetView& view,
                    bool hard_decisions) {
  return gap_from_rates(error_rates(clf, view, hard_decisions).by_cell);
}

double fairness_gap(const RandomizedClassifier& clf, const Dataset& data,
                    bool hard_decisions) {
  return fairness_gap(clf, DatasetView::full(data), hard_decisions);
}

std::vector<Moment> eo_moments(const DatasetView& view) {
  std::map<SubgroupKey, std::size_t> cells;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const DataPoint& pt = view.point(i);
    cells[{pt.g, pt.y}] += 1;
  }
  std::vector<Moment> moments;
  for (const auto& [key, count] : cells) {
    moments.push_back({key, +1});
    moments.push_back({key, -1});
  }
  return moments;
}

ViolationVector eo_violations(const RandomizedClassifier& clf,
                              const DatasetView& view, bool hard_decisions) {
  ErrorRates rates = error_rates(clf, view, hard_decisions);
  ViolationVector out;
  out.moments = eo_moments(view);
  for (const Moment& m : out.moments)
    out.values.push_back(m.sign *
                         (rates.by_cell.at(m.cell) - rates.by_label.at(m.cell.y)));
  return out;
}

SampleWeights reweight_costs(const std::vector<double>& multipliers,
                             const std::vector<Moment>& moments,
                             const DatasetView& view) {
  if (multipliers.size() != moments.size())
    throw std::invalid_argument("multiplier / moment length mismatch");
  const std::size_t n = view.size();
  std::map<SubgroupKey, double> cell_count;
  std::map<int, double> label_count;
  for (std::size_t i = 0; i < n; ++i) {
    const DataPoint& pt = view.point(i);
    cell_count[{pt.g, pt.y}] += 1.0;
    label_count[pt.y] += 1.0;
  }

  // Per-cell coefficient on a point's misclassification probability:
  // 1/n from the plain loss, plus each moment's contribution through
  // its cell term (1/n_cell) and its pooled term (-1/n_label).
  std::map<SubgroupKey, double> coeff;
  for (const auto& [key, count] : cell_count) {
    double c = 1.0 / static_cast<double>(n);
    for (std::size_t m = 0; m < moments.size(); ++m) {
      const Moment& mo = moments[m];
      if (mo.cell.y != key.y) continue;
      double contrib = 0.0;
      if (mo.cell == key) contrib += 1.0 / cell_count.at(mo.cell);
      contrib -= 1.0 / label_count.at(key.y);
      c += multipliers[m] * mo.sign * contrib;
    }
    coeff[key] = c;
  }

  SampleWeights sw;
  sw.w.resize(n);
  sw.label_override.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const DataPoint& pt = view.point(i);
    double c = coeff.at({pt.g, pt.y}) * static_cast<double>(n);
    if (c >= 0.0) {
      sw.w[i] = c;
    } else {
      // negative cost: the Lagrangian rewards misclassifying this point
      sw.w[i] = -c;
      sw.label_override[i] = 1 - pt.y;
    }
  }
  return sw;
}

namespace {

struct IterateStats {
  std::map<SubgroupKey, double> cell_err;  // mean expected error per cell
  double mean_err = 0.0;                   // over the whole view
};

IterateStats iterate_stats(const RandomizedClassifier& clf,
                           const DatasetView& view, bool hard) {
  IterateStats st;
  std::map<SubgroupKey, std::size_t> counts;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const DataPoint& pt = view.point(i);
    double err = point_error(clf, pt, hard);
    st.cell_err[{pt.g, pt.y}] += err;
    counts[{pt.g, pt.y}] += 1;
    st.mean_err += err;
  }
  for (auto& [key, sum] : st.cell_err) sum /= static_cast<double>(counts[key]);
  st.mean_err /= static_cast<double>(view.size());
  return st;
}

struct MixtureEval {
  double gap = 0.0;
  double err = 0.0;
};

MixtureEval eval_mixture(const std::vector<double>& w,
                         const std::vector<IterateStats>& stats) {
  std::map<SubgroupKey, double> cells;
  MixtureEval ev;
  for (std::size_t t = 0; t < w.size(); ++t) {
    ev.err += w[t] * stats[t].mean_err;
    for (const auto& [key, err] : stats[t].cell_err) cells[key] += w[t] * err;
  }
  ev.gap = gap_from_rates(cells);
  return ev;
}

// Minimizes err(w) subject to gap(w) <= delta over the simplex. Both
// terms are convex piecewise-linear in w; normalized mirror-descent
// subgradient steps on a penalized objective, restarted once from a
// feasibility-first solution, give the best feasible mixture seen (or
// the best penalized score when the hull holds no feasible point).
std::vector<double> polish_weights(const std::vector<IterateStats>& stats,
                                   double delta, double tol,
                                   std::vector<double> w0) {
  const std::size_t T = stats.size();
  const double penalty = 50.0;
  const double feasible_gap = delta + 0.5 * tol;

  auto score = [&](const MixtureEval& ev) {
    return ev.err + penalty * std::max(0.0, ev.gap - delta);
  };

  std::vector<double> best_w = w0;
  MixtureEval first = eval_mixture(w0, stats);
  double best_score = score(first);
  bool have_feasible = first.gap <= feasible_gap;
  double best_feasible_err = have_feasible
                                 ? first.err
                                 : std::numeric_limits<double>::infinity();
  std::vector<double> best_feasible_w = w0;

  std::vector<double> grad(T);
  // descend `objective` (0: penalized error, 1: gap only) from w
  auto descend = [&](std::vector<double> w, int objective, int steps) {
    for (int it = 0; it < steps; ++it) {
      std::map<SubgroupKey, double> cells;
      for (std::size_t t = 0; t < T; ++t)
        for (const auto& [key, err] : stats[t].cell_err)
          cells[key] += w[t] * err;
      double gap = 0.0;
      SubgroupKey hi{}, lo{};
      for (const auto& [a, ra] : cells)
        for (const auto& [b, rb] : cells)
          if (a.y == b.y && ra - rb > gap) {
            gap = ra - rb;
            hi = a;
            lo = b;
          }
      double gmax = 1e-12;
      for (std::size_t t = 0; t < T; ++t) {
        double active = gap > (objective == 1 ? 0.0 : delta)
                            ? stats[t].cell_err.at(hi) - stats[t].cell_err.at(lo)
                            : 0.0;
        grad[t] = objective == 1 ? active
                                 : stats[t].mean_err + penalty * active;
        gmax = std::max(gmax, std::abs(grad[t]));
      }
      double lr = 0.5 / (gmax * std::sqrt(1.0 + it));
      double norm = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        w[t] *= std::exp(-lr * grad[t] * gmax);
        norm += w[t];
      }
      for (auto& v : w) v /= norm;
      MixtureEval ev = eval_mixture(w, stats);
      double s = score(ev);
      if (s < best_score) {
        best_score = s;
        best_w = w;
      }
      if (ev.gap <= feasible_gap && ev.err < best_feasible_err) {
        best_feasible_err = ev.err;
        best_feasible_w = w;
        have_feasible = true;
      }
    }
    return w;
  };

  descend(w0, 0, 3000);
  // restart from the most feasible corner of the hull
  std::vector<double> wf = descend(w0, 1, 1500);
  descend(std::move(wf), 0, 3000);

  return have_feasible ? best_feasible_w : best_w;
}

}  // namespace

RandomizedClassifier eg_fit(const DatasetView& view, const EGConfig& cfg,
                            std::uint64_t seed) {
  cfg.validate();
  std::vector<Moment> moments = eo_moments(view);
  const std::size_t K = moments.size();

  // Multipliers live on the scaled simplex {lambda >= 0, sum <= B},
  // parameterized through theta with an implicit slack coordinate.
  // Starting far below the slack makes the first fit unconstrained and
  // lets the multipliers ramp through the useful mid-range instead of
  // jumping straight to B-scale values.
  std::vector<double> theta(K, -8.0);
  auto multipliers = [&] {
    std::vector<double> lam(K);
    double tmax = 0.0;
    for (double t : theta) tmax = std::max(tmax, t);
    double z = std::exp(-tmax);  // slack coordinate at theta = 0
    for (std::size_t m = 0; m < K; ++m) z += std::exp(theta[m] - tmax);
    for (std::size_t m = 0; m < K; ++m)
      lam[m] = cfg.bound * std::exp(theta[m] - tmax) / z;
    return lam;
  };

  std::vector<ModelPtr> iterates;
  std::vector<IterateStats> stats;
  std::vector<double> prev_viol;
  std::vector<double> gain(K, 1.0);
  double eta = cfg.eta;
  int same_sign = 0;
  const int min_iterations = std::min(cfg.iterations, 5);
  const int patience = 8;
  const double improve_tol = 1e-4;

  std::vector<double> final_w;
  bool met = false;
  double best_err = std::numeric_limits<double>::infinity();
  int stale = 0;

  for (int t = 0; t < cfg.iterations; ++t) {
    SampleWeights sw = reweight_costs(multipliers(), moments, view);
    std::uint64_t iter_seed = derive_seed(seed, "eg-iter", t);
    ModelPtr model = cfg.base == BaseLearner::network
                         ? train_network(view, sw, cfg.train, iter_seed)
                         : train_tree(view, sw, cfg.train, iter_seed);
    RandomizedClassifier single = RandomizedClassifier::singleton(model);
    iterates.push_back(model);
    stats.push_back(iterate_stats(single, view, cfg.hard_decisions));

    // multiplier ascent on this iterate's violations; the step halves on
    // oscillation and recovers when the violations keep one sign
    // (persistent violations mean the multipliers move too timidly)
    ViolationVector viol = eo_violations(single, view, cfg.hard_decisions);
    if (!prev_viol.empty()) {
      double dot = 0.0;
      for (std::size_t m = 0; m < K; ++m) dot += viol.values[m] * prev_viol[m];
      if (dot < 0.0) {
        eta = std::max(eta * 0.5, 0.05);
        same_sign = 0;
      } else if (++same_sign >= 3) {
        eta = std::min(eta * 2.0, cfg.eta);
        same_sign = 0;
      }
      // A moment whose violation keeps its sign while staying above delta
      // has a multiplier moving too slowly to matter; amplify its step
      // geometrically until the sign flips. Small-magnitude moments would
      // otherwise never reach a useful scale within the iteration budget.
      for (std::size_t m = 0; m < K; ++m) {
        if (prev_viol[m] * viol.values[m] > 0.0 &&
            std::abs(viol.values[m]) > cfg.delta)
          gain[m] = std::min(gain[m] * 1.5, 50.0);
        else
          gain[m] = 1.0;
      }
    }
    for (std::size_t m = 0; m < K; ++m)
      theta[m] += eta * gain[m] * (viol.values[m] - cfg.delta);
    prev_viol = viol.values;

    // Candidate mixture over the iterates so far; keep iterating while
    // the best feasible mixture's error still improves.
    if (t + 1 >= min_iterations || t + 1 == cfg.iterations) {
      std::vector<double> w(iterates.size(),
                            1.0 / static_cast<double>(iterates.size()));
      w = polish_weights(stats, cfg.delta, cfg.gap_tolerance, std::move(w));
      MixtureEval ev = eval_mixture(w, stats);
      if (ev.gap <= cfg.delta + cfg.gap_tolerance) {
        if (!met || ev.err < best_err - improve_tol) {
          final_w = std::move(w);
          best_err = ev.err;
          stale = 0;
        } else {
          ++stale;
        }
        met = true;
        if (stale >= patience) break;
      } else if (!met) {
        final_w = std::move(w);  // best-effort fallback if never feasible
      }
    }
  }

  // Drop negligible members so unconstrained-equivalent fits stay cheap
  // to evaluate.
  RandomizedClassifier clf;
  double total = 0.0;
  for (std::size_t t = 0; t < final_w.size(); ++t)
    if (final_w[t] > 1e-6) total += final_w[t];
  for (std::size_t t = 0; t < final_w.size(); ++t)
    if (final_w[t] > 1e-6)
      clf.members.emplace_back(iterates[t], final_w[t] / total);
  clf.gap_unmet = !met;
  clf.achieved_gap = fairness_gap(clf, view, cfg.hard_decisions);
  clf.validate();
  return clf;
}

}  // namespace fairleak
