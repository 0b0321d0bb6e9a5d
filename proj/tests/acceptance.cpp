// Acceptance gate: end-to-end statistical checks on the full pipeline.
// Run with no arguments for all criteria, or pass criterion numbers to
// run a subset (useful while iterating; the gate is the full run).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fairleak/harness.hpp"
#include "fairleak/random.hpp"

using namespace fairleak;
namespace fs = std::filesystem;

namespace {

const SubgroupKey kG0n{0, 0}, kG0p{0, 1}, kG1n{1, 0}, kG1p{1, 1};

struct CheckList {
  bool ok = true;
  std::ostringstream detail;

  void expect(bool cond, const std::string& what) {
    if (!cond) ok = false;
    detail << (cond ? "    ok: " : "    VIOLATED: ") << what << '\n';
  }
  void expect_near(double got, double want, double tol,
                   const std::string& what) {
    std::ostringstream line;
    line << what << ": got " << got << ", want " << want << " +- " << tol;
    expect(std::abs(got - want) <= tol, line.str());
  }
};

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// The synthetic benchmark configuration: 2500 points, network base,
// 30-model pools on random 50% halves.
ExperimentConfig benchmark_config(std::uint64_t seed, double delta) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.base = BaseLearner::network;
  cfg.eg.base = BaseLearner::network;
  cfg.eg.delta = delta;
  cfg.validate();
  return cfg;
}

// Reports from the benchmark runs are shared by criteria 2, 3, 4 and 6;
// cached on disk so reruns of the gate do not retrain 1200 pools.
const char* kCacheDir = "acceptance_cache";

PrivacyReport benchmark_report(int rep) {
  std::string path =
      std::string(kCacheDir) + "/bench_rep" + std::to_string(rep) + ".json";
  if (fs::exists(path)) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return report_from_json(ss.str());
  }
  ExperimentConfig cfg = benchmark_config(1000 + rep, 0.001);
  ExperimentResult result = run_experiment_in_memory(cfg);
  fs::create_directories(kCacheDir);
  std::ofstream out(path);
  out << report_to_json(result.report);
  return result.report;
}

PrivacyReport sweep_report(double delta, int rep) {
  std::ostringstream name;
  name << kCacheDir << "/sweep_d" << delta << "_rep" << rep << ".json";
  if (fs::exists(name.str())) {
    std::ifstream in(name.str());
    std::stringstream ss;
    ss << in.rdbuf();
    return report_from_json(ss.str());
  }
  // Same seed family as the benchmark runs: each sweep leg then reuses
  // the benchmark datasets and masks and differs only in delta, so the
  // cross-delta comparison is paired and dataset-level variance cancels.
  ExperimentConfig cfg = benchmark_config(1000 + rep, delta);
  ExperimentResult result = run_experiment_in_memory(cfg);
  fs::create_directories(kCacheDir);
  std::ofstream out(name.str());
  out << report_to_json(result.report);
  return result.report;
}

constexpr int kBenchReps = 20;
constexpr int kSweepReps = 8;

// --------------------------------------------------------------------------
// 1. Accuracy and fairness of single models, 20 repetitions.

bool criterion1(CheckList& c) {
  std::vector<double> unc_train, unc_test, fair_train, fair_test, fair_gap;
  for (int rep = 0; rep < kBenchReps; ++rep) {
    std::uint64_t seed = derive_seed(500, "acc-rep", rep);
    auto cfg = default_synthetic_config();
    Dataset data = generate_synthetic(cfg, derive_seed(seed, "data"));
    auto masks = draw_masks(data, 1, data.size() / 2, derive_seed(seed, "mask"));
    DatasetView train = DatasetView::from_mask(data, masks[0]);
    MembershipMask inverse = masks[0];
    inverse.in_train.flip();
    DatasetView test = DatasetView::from_mask(data, inverse);

    TrainOptions opts;
    ModelPtr unc = train_network(train, SampleWeights::uniform(train.size()),
                                 opts, derive_seed(seed, "unc"));
    RandomizedClassifier unc_mix = RandomizedClassifier::singleton(unc);

    EGConfig eg;
    eg.base = BaseLearner::network;
    eg.delta = 0.001;
    RandomizedClassifier fair = eg_fit(train, eg, derive_seed(seed, "fair"));

    // Accuracy follows the report-table convention: the unconstrained
    // model is scored as a probabilistic classifier (expected accuracy),
    // the reduction mixture as a sampled member emitting a thresholded
    // decision.
    auto accuracy = [](const RandomizedClassifier& m, const DatasetView& v,
                       bool decisions) {
      double s = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i)
        s += 1.0 - point_error(m, v.point(i), decisions);
      return s / static_cast<double>(v.size());
    };
    unc_train.push_back(accuracy(unc_mix, train, false));
    unc_test.push_back(accuracy(unc_mix, test, false));
    fair_train.push_back(accuracy(fair, train, true));
    fair_test.push_back(accuracy(fair, test, true));
    fair_gap.push_back(fairness_gap(fair, train, false));
  }
  c.expect_near(mean(unc_train), 0.859, 0.02, "unconstrained train accuracy");
  c.expect_near(mean(unc_test), 0.856, 0.02, "unconstrained test accuracy");
  c.expect_near(mean(fair_train), 0.830, 0.025, "fair train accuracy");
  c.expect_near(mean(fair_test), 0.818, 0.025, "fair test accuracy");
  {
    std::ostringstream line;
    line << "fair mean train gap " << mean(fair_gap) << " <= 0.002";
    c.expect(mean(fair_gap) <= 0.002, line.str());
  }
  return c.ok;
}

// --------------------------------------------------------------------------
// 2. Attack table: single vs per-subgroup thresholds on the pools.

bool criterion2(CheckList& c) {
  std::map<SubgroupKey, std::vector<double>> unc_single, unc_multi, fair_single,
      fair_multi;
  for (int rep = 0; rep < kBenchReps; ++rep) {
    PrivacyReport r = benchmark_report(rep);
    for (const auto& [key, v] : r.risks_unconstrained_single.cell_risk)
      unc_single[key].push_back(v);
    for (const auto& [key, v] : r.risks_unconstrained.cell_risk)
      unc_multi[key].push_back(v);
    for (const auto& [key, v] : r.risks_fair_single.cell_risk)
      fair_single[key].push_back(v);
    for (const auto& [key, v] : r.risks_fair.cell_risk)
      fair_multi[key].push_back(v);
  }
  c.expect_near(mean(unc_single[kG0n]), 0.529, 0.03,
                "unconstrained G0- single-threshold accuracy");
  c.expect_near(mean(unc_multi[kG0n]), 0.618, 0.03,
                "unconstrained G0- per-subgroup accuracy");
  c.expect_near(mean(fair_multi[kG0n]), 0.692, 0.03,
                "fair G0- per-subgroup accuracy");
  for (const auto& key : {kG0n, kG0p, kG1n, kG1p}) {
    std::ostringstream a, b;
    a << "unconstrained " << to_string(key) << " multiple "
      << mean(unc_multi[key]) << " >= single " << mean(unc_single[key]);
    c.expect(mean(unc_multi[key]) >= mean(unc_single[key]), a.str());
    b << "fair " << to_string(key) << " multiple " << mean(fair_multi[key])
      << " >= single " << mean(fair_single[key]);
    c.expect(mean(fair_multi[key]) >= mean(fair_single[key]), b.str());
  }
  return c.ok;
}

// --------------------------------------------------------------------------
// 3. Privacy-cost signature across subgroups.

bool criterion3(CheckList& c) {
  std::map<SubgroupKey, std::vector<double>> cost;
  int g0n_largest_positive = 0;
  for (int rep = 0; rep < kBenchReps; ++rep) {
    PrivacyReport r = benchmark_report(rep);
    for (const auto& [key, v] : r.cost.cell_cost) cost[key].push_back(v);
    double g0n = r.cost.cell_cost.at(kG0n);
    bool largest = g0n > 0.0;
    for (const auto& [key, v] : r.cost.cell_cost)
      if (!(key == kG0n) && v >= g0n) largest = false;
    if (largest) ++g0n_largest_positive;
  }
  c.expect_near(mean(cost[kG0n]), 0.069, 0.03, "mean G0- privacy cost");
  c.expect_near(mean(cost[kG1n]), -0.020, 0.03, "mean G1- privacy cost");
  c.expect_near(mean(cost[kG0p]), -0.015, 0.03, "mean G0+ privacy cost");
  c.expect_near(mean(cost[kG1p]), -0.020, 0.03, "mean G1+ privacy cost");
  {
    std::ostringstream line;
    line << "G0- cost strictly largest and positive in "
         << g0n_largest_positive << "/" << kBenchReps << " reps (need >= 18)";
    c.expect(g0n_largest_positive >= 18, line.str());
  }
  return c.ok;
}

// --------------------------------------------------------------------------
// 4. Memorization roughly doubles on G0- under the fairness constraint.

bool criterion4(CheckList& c) {
  std::vector<double> mem_fair, mem_unc;
  for (int rep = 0; rep < kBenchReps; ++rep) {
    PrivacyReport r = benchmark_report(rep);
    double sf = 0.0, su = 0.0;
    std::size_t nf = 0, nu = 0;
    for (std::size_t j = 0; j < r.point_group.size(); ++j) {
      if (r.point_group[j] != 0 || r.point_label[j] != 0) continue;
      if (r.memorization_fair[j]) {
        sf += *r.memorization_fair[j];
        ++nf;
      }
      if (r.memorization_unconstrained[j]) {
        su += *r.memorization_unconstrained[j];
        ++nu;
      }
    }
    mem_fair.push_back(sf / nf);
    mem_unc.push_back(su / nu);
  }
  double mf = mean(mem_fair), mu = mean(mem_unc);
  {
    std::ostringstream line;
    line << "fair G0- memorization " << mf << " >= 1.5x unconstrained " << mu;
    c.expect(mf >= 1.5 * mu, line.str());
  }
  c.expect_near(mf, 0.59, 0.15, "fair G0- memorization");
  c.expect_near(mu, 0.29, 0.15, "unconstrained G0- memorization");
  return c.ok;
}

// --------------------------------------------------------------------------
// 5. Fair G0- risk grows as the fairness gap shrinks.

bool criterion5(CheckList& c) {
  std::map<double, double> risk;
  for (double delta : {0.1, 0.01}) {
    std::vector<double> vals;
    for (int rep = 0; rep < kSweepReps; ++rep)
      vals.push_back(sweep_report(delta, rep).risks_fair.cell_risk.at(kG0n));
    risk[delta] = mean(vals);
  }
  {
    // delta = 0.001 is the benchmark configuration itself
    std::vector<double> vals;
    for (int rep = 0; rep < kBenchReps; ++rep)
      vals.push_back(benchmark_report(rep).risks_fair.cell_risk.at(kG0n));
    risk[0.001] = mean(vals);
  }
  c.expect_near(risk[0.1], 0.633, 0.03, "fair G0- risk at delta 0.1");
  c.expect_near(risk[0.01], 0.656, 0.03, "fair G0- risk at delta 0.01");
  c.expect_near(risk[0.001], 0.660, 0.03, "fair G0- risk at delta 0.001");
  {
    std::ostringstream line;
    line << "non-decreasing within noise: " << risk[0.1] << " <= "
         << risk[0.01] << " + 0.01 <= " << risk[0.001] << " + 0.02";
    c.expect(risk[0.1] <= risk[0.01] + 0.01 && risk[0.01] <= risk[0.001] + 0.01,
             line.str());
  }
  return c.ok;
}

// --------------------------------------------------------------------------
// 6. The most vulnerable points concentrate in G0-.

bool criterion6(CheckList& c) {
  std::vector<double> g0n_fraction;
  double max_risk = 0.0;
  for (int rep = 0; rep < kBenchReps; ++rep) {
    PrivacyReport r = benchmark_report(rep);
    auto top = top_vulnerable(r, 20);
    double hits = 0.0;
    for (const auto& vp : top) {
      if (vp.g == 0 && vp.y == 0) hits += 1.0;
      max_risk = std::max(max_risk, vp.risk_fair);
    }
    g0n_fraction.push_back(hits / static_cast<double>(top.size()));
  }
  {
    std::ostringstream line;
    line << "mean top-20 G0- fraction " << mean(g0n_fraction) << " >= 0.70";
    c.expect(mean(g0n_fraction) >= 0.70, line.str());
  }
  {
    std::ostringstream line;
    line << "max fair individual risk " << max_risk << " >= 0.90";
    c.expect(max_risk >= 0.90, line.str());
  }
  return c.ok;
}

// --------------------------------------------------------------------------
// 7. Property re-checks on the core primitives plus full-run determinism.

double brute_force_best_accuracy(const std::vector<double>& members,
                                 const std::vector<double>& nonmembers) {
  std::vector<double> all = members;
  all.insert(all.end(), nonmembers.begin(), nonmembers.end());
  std::sort(all.begin(), all.end());
  std::vector<double> candidates = {all.front() - 1.0, all.back() + 1.0};
  for (std::size_t i = 0; i + 1 < all.size(); ++i)
    candidates.push_back(0.5 * (all[i] + all[i + 1]));
  double best = 0.0;
  for (double tau : candidates) {
    double tpr = 0.0, tnr = 0.0;
    for (double l : members) tpr += l < tau ? 1.0 : 0.0;
    for (double l : nonmembers) tnr += l < tau ? 0.0 : 1.0;
    best = std::max(best, 0.5 * (tpr / members.size() + tnr / nonmembers.size()));
  }
  return best;
}

double brute_force_gap(const RandomizedClassifier& model,
                       const DatasetView& view, const Dataset& data) {
  std::map<SubgroupKey, double> sum;
  std::map<SubgroupKey, std::size_t> n;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const auto& pt = view.point(i);
    sum[{pt.g, pt.y}] += std::abs(expected_prediction(model, pt.x) - pt.y);
    n[{pt.g, pt.y}] += 1;
  }
  double gap = 0.0;
  for (int y : {0, 1})
    for (int ga : data.groups())
      for (int gb : data.groups()) {
        SubgroupKey a{ga, y}, b{gb, y};
        if (!n.count(a) || !n.count(b)) continue;
        gap = std::max(gap, std::abs(sum[a] / n[a] - sum[b] / n[b]));
      }
  return gap;
}

bool criterion7(CheckList& c) {
  Rng rng(909);
  std::uniform_real_distribution<double> unif(0.0, 5.0);

  bool threshold_ok = true, half_ok = true;
  for (int rep = 0; rep < 300; ++rep) {
    std::vector<double> members(1 + rng() % 50), nonmembers(1 + rng() % 50);
    for (auto& v : members) v = unif(rng);
    for (auto& v : nonmembers) v = unif(rng);
    auto [tau, acc] = best_threshold(members, nonmembers);
    if (std::abs(acc - brute_force_best_accuracy(members, nonmembers)) > 1e-12)
      threshold_ok = false;
    if (acc < 0.5) half_ok = false;
  }
  c.expect(threshold_ok, "best_threshold equals exhaustive search (300 trials)");
  c.expect(half_ok, "balanced accuracy >= 0.5 always");

  bool gap_ok = true, mixture_ok = true;
  std::normal_distribution<double> norm(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<DataPoint> pts;
    for (int g = 0; g < 3; ++g)  // every cell populated
      for (int y : {0, 1}) pts.push_back({{norm(rng), norm(rng)}, g, y});
    std::size_t n = 10 + rng() % 40;
    for (std::size_t i = 0; i < n; ++i)
      pts.push_back({{norm(rng), norm(rng)},
                     static_cast<int>(rng() % 3),
                     static_cast<int>(rng() & 1)});
    std::size_t total = pts.size();
    Dataset d(std::move(pts), 2);
    DatasetView view = DatasetView::full(d);
    TrainOptions opts;
    opts.max_depth = 2;
    auto a = train_tree(view, SampleWeights::uniform(total), opts, rep);
    auto b = train_tree(view, SampleWeights::uniform(total), opts, rep + 99);
    RandomizedClassifier mix;
    mix.members = {{a, 0.25}, {b, 0.75}};
    mix.validate();
    double w = 0.0;
    for (const auto& [m, wt] : mix.members) w += wt;
    if (std::abs(w - 1.0) > 1e-9) mixture_ok = false;
    if (std::abs(fairness_gap(mix, view, false) -
                 brute_force_gap(mix, view, d)) > 1e-9)
      gap_ok = false;
  }
  c.expect(gap_ok, "fairness_gap equals brute-force enumeration (20 datasets)");
  c.expect(mixture_ok, "mixture weights stay normalized");

  {
    NetworkSpec spec{2, {4, 3}};
    std::vector<DataPoint> pts;
    for (int i = 0; i < 10; ++i)
      pts.push_back({{norm(rng), norm(rng)}, 0, static_cast<int>(rng() & 1)});
    Dataset d(std::move(pts), 2);
    DatasetView view = DatasetView::full(d);
    SampleWeights w = SampleWeights::uniform(10);
    std::vector<double> params(network_param_count(spec));
    for (auto& p : params) p = 0.3 * norm(rng);
    auto grad = network_gradient_at(spec, params, view, w);
    bool grad_ok = true;
    const double h = 1e-5;
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto plus = params, minus = params;
      plus[k] += h;
      minus[k] -= h;
      double fd = (network_loss_at(spec, plus, view, w) -
                   network_loss_at(spec, minus, view, w)) /
                  (2.0 * h);
      double denom = std::max({std::abs(fd), std::abs(grad[k]), 1e-6});
      if (std::abs(fd - grad[k]) / denom > 1e-4) grad_ok = false;
    }
    c.expect(grad_ok, "analytic gradient matches finite differences at 1e-4");
  }

  {
    Dataset d({{{0.0}, 0, 1}, {{1.0}, 1, 0}}, 1);
    AttackEval a, b;
    a.point_risk = {0.8, 0.55};
    b.point_risk = {0.6, 0.7};
    CostEval ab = privacy_cost(a, b, d), ba = privacy_cost(b, a, d);
    bool anti = true;
    for (std::size_t j = 0; j < 2; ++j)
      if (std::abs(*ab.point_cost[j] + *ba.point_cost[j]) > 1e-15) anti = false;
    c.expect(anti, "privacy cost is antisymmetric");
  }

  {
    ExperimentConfig cfg;
    cfg.synthetic.n = 400;
    cfg.synthetic.p_neg_given_g[0] = 0.5;  // keep every cell well populated
    cfg.base = BaseLearner::tree;
    cfg.train.max_depth = 4;
    cfg.eg.base = BaseLearner::tree;
    cfg.eg.train = cfg.train;
    cfg.eg.delta = 0.05;
    cfg.eg.iterations = 15;
    cfg.pool_size = 8;
    cfg.seed = 321;
    cfg.jobs = 1;
    std::string serial = report_to_json(run_experiment_in_memory(cfg).report);
    cfg.jobs = 8;
    std::string parallel = report_to_json(run_experiment_in_memory(cfg).report);
    c.expect(serial == parallel, "full run identical under --jobs 1 and --jobs 8");
  }
  return c.ok;
}

// --------------------------------------------------------------------------
// 8. CSV pipeline with a rare subgroup: per-subgroup attack dominates on
// it and the fair pool does not reduce its risk.

bool criterion8(CheckList& c) {
  fs::create_directories(kCacheDir);
  std::string csv_path = std::string(kCacheDir) + "/rare_subgroup.csv";
  auto synth = default_synthetic_config();
  synth.n = 2500;
  synth.p_group0 = 0.2;
  synth.p_neg_given_g[0] = 0.1;  // G0- carries ~2% of the mass
  Dataset data = generate_synthetic(synth, 424242);
  save_csv(data, csv_path);

  double frac_g0n = 0.0;
  for (const auto& pt : data.points())
    if (pt.g == 0 && pt.y == 0) frac_g0n += 1.0;
  frac_g0n /= static_cast<double>(data.size());
  {
    std::ostringstream line;
    line << "rare subgroup mass " << frac_g0n << " < 0.05";
    c.expect(frac_g0n < 0.05, line.str());
  }

  ExperimentConfig cfg;
  cfg.source = DatasetSource::csv;
  cfg.csv_path = csv_path;
  cfg.csv_schema = CsvSchema{{"f0", "f1"}, "group", "label", "1"};
  cfg.base = BaseLearner::tree;
  cfg.train.max_depth = 8;
  cfg.eg.base = BaseLearner::tree;
  cfg.eg.train = cfg.train;
  cfg.eg.delta = 0.01;
  cfg.seed = 606;
  PrivacyReport r = run_experiment_in_memory(cfg).report;

  double single_f = r.risks_fair_single.cell_risk.at(kG0n);
  double multi_f = r.risks_fair.cell_risk.at(kG0n);
  double single_u = r.risks_unconstrained_single.cell_risk.at(kG0n);
  double multi_u = r.risks_unconstrained.cell_risk.at(kG0n);
  {
    std::ostringstream line;
    line << "per-subgroup >= single on the rare subgroup (fair " << multi_f
         << " vs " << single_f << ", unconstrained " << multi_u << " vs "
         << single_u << ")";
    c.expect(multi_f >= single_f && multi_u >= single_u, line.str());
  }
  {
    std::ostringstream line;
    line << "fair risk " << multi_f << " >= unconstrained " << multi_u
         << " - 0.01 on the gaining subgroup";
    c.expect(multi_f >= multi_u - 0.01, line.str());
  }
  return c.ok;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    bool (*run)(CheckList&);
  };
  const Criterion criteria[] = {
      {1, "accuracy and fairness of single models", criterion1},
      {2, "attack-table reproduction", criterion2},
      {3, "privacy-cost signature", criterion3},
      {4, "memorization doubling on the rare subgroup", criterion4},
      {5, "risk grows as the fairness gap shrinks", criterion5},
      {6, "vulnerable points concentrate in the rare subgroup", criterion6},
      {7, "property suite and determinism", criterion7},
      {8, "csv pipeline with a rare subgroup", criterion8},
  };

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& cr : criteria) {
    if (!selected.empty() && !selected.count(cr.id)) continue;
    CheckList c;
    bool ok = false;
    try {
      ok = cr.run(c);
    } catch (const std::exception& e) {
      c.detail << "    exception: " << e.what() << '\n';
    }
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << cr.id << ": "
              << cr.name << '\n'
              << c.detail.str();
    std::cout.flush();
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
