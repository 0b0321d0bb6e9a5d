#include "fairleak/harness.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fairleak/random.hpp"
#include "json.hpp"

namespace fairleak {

namespace fs = std::filesystem;
using nlohmann::json;

void ExperimentConfig::validate() const {
  if (pool_size < 2) throw std::invalid_argument("pool_size must be >= 2");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train_fraction must be in (0,1)");
  if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
  eg.validate();
  if (source == DatasetSource::synthetic) synthetic.validate();
}

std::map<std::string, std::string> parse_key_value_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 'key = value'");
    auto trim = [](std::string s) {
      auto b2 = s.find_first_not_of(" \t\r");
      auto e2 = s.find_last_not_of(" \t\r");
      return b2 == std::string::npos ? std::string()
                                     : s.substr(b2, e2 - b2 + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": empty key or value");
    if (!kv.emplace(key, value).second)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": duplicate key '" + key + "'");
  }
  return kv;
}

namespace {

std::vector<std::string> parse_string_list(const std::string& raw) {
  std::string s = raw;
  for (char& c : s)
    if (c == '[' || c == ']' || c == ',') c = ' ';
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

std::vector<int> parse_int_list(const std::string& raw) {
  std::vector<int> out;
  for (const auto& tok : parse_string_list(raw)) out.push_back(std::stoi(tok));
  return out;
}

bool parse_bool(const std::string& raw, const std::string& key) {
  if (raw == "true") return true;
  if (raw == "false") return false;
  throw std::invalid_argument("config key '" + key + "': expected true|false");
}

bool is_synthetic_key(const std::string& key) {
  return key == "n" || key == "p_group0" || key == "p_neg_g0" ||
         key == "p_neg_g1" || key.rfind("mean_g", 0) == 0 ||
         key.rfind("cov_g", 0) == 0;
}

}  // namespace

ExperimentConfig parse_experiment_config(
    const std::map<std::string, std::string>& kv) {
  ExperimentConfig cfg;
  std::map<std::string, std::string> synthetic_kv;
  int eg_epochs = cfg.eg.train.epochs;
  for (const auto& [key, value] : kv) {
    if (is_synthetic_key(key)) {
      synthetic_kv[key] = value;
    } else if (key == "dataset") {
      if (value == "synthetic")
        cfg.source = DatasetSource::synthetic;
      else if (value == "csv")
        cfg.source = DatasetSource::csv;
      else
        throw std::invalid_argument("dataset must be synthetic|csv");
    } else if (key == "csv_path") {
      cfg.csv_path = value;
    } else if (key == "features") {
      cfg.csv_schema.feature_columns = parse_string_list(value);
    } else if (key == "group") {
      cfg.csv_schema.group_column = value;
    } else if (key == "label") {
      cfg.csv_schema.label_column = value;
    } else if (key == "positive") {
      cfg.csv_schema.positive_value = value;
    } else if (key == "pool_size") {
      cfg.pool_size = std::stoi(value);
    } else if (key == "train_fraction") {
      cfg.train_fraction = std::stod(value);
    } else if (key == "seed") {
      cfg.seed = std::stoull(value);
    } else if (key == "top_k") {
      cfg.top_k = std::stoul(value);
    } else if (key == "base") {
      if (value == "network")
        cfg.base = BaseLearner::network;
      else if (value == "tree")
        cfg.base = BaseLearner::tree;
      else
        throw std::invalid_argument("base must be network|tree");
    } else if (key == "delta") {
      cfg.eg.delta = std::stod(value);
    } else if (key == "eg_iters") {
      cfg.eg.iterations = std::stoi(value);
    } else if (key == "eg_epochs") {
      eg_epochs = std::stoi(value);
    } else if (key == "eg_bound") {
      cfg.eg.bound = std::stod(value);
    } else if (key == "eg_eta") {
      cfg.eg.eta = std::stod(value);
    } else if (key == "hard_decisions") {
      cfg.eg.hard_decisions = parse_bool(value, key);
    } else if (key == "hidden") {
      cfg.train.hidden_widths = parse_int_list(value);
    } else if (key == "lr") {
      cfg.train.learning_rate = std::stod(value);
    } else if (key == "epochs") {
      cfg.train.epochs = std::stoi(value);
    } else if (key == "batch") {
      cfg.train.batch_size = std::stoi(value);
    } else if (key == "max_depth") {
      cfg.train.max_depth = std::stoi(value);
    } else if (key == "min_samples_leaf") {
      cfg.train.min_samples_leaf = std::stoi(value);
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  if (!synthetic_kv.empty())
    cfg.synthetic = parse_synthetic_config(synthetic_kv);
  cfg.eg.base = cfg.base;
  // The reduction's iterates share the base-learner settings but keep
  // their own, shorter epoch budget (overridable via eg_epochs).
  cfg.eg.train = cfg.train;
  cfg.eg.train.epochs = eg_epochs;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(parse_key_value_file(path));
}

void SweepSpec::validate() const {
  if (values.empty()) throw std::invalid_argument("sweep values are empty");
  if (repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  if (parameter.empty()) throw std::invalid_argument("sweep parameter missing");
}

SweepSpec load_sweep_spec(const std::string& path) {
  auto kv = parse_key_value_file(path);
  SweepSpec spec;
  for (const auto& [key, value] : kv) {
    if (key == "parameter")
      spec.parameter = value;
    else if (key == "values")
      spec.values = parse_string_list(value);
    else if (key == "repetitions")
      spec.repetitions = std::stoi(value);
    else
      throw std::invalid_argument("unknown sweep key '" + key + "'");
  }
  spec.validate();
  return spec;
}

ExperimentConfig apply_sweep_value(const ExperimentConfig& base,
                                   const std::string& parameter,
                                   const std::string& value) {
  ExperimentConfig cfg = base;
  if (parameter == "delta") {
    cfg.eg.delta = std::stod(value);
  } else if (parameter == "p_group0") {
    cfg.synthetic.p_group0 = std::stod(value);
  } else if (parameter == "p_neg_g0") {
    cfg.synthetic.p_neg_given_g[0] = std::stod(value);
  } else if (parameter == "p_neg_g1") {
    cfg.synthetic.p_neg_given_g[1] = std::stod(value);
  } else if (parameter == "max_depth") {
    cfg.train.max_depth = std::stoi(value);
    cfg.eg.train.max_depth = cfg.train.max_depth;
  } else if (parameter.rfind("mean_g", 0) == 0) {
    // value like "0:-1" meaning the mean vector entries
    std::map<std::string, std::string> kv{{parameter, value}};
    SyntheticConfig with = cfg.synthetic;
    // reuse the synthetic parser on a one-key map over the current config
    std::size_t gpos = parameter.find("_g") + 2;
    std::size_t ypos = parameter.find("_y");
    int g = std::stoi(parameter.substr(gpos, ypos - gpos));
    int y = std::stoi(parameter.substr(ypos + 2));
    std::string s = value;
    for (char& c : s)
      if (c == '[' || c == ']' || c == ',' || c == ':') c = ' ';
    std::vector<double> mean;
    std::stringstream ss(s);
    double v;
    while (ss >> v) mean.push_back(v);
    with.gaussians[g][y].mean = mean;
    with.validate();
    cfg.synthetic = with;
  } else {
    throw std::invalid_argument("unsupported sweep parameter '" + parameter +
                                "'");
  }
  cfg.validate();
  return cfg;
}

void parallel_for(int jobs, std::size_t count,
                  const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  int nthreads = std::min<std::size_t>(jobs, count);
  for (int t = 0; t < nthreads; ++t) threads.emplace_back(worker);
  for (auto& th : threads) th.join();
  if (error) std::rethrow_exception(error);
}

namespace {

std::uint64_t mask_hash(const MembershipMask& mask) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (bool b : mask.in_train) {
    h ^= b ? 1u : 0u;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct PoolOutputs {
  std::vector<RandomizedClassifier> models;
  PoolSummary summary;
};

// Accuracy follows each pool's prediction semantics. An unconstrained
// model is a probabilistic classifier whose output is the positive-class
// probability; its expected accuracy is 1 - |p - y|. A reduction mixture
// deploys by sampling a member, and members are cost-sensitive decision
// rules, so its expected accuracy averages thresholded member decisions
// (decision_accuracy = true). Fairness gaps follow the configured error
// convention in both cases.
PoolSummary summarize_pool(const std::vector<RandomizedClassifier>& pool,
                           const std::vector<MembershipMask>& masks,
                           const Dataset& data, bool hard_decisions,
                           bool decision_accuracy) {
  PoolSummary s;
  std::map<SubgroupKey, double> train_cell_sum, test_cell_sum;
  std::map<SubgroupKey, std::size_t> train_cell_n, test_cell_n;
  for (std::size_t m = 0; m < pool.size(); ++m) {
    DatasetView train = DatasetView::from_mask(data, masks[m]);
    MembershipMask inverse = masks[m];
    inverse.in_train.flip();
    DatasetView test = DatasetView::from_mask(data, inverse);
    double tr_acc = 0.0, te_acc = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const DataPoint& pt = train.point(i);
      double acc = 1.0 - point_error(pool[m], pt, decision_accuracy);
      tr_acc += acc;
      train_cell_sum[{pt.g, pt.y}] += acc;
      train_cell_n[{pt.g, pt.y}] += 1;
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      const DataPoint& pt = test.point(i);
      double acc = 1.0 - point_error(pool[m], pt, decision_accuracy);
      te_acc += acc;
      test_cell_sum[{pt.g, pt.y}] += acc;
      test_cell_n[{pt.g, pt.y}] += 1;
    }
    s.train_accuracy += tr_acc / train.size();
    s.test_accuracy += te_acc / test.size();
    s.train_gap += fairness_gap(pool[m], train, hard_decisions);
    s.test_gap += fairness_gap(pool[m], test, hard_decisions);
    if (pool[m].gap_unmet) ++s.gap_unmet_count;
  }
  double inv = 1.0 / static_cast<double>(pool.size());
  s.train_accuracy *= inv;
  s.test_accuracy *= inv;
  s.train_gap *= inv;
  s.test_gap *= inv;
  for (const auto& [key, sum] : train_cell_sum)
    s.train_cell_accuracy[key] = sum / train_cell_n[key];
  for (const auto& [key, sum] : test_cell_sum)
    s.test_cell_accuracy[key] = sum / test_cell_n[key];
  return s;
}

std::vector<SubgroupKey> sorted_cells(const PrivacyReport& report) {
  std::vector<SubgroupKey> cells;
  for (const auto& [key, v] : report.risks_fair.cell_risk) cells.push_back(key);
  return cells;
}

}  // namespace

ExperimentResult run_experiment_in_memory(const ExperimentConfig& cfg) {
  cfg.validate();

  Dataset data = cfg.source == DatasetSource::synthetic
                     ? generate_synthetic(cfg.synthetic,
                                          derive_seed(cfg.seed, "data"))
                     : load_csv(cfg.csv_path, cfg.csv_schema);

  std::size_t train_size = static_cast<std::size_t>(
      std::llround(cfg.train_fraction * static_cast<double>(data.size())));
  train_size = std::clamp<std::size_t>(train_size, 1, data.size() - 1);
  std::vector<MembershipMask> masks =
      draw_masks(data, cfg.pool_size, train_size, derive_seed(cfg.seed, "masks"));

  std::vector<RandomizedClassifier> unc_pool(cfg.pool_size);
  std::vector<RandomizedClassifier> fair_pool(cfg.pool_size);
  parallel_for(cfg.jobs, cfg.pool_size, [&](std::size_t m) {
    DatasetView view = DatasetView::from_mask(data, masks[m]);
    SampleWeights weights = SampleWeights::uniform(view.size());
    std::uint64_t unc_seed = derive_seed(cfg.seed, "unc-model", m);
    ModelPtr model = cfg.base == BaseLearner::network
                         ? train_network(view, weights, cfg.train, unc_seed)
                         : train_tree(view, weights, cfg.train, unc_seed);
    unc_pool[m] = RandomizedClassifier::singleton(std::move(model));
    fair_pool[m] = eg_fit(view, cfg.eg, derive_seed(cfg.seed, "fair-model", m));
  });

  LossProfile profile_unc = build_profile(unc_pool, masks, data);
  LossProfile profile_fair = build_profile(fair_pool, masks, data);

  auto partition = subgroup_partition(data);
  ThresholdRule rule_unc_single = fit_rule(profile_unc, RuleVariant::single);
  ThresholdRule rule_unc_multi =
      fit_rule(profile_unc, RuleVariant::per_subgroup, partition);
  ThresholdRule rule_fair_single = fit_rule(profile_fair, RuleVariant::single);
  ThresholdRule rule_fair_multi =
      fit_rule(profile_fair, RuleVariant::per_subgroup, partition);

  PrivacyReport report;
  report.risks_unconstrained = evaluate_attack(profile_unc, rule_unc_multi);
  report.risks_fair = evaluate_attack(profile_fair, rule_fair_multi);
  report.risks_unconstrained_single =
      evaluate_attack(profile_unc, rule_unc_single);
  report.risks_fair_single = evaluate_attack(profile_fair, rule_fair_single);
  report.cost = privacy_cost(report.risks_fair, report.risks_unconstrained, data);
  report.memorization_unconstrained = memorization_all(profile_unc);
  report.memorization_fair = memorization_all(profile_fair);
  for (std::size_t j = 0; j < data.size(); ++j) {
    report.point_group.push_back(data.point(j).g);
    report.point_label.push_back(data.point(j).y);
    auto tf = attack_tpr(profile_fair, rule_fair_multi, j);
    auto tu = attack_tpr(profile_unc, rule_unc_multi, j);
    report.tpr_fair.push_back(tf);
    report.tpr_unconstrained.push_back(tu);
    report.tpr_gain.push_back(tf && tu ? std::optional<double>(*tf - *tu)
                                       : std::nullopt);
  }
  report.vulnerable_points = top_vulnerable(report, cfg.top_k);
  report.summary_unconstrained =
      summarize_pool(unc_pool, masks, data, cfg.eg.hard_decisions, false);
  report.summary_fair =
      summarize_pool(fair_pool, masks, data, cfg.eg.hard_decisions, true);
  report.cells = sorted_cells(report);

  json meta;
  meta["seed"] = cfg.seed;
  meta["pool_size"] = cfg.pool_size;
  meta["train_fraction"] = cfg.train_fraction;
  meta["train_size"] = train_size;
  meta["base"] = cfg.base == BaseLearner::network ? "network" : "tree";
  meta["delta"] = cfg.eg.delta;
  meta["hard_decisions"] = cfg.eg.hard_decisions;
  json hashes = json::array();
  for (const auto& mask : masks) hashes.push_back(mask_hash(mask));
  meta["mask_hashes"] = hashes;
  report.meta_json = meta.dump();

  return ExperimentResult{std::move(report), std::move(data)};
}

PrivacyReport run_experiment(const ExperimentConfig& cfg,
                             const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  std::string stage = "setup";
  try {
    stage = "pools-and-audit";
    ExperimentResult result = run_experiment_in_memory(cfg);
    const PrivacyReport& report = result.report;
    const Dataset& data = result.dataset;

    stage = "report-json";
    {
      std::string path = out_dir + "/report.json";
      std::ofstream out(path);
      out << report_to_json(report) << '\n';
      written.push_back(path);
    }

    stage = "table-accuracy";
    {
      std::string path = out_dir + "/table_accuracy.csv";
      std::ofstream out(path);
      out.precision(10);
      out << "model,train_acc,test_acc,train_gap,test_gap\n";
      const auto& u = report.summary_unconstrained;
      const auto& f = report.summary_fair;
      out << "unconstrained," << u.train_accuracy << ',' << u.test_accuracy
          << ',' << u.train_gap << ',' << u.test_gap << '\n';
      out << "fair," << f.train_accuracy << ',' << f.test_accuracy << ','
          << f.train_gap << ',' << f.test_gap << '\n';
      written.push_back(path);
    }

    stage = "table-attack";
    {
      std::string path = out_dir + "/table_attack.csv";
      compare_attacks(report, path);
      written.push_back(path);
    }

    stage = "points-csv";
    {
      // rebuild profiles is wasteful; the per-point payloads are already
      // in the report, emit from there
      std::string fair_path = out_dir + "/points_fair.csv";
      std::string unc_path = out_dir + "/points_unc.csv";
      auto emit = [&](const std::string& path, const AttackEval& risks,
                      const std::vector<std::optional<double>>& memo,
                      const std::vector<std::optional<double>>& tpr) {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        out.precision(17);
        out << "index,g,y,risk,memorization,tpr\n";
        for (std::size_t j = 0; j < risks.point_risk.size(); ++j) {
          out << j << ',' << report.point_group[j] << ','
              << report.point_label[j] << ',';
          if (risks.point_risk[j]) out << *risks.point_risk[j];
          out << ',';
          if (memo[j]) out << *memo[j];
          out << ',';
          if (tpr[j]) out << *tpr[j];
          out << '\n';
        }
      };
      emit(fair_path, report.risks_fair, report.memorization_fair,
           report.tpr_fair);
      emit(unc_path, report.risks_unconstrained,
           report.memorization_unconstrained, report.tpr_unconstrained);
      written.push_back(fair_path);
      written.push_back(unc_path);
    }
    (void)data;
    return result.report;
  } catch (const std::exception& e) {
    for (const auto& path : written) fs::remove(path);
    throw std::runtime_error("experiment failed at stage '" + stage +
                             "': " + e.what());
  }
}

void run_sweep(const ExperimentConfig& base, const SweepSpec& sweep,
               const std::string& out_dir) {
  sweep.validate();
  fs::create_directories(out_dir);
  std::ofstream summary(out_dir + "/sweep_summary.csv");
  if (!summary) throw std::runtime_error("cannot write sweep_summary.csv");
  summary.precision(10);
  summary << "parameter,value,repetition,status,cell,risk_unc,risk_fair,cost,"
             "mem_unc,mem_fair,achieved_gap\n";

  for (std::size_t vi = 0; vi < sweep.values.size(); ++vi) {
    for (int rep = 0; rep < sweep.repetitions; ++rep) {
      std::string run_dir = out_dir + "/value" + std::to_string(vi) + "_rep" +
                            std::to_string(rep);
      try {
        ExperimentConfig cfg =
            apply_sweep_value(base, sweep.parameter, sweep.values[vi]);
        cfg.seed = derive_seed(base.seed, "sweep",
                               vi * 1000 + static_cast<std::size_t>(rep));
        PrivacyReport report = run_experiment(cfg, run_dir);
        for (const auto& [key, risk_fair] : report.risks_fair.cell_risk) {
          double risk_unc = report.risks_unconstrained.cell_risk.count(key)
                                ? report.risks_unconstrained.cell_risk.at(key)
                                : std::nan("");
          double cost = report.cost.cell_cost.count(key)
                            ? report.cost.cell_cost.at(key)
                            : std::nan("");
          // cell mean memorization
          double mu = 0.0, mf = 0.0;
          std::size_t nu = 0, nf = 0;
          for (std::size_t j = 0; j < report.point_group.size(); ++j) {
            if (report.point_group[j] != key.g ||
                report.point_label[j] != key.y)
              continue;
            if (report.memorization_unconstrained[j]) {
              mu += *report.memorization_unconstrained[j];
              ++nu;
            }
            if (report.memorization_fair[j]) {
              mf += *report.memorization_fair[j];
              ++nf;
            }
          }
          summary << sweep.parameter << ',' << sweep.values[vi] << ',' << rep
                  << ",ok," << to_string(key) << ',' << risk_unc << ','
                  << risk_fair << ',' << cost << ','
                  << (nu ? mu / nu : std::nan("")) << ','
                  << (nf ? mf / nf : std::nan("")) << ','
                  << report.summary_fair.train_gap << '\n';
        }
      } catch (const std::exception& e) {
        summary << sweep.parameter << ',' << sweep.values[vi] << ',' << rep
                << ",failed,,,,,,,\n";
      }
    }
  }
}

void compare_attacks(const PrivacyReport& report, const std::string& out_path) {
  if (report.risks_unconstrained_single.cell_risk.empty() ||
      report.risks_fair_single.cell_risk.empty())
    throw std::runtime_error("report is missing the single-threshold variant");
  if (report.risks_unconstrained.cell_risk.empty() ||
      report.risks_fair.cell_risk.empty())
    throw std::runtime_error("report is missing the per-subgroup variant");

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out.precision(10);
  std::vector<SubgroupKey> cells;
  for (const auto& [key, v] : report.risks_fair.cell_risk) cells.push_back(key);
  out << "model,variant";
  for (const auto& key : cells) out << ',' << to_string(key);
  out << '\n';
  auto row = [&](const std::string& model, const std::string& variant,
                 const std::map<SubgroupKey, double>& risks) {
    out << model << ',' << variant;
    for (const auto& key : cells) {
      out << ',';
      if (risks.count(key)) out << risks.at(key);
    }
    out << '\n';
  };
  row("unconstrained", "single", report.risks_unconstrained_single.cell_risk);
  row("unconstrained", "multiple", report.risks_unconstrained.cell_risk);
  row("fair", "single", report.risks_fair_single.cell_risk);
  row("fair", "multiple", report.risks_fair.cell_risk);
}

}  // namespace fairleak
