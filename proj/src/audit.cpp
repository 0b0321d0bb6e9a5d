#include "fairleak/audit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fairleak/random.hpp"
#include "json.hpp"

namespace fairleak {

LossProfile build_profile(const std::vector<RandomizedClassifier>& pool,
                          const std::vector<MembershipMask>& masks,
                          const Dataset& data) {
  if (pool.size() != masks.size())
    throw std::invalid_argument("pool / mask count mismatch");
  LossProfile profile;
  profile.data = &data;
  profile.masks = masks;
  for (std::size_t m = 0; m < pool.size(); ++m) {
    profile.model_ids.push_back("model-" + std::to_string(m));
    std::vector<double> row(data.size());
    for (std::size_t j = 0; j < data.size(); ++j)
      row[j] = expected_loss(pool[m], data.point(j));
    profile.losses.push_back(std::move(row));
  }
  return profile;
}

double ThresholdRule::tau_for(std::size_t model, const SubgroupKey& key) const {
  if (model_tau.empty()) {  // hand-built rule with shared thresholds
    if (variant == RuleVariant::single) return global_tau;
    auto it = cell_tau.find(key);
    return it != cell_tau.end() ? it->second : global_tau;
  }
  if (variant == RuleVariant::single) return model_tau[model];
  const auto& cells = model_cell_tau[model];
  auto it = cells.find(key);
  return it != cells.end() ? it->second : model_tau[model];
}

std::pair<double, double> best_threshold(
    const std::vector<double>& member_losses,
    const std::vector<double>& nonmember_losses) {
  if (member_losses.empty() || nonmember_losses.empty())
    throw std::invalid_argument("best_threshold needs both classes");

  std::vector<double> merged;
  merged.reserve(member_losses.size() + nonmember_losses.size());
  merged.insert(merged.end(), member_losses.begin(), member_losses.end());
  merged.insert(merged.end(), nonmember_losses.begin(), nonmember_losses.end());
  std::sort(merged.begin(), merged.end());

  std::vector<double> candidates;
  candidates.push_back(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i + 1 < merged.size(); ++i)
    if (merged[i] < merged[i + 1])
      candidates.push_back(0.5 * (merged[i] + merged[i + 1]));
  candidates.push_back(std::numeric_limits<double>::infinity());

  auto balanced = [&](double tau) {
    double tpr = 0.0, tnr = 0.0;
    for (double l : member_losses) tpr += l < tau ? 1.0 : 0.0;
    for (double l : nonmember_losses) tnr += l < tau ? 0.0 : 1.0;
    return 0.5 * (tpr / member_losses.size() + tnr / nonmember_losses.size());
  };

  double best_tau = candidates.front();
  double best_acc = balanced(best_tau);
  for (double tau : candidates) {
    double acc = balanced(tau);
    if (acc > best_acc + 1e-12 ||
        (acc > best_acc - 1e-12 && tau < best_tau)) {
      best_acc = acc;
      best_tau = tau;
    }
  }
  return {best_tau, best_acc};
}

ThresholdRule fit_rule(
    const LossProfile& profile, RuleVariant variant,
    const std::map<SubgroupKey, std::vector<std::size_t>>& partition) {
  ThresholdRule rule;
  rule.variant = variant;
  const std::size_t pool = profile.pool_size();
  rule.model_tau.resize(pool);
  if (variant == RuleVariant::per_subgroup) rule.model_cell_tau.resize(pool);
  auto cells = partition.empty() ? subgroup_partition(*profile.data) : partition;

  for (std::size_t m = 0; m < pool; ++m) {
    std::vector<double> member_all, nonmember_all;
    for (std::size_t j = 0; j < profile.data->size(); ++j)
      (profile.masks[m].in_train[j] ? member_all : nonmember_all)
          .push_back(profile.losses[m][j]);
    rule.model_tau[m] = best_threshold(member_all, nonmember_all).first;
    if (variant == RuleVariant::single) continue;

    for (const auto& [key, indices] : cells) {
      std::vector<double> member, nonmember;
      for (std::size_t j : indices)
        (profile.masks[m].in_train[j] ? member : nonmember)
            .push_back(profile.losses[m][j]);
      if (member.empty() || nonmember.empty()) {
        rule.fallback_cells.insert(key);
        rule.model_cell_tau[m][key] = rule.model_tau[m];
      } else {
        rule.model_cell_tau[m][key] = best_threshold(member, nonmember).first;
      }
    }
  }
  return rule;
}

AttackEval evaluate_attack(const LossProfile& profile,
                           const ThresholdRule& rule) {
  const Dataset& data = *profile.data;
  AttackEval eval;
  eval.point_risk.resize(data.size());
  std::map<SubgroupKey, double> cell_sum;
  std::map<SubgroupKey, std::size_t> cell_count;

  for (std::size_t j = 0; j < data.size(); ++j) {
    const DataPoint& pt = data.point(j);
    SubgroupKey key{pt.g, pt.y};
    std::size_t in_total = 0, out_total = 0, in_hit = 0, out_hit = 0;
    for (std::size_t m = 0; m < profile.pool_size(); ++m) {
      double tau = rule.tau_for(m, key);
      double loss = profile.losses[m][j];
      if (profile.masks[m].in_train[j]) {
        ++in_total;
        if (loss < tau) ++in_hit;
      } else {
        ++out_total;
        if (!(loss < tau)) ++out_hit;
      }
    }
    if (in_total == 0 || out_total == 0) {
      ++eval.undefined_points;
      continue;
    }
    double risk = 0.5 * (static_cast<double>(in_hit) / in_total +
                         static_cast<double>(out_hit) / out_total);
    eval.point_risk[j] = risk;
    cell_sum[key] += risk;
    cell_count[key] += 1;
  }
  for (const auto& [key, sum] : cell_sum)
    eval.cell_risk[key] = sum / static_cast<double>(cell_count[key]);
  return eval;
}

CostEval privacy_cost(const AttackEval& fair, const AttackEval& unconstrained,
                      const Dataset& data) {
  if (fair.point_risk.size() != unconstrained.point_risk.size() ||
      fair.point_risk.size() != data.size())
    throw std::invalid_argument("privacy_cost: mismatched reports");
  CostEval cost;
  cost.point_cost.resize(data.size());
  std::map<SubgroupKey, double> cell_sum;
  std::map<SubgroupKey, std::size_t> cell_count;
  for (std::size_t j = 0; j < data.size(); ++j) {
    if (!fair.point_risk[j] || !unconstrained.point_risk[j]) continue;
    double d = *fair.point_risk[j] - *unconstrained.point_risk[j];
    cost.point_cost[j] = d;
    SubgroupKey key{data.point(j).g, data.point(j).y};
    cell_sum[key] += d;
    cell_count[key] += 1;
  }
  for (const auto& [key, sum] : cell_sum)
    cost.cell_cost[key] = sum / static_cast<double>(cell_count[key]);
  return cost;
}

std::optional<double> memorization(std::size_t point_index,
                                   const LossProfile& profile) {
  double in_sum = 0.0, out_sum = 0.0;
  std::size_t in_n = 0, out_n = 0;
  for (std::size_t m = 0; m < profile.pool_size(); ++m) {
    double loss = profile.losses[m][point_index];
    if (profile.masks[m].in_train[point_index]) {
      in_sum += loss;
      ++in_n;
    } else {
      out_sum += loss;
      ++out_n;
    }
  }
  if (in_n == 0 || out_n == 0) return std::nullopt;
  return out_sum / out_n - in_sum / in_n;
}

std::vector<std::optional<double>> memorization_all(
    const LossProfile& profile) {
  std::vector<std::optional<double>> out(profile.data->size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = memorization(j, profile);
  return out;
}

std::optional<double> attack_tpr(const LossProfile& profile,
                                 const ThresholdRule& rule,
                                 std::size_t point_index) {
  const DataPoint& pt = profile.data->point(point_index);
  std::size_t in_total = 0, in_hit = 0;
  for (std::size_t m = 0; m < profile.pool_size(); ++m)
    if (profile.masks[m].in_train[point_index]) {
      ++in_total;
      if (profile.losses[m][point_index] < rule.tau_for(m, {pt.g, pt.y}))
        ++in_hit;
    }
  if (in_total == 0) return std::nullopt;
  return static_cast<double>(in_hit) / in_total;
}

std::optional<double> attack_tpr_gain(const LossProfile& profile_fair,
                                      const LossProfile& profile_unc,
                                      const ThresholdRule& rule_fair,
                                      const ThresholdRule& rule_unc,
                                      std::size_t point_index) {
  auto fair = attack_tpr(profile_fair, rule_fair, point_index);
  auto unc = attack_tpr(profile_unc, rule_unc, point_index);
  if (!fair || !unc) return std::nullopt;
  return *fair - *unc;
}

std::vector<VulnerablePoint> top_vulnerable(const PrivacyReport& report,
                                            std::size_t k) {
  std::vector<VulnerablePoint> all;
  for (std::size_t j = 0; j < report.risks_fair.point_risk.size(); ++j) {
    if (!report.risks_fair.point_risk[j]) continue;
    VulnerablePoint vp;
    vp.index = j;
    vp.g = report.point_group[j];
    vp.y = report.point_label[j];
    vp.risk_fair = *report.risks_fair.point_risk[j];
    vp.risk_unconstrained =
        report.risks_unconstrained.point_risk[j].value_or(0.0);
    vp.mem_fair = report.memorization_fair[j].value_or(0.0);
    vp.mem_unconstrained = report.memorization_unconstrained[j].value_or(0.0);
    all.push_back(vp);
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const VulnerablePoint& a, const VulnerablePoint& b) {
                     if (a.risk_fair != b.risk_fair)
                       return a.risk_fair > b.risk_fair;
                     if (a.mem_fair != b.mem_fair) return a.mem_fair > b.mem_fair;
                     return a.index < b.index;
                   });
  if (all.size() > k) all.resize(k);
  return all;
}

// ---------------------------------------------------------------------------
// Report JSON

namespace {

using nlohmann::json;

json opt_array(const std::vector<std::optional<double>>& values) {
  json arr = json::array();
  for (const auto& v : values)
    arr.push_back(v ? json(*v) : json(nullptr));
  return arr;
}

std::vector<std::optional<double>> opt_array_from(const json& arr) {
  std::vector<std::optional<double>> out;
  for (const auto& v : arr)
    out.push_back(v.is_null() ? std::nullopt
                              : std::optional<double>(v.get<double>()));
  return out;
}

json cell_map(const std::map<SubgroupKey, double>& m) {
  json obj = json::object();
  for (const auto& [key, v] : m) obj[to_string(key)] = v;
  return obj;
}

std::map<SubgroupKey, double> cell_map_from(const json& obj) {
  std::map<SubgroupKey, double> out;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const std::string& name = it.key();  // "G0-" / "G1+"
    SubgroupKey key{std::stoi(name.substr(1, name.size() - 2)),
                    name.back() == '+' ? 1 : 0};
    out[key] = it.value().get<double>();
  }
  return out;
}

json eval_json(const AttackEval& eval) {
  return json{{"per_point", opt_array(eval.point_risk)},
              {"per_subgroup", cell_map(eval.cell_risk)},
              {"undefined_points", eval.undefined_points}};
}

AttackEval eval_from(const json& obj) {
  AttackEval eval;
  eval.point_risk = opt_array_from(obj.at("per_point"));
  eval.cell_risk = cell_map_from(obj.at("per_subgroup"));
  eval.undefined_points = obj.at("undefined_points").get<std::size_t>();
  return eval;
}

json summary_json(const PoolSummary& s) {
  return json{{"train_accuracy", s.train_accuracy},
              {"test_accuracy", s.test_accuracy},
              {"train_gap", s.train_gap},
              {"test_gap", s.test_gap},
              {"train_cell_accuracy", cell_map(s.train_cell_accuracy)},
              {"test_cell_accuracy", cell_map(s.test_cell_accuracy)},
              {"gap_unmet_count", s.gap_unmet_count}};
}

PoolSummary summary_from(const json& obj) {
  PoolSummary s;
  s.train_accuracy = obj.at("train_accuracy").get<double>();
  s.test_accuracy = obj.at("test_accuracy").get<double>();
  s.train_gap = obj.at("train_gap").get<double>();
  s.test_gap = obj.at("test_gap").get<double>();
  s.train_cell_accuracy = cell_map_from(obj.at("train_cell_accuracy"));
  s.test_cell_accuracy = cell_map_from(obj.at("test_cell_accuracy"));
  s.gap_unmet_count = obj.at("gap_unmet_count").get<std::size_t>();
  return s;
}

}  // namespace

std::string report_to_json(const PrivacyReport& report) {
  json j;
  j["meta"] = report.meta_json.empty() ? json::object()
                                       : json::parse(report.meta_json);
  j["risks_unconstrained"] = eval_json(report.risks_unconstrained);
  j["risks_fair"] = eval_json(report.risks_fair);
  j["cost"] = json{{"per_point", opt_array(report.cost.point_cost)},
                   {"per_subgroup", cell_map(report.cost.cell_cost)}};
  j["memorization"] =
      json{{"unconstrained", opt_array(report.memorization_unconstrained)},
           {"fair", opt_array(report.memorization_fair)}};
  json attack = json::object();
  attack["single"] =
      json{{"unconstrained", cell_map(report.risks_unconstrained_single.cell_risk)},
           {"fair", cell_map(report.risks_fair_single.cell_risk)}};
  attack["per_subgroup"] =
      json{{"unconstrained", cell_map(report.risks_unconstrained.cell_risk)},
           {"fair", cell_map(report.risks_fair.cell_risk)}};
  j["attack_accuracy"] = attack;
  json vuln = json::array();
  for (const auto& vp : report.vulnerable_points)
    vuln.push_back(json{{"index", vp.index},
                        {"g", vp.g},
                        {"y", vp.y},
                        {"risk_fair", vp.risk_fair},
                        {"risk_unconstrained", vp.risk_unconstrained},
                        {"mem_fair", vp.mem_fair},
                        {"mem_unconstrained", vp.mem_unconstrained}});
  j["vulnerable_points"] = vuln;
  j["summary"] = json{{"unconstrained", summary_json(report.summary_unconstrained)},
                      {"fair", summary_json(report.summary_fair)}};
  j["points"] = json{{"group", report.point_group},
                     {"label", report.point_label},
                     {"tpr_fair", opt_array(report.tpr_fair)},
                     {"tpr_unconstrained", opt_array(report.tpr_unconstrained)},
                     {"tpr_gain", opt_array(report.tpr_gain)}};
  json single = json::object();
  single["unconstrained"] = eval_json(report.risks_unconstrained_single);
  single["fair"] = eval_json(report.risks_fair_single);
  j["risks_single"] = single;
  return j.dump(2);
}

PrivacyReport report_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  PrivacyReport report;
  report.meta_json = j.at("meta").dump();
  report.risks_unconstrained = eval_from(j.at("risks_unconstrained"));
  report.risks_fair = eval_from(j.at("risks_fair"));
  report.risks_unconstrained_single =
      eval_from(j.at("risks_single").at("unconstrained"));
  report.risks_fair_single = eval_from(j.at("risks_single").at("fair"));
  report.cost.point_cost = opt_array_from(j.at("cost").at("per_point"));
  report.cost.cell_cost = cell_map_from(j.at("cost").at("per_subgroup"));
  report.memorization_unconstrained =
      opt_array_from(j.at("memorization").at("unconstrained"));
  report.memorization_fair = opt_array_from(j.at("memorization").at("fair"));
  for (const auto& v : j.at("vulnerable_points")) {
    VulnerablePoint vp;
    vp.index = v.at("index").get<std::size_t>();
    vp.g = v.at("g").get<int>();
    vp.y = v.at("y").get<int>();
    vp.risk_fair = v.at("risk_fair").get<double>();
    vp.risk_unconstrained = v.at("risk_unconstrained").get<double>();
    vp.mem_fair = v.at("mem_fair").get<double>();
    vp.mem_unconstrained = v.at("mem_unconstrained").get<double>();
    report.vulnerable_points.push_back(vp);
  }
  report.summary_unconstrained =
      summary_from(j.at("summary").at("unconstrained"));
  report.summary_fair = summary_from(j.at("summary").at("fair"));
  report.point_group = j.at("points").at("group").get<std::vector<int>>();
  report.point_label = j.at("points").at("label").get<std::vector<int>>();
  report.tpr_fair = opt_array_from(j.at("points").at("tpr_fair"));
  report.tpr_unconstrained =
      opt_array_from(j.at("points").at("tpr_unconstrained"));
  report.tpr_gain = opt_array_from(j.at("points").at("tpr_gain"));
  for (const auto& [key, v] : report.risks_fair.cell_risk)
    report.cells.push_back(key);
  return report;
}

double simulate_attack_game(const DataPoint& z, BaseLearner learner,
                            const TrainOptions& opts, int n,
                            const SyntheticConfig& cfg, int trials,
                            const std::function<int(double loss)>& adversary,
                            std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  SyntheticConfig draw_cfg = cfg;
  draw_cfg.n = n;  // S' uses the first n-1 points, the fresh z' the nth
  int wins = 0;
  for (int t = 0; t < trials; ++t) {
    std::uint64_t trial_seed = derive_seed(seed, "game-trial", t);
    Dataset drawn = generate_synthetic(draw_cfg, trial_seed);
    Rng coin = make_rng(trial_seed, "game-coin");
    int b = static_cast<int>(coin() & 1);

    std::vector<DataPoint> train(drawn.points().begin(),
                                 drawn.points().end() - 1);
    train.push_back(b == 1 ? z : drawn.points().back());
    Dataset train_set(std::move(train), drawn.dim());
    DatasetView view = DatasetView::full(train_set);
    SampleWeights weights = SampleWeights::uniform(view.size());
    ModelPtr model = learner == BaseLearner::network
                         ? train_network(view, weights, opts, trial_seed)
                         : train_tree(view, weights, opts, trial_seed);
    double loss = cross_entropy(model->predict_prob(z.x), z.y);
    if (adversary(loss) == b) ++wins;
  }
  return static_cast<double>(wins) / trials;
}

}  // namespace fairleak
