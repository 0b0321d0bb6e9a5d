#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fairleak/fair_reduction.hpp"

namespace fairleak {

/// The adversary's entire view of a model pool: one loss per
/// (model, point), plus the membership mask each model was trained on.
struct LossProfile {
  std::vector<std::string> model_ids;
  std::vector<std::vector<double>> losses;  // [model][point]
  std::vector<MembershipMask> masks;
  const Dataset* data = nullptr;

  std::size_t pool_size() const { return losses.size(); }
};

LossProfile build_profile(const std::vector<RandomizedClassifier>& pool,
                          const std::vector<MembershipMask>& masks,
                          const Dataset& data);

enum class RuleVariant { single, per_subgroup };

/// Loss-threshold membership rule: predict "member" iff loss < tau.
/// Thresholds are fitted per model — each pool member is one instance of
/// the attack game, with its own loss scale — either one global tau per
/// model or one per (model, subgroup). Hand-built rules may instead set
/// the shared thresholds and leave the per-model vectors empty.
struct ThresholdRule {
  RuleVariant variant = RuleVariant::single;
  // fitted per model; index matches the profile's model index
  std::vector<double> model_tau;
  std::vector<std::map<SubgroupKey, double>> model_cell_tau;
  // shared thresholds, used when the per-model vectors are empty
  double global_tau = 0.0;
  std::map<SubgroupKey, double> cell_tau;
  // cells that, in at least one model, had no member or no non-member
  // observations and fell back to that model's global threshold
  std::set<SubgroupKey> fallback_cells;

  double tau_for(std::size_t model, const SubgroupKey& key) const;
};

/// Threshold maximizing the balanced accuracy (TPR+TNR)/2 of
/// "loss < tau"; searched over midpoints of adjacent sorted values plus
/// +-infinity sentinels, ties broken by smallest tau.
std::pair<double, double> best_threshold(
    const std::vector<double>& member_losses,
    const std::vector<double>& nonmember_losses);

ThresholdRule fit_rule(
    const LossProfile& profile, RuleVariant variant,
    const std::map<SubgroupKey, std::vector<std::size_t>>& partition = {});

/// Per-point balanced attack accuracy (the privacy-risk estimate) and
/// its per-cell means. Points with a degenerate in/out split are
/// undefined (nullopt) and excluded from cell means.
struct AttackEval {
  std::vector<std::optional<double>> point_risk;
  std::map<SubgroupKey, double> cell_risk;
  std::size_t undefined_points = 0;
};

AttackEval evaluate_attack(const LossProfile& profile,
                           const ThresholdRule& rule);

struct CostEval {
  std::vector<std::optional<double>> point_cost;
  std::map<SubgroupKey, double> cell_cost;
};

/// Pointwise fair-minus-unconstrained risk difference.
CostEval privacy_cost(const AttackEval& fair, const AttackEval& unconstrained,
                      const Dataset& data);

/// Mean out-of-training loss minus mean in-training loss for one point.
std::optional<double> memorization(std::size_t point_index,
                                   const LossProfile& profile);

std::vector<std::optional<double>> memorization_all(const LossProfile& profile);

struct VulnerablePoint {
  std::size_t index = 0;
  int g = 0, y = 0;
  double risk_fair = 0.0;
  double risk_unconstrained = 0.0;
  double mem_fair = 0.0;
  double mem_unconstrained = 0.0;
};

/// Per-point true positive rate of the rule over the models trained on
/// the point.
std::optional<double> attack_tpr(const LossProfile& profile,
                                 const ThresholdRule& rule,
                                 std::size_t point_index);

std::optional<double> attack_tpr_gain(const LossProfile& profile_fair,
                                      const LossProfile& profile_unc,
                                      const ThresholdRule& rule_fair,
                                      const ThresholdRule& rule_unc,
                                      std::size_t point_index);

/// Accuracy and fairness summary of one pool.
struct PoolSummary {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double train_gap = 0.0;
  double test_gap = 0.0;
  std::map<SubgroupKey, double> train_cell_accuracy;
  std::map<SubgroupKey, double> test_cell_accuracy;
  std::size_t gap_unmet_count = 0;
};

/// Everything one experiment produces.
struct PrivacyReport {
  std::string meta_json;  // serialized `meta` payload from the harness
  AttackEval risks_unconstrained;  // per-subgroup rule
  AttackEval risks_fair;
  AttackEval risks_unconstrained_single;
  AttackEval risks_fair_single;
  CostEval cost;
  std::vector<std::optional<double>> memorization_unconstrained;
  std::vector<std::optional<double>> memorization_fair;
  std::vector<VulnerablePoint> vulnerable_points;
  PoolSummary summary_unconstrained;
  PoolSummary summary_fair;
  std::vector<SubgroupKey> cells;
  std::vector<int> point_group;
  std::vector<int> point_label;
  std::vector<std::optional<double>> tpr_fair;
  std::vector<std::optional<double>> tpr_unconstrained;
  std::vector<std::optional<double>> tpr_gain;
};

std::vector<VulnerablePoint> top_vulnerable(const PrivacyReport& report,
                                            std::size_t k);

std::string report_to_json(const PrivacyReport& report);
PrivacyReport report_from_json(const std::string& json_text);

/// Literal execution of the membership-inference attack game with fresh
/// retraining per trial: challenger samples S' of size n-1, flips b,
/// appends z or a fresh draw, trains, hands (z, loss) to the adversary.
/// Returns the adversary's win fraction. Intended for cheap learners
/// and small n only.
double simulate_attack_game(const DataPoint& z, BaseLearner learner,
                            const TrainOptions& opts, int n,
                            const SyntheticConfig& cfg, int trials,
                            const std::function<int(double loss)>& adversary,
                            std::uint64_t seed);

}  // namespace fairleak
