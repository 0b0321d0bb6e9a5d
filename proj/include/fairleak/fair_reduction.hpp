#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fairleak/learners.hpp"

namespace fairleak {

/// Probability-weighted mixture of base models. An unconstrained model
/// is the singleton case.
struct RandomizedClassifier {
  std::vector<std::pair<ModelPtr, double>> members;
  bool gap_unmet = false;
  double achieved_gap = 0.0;

  void validate() const;
  static RandomizedClassifier singleton(ModelPtr model);
};

/// Expected prediction of the mixture: sum of weight * member probability.
double expected_prediction(const RandomizedClassifier& clf,
                           std::span<const double> x);

/// Mixture-expected cross-entropy loss, the adversary's view of a fair
/// model.
double expected_loss(const RandomizedClassifier& clf, const DataPoint& z);

/// Misclassification rate of the mixture on one point: |p - y| of the
/// expected prediction or, with hard decisions, the total weight of
/// members whose thresholded prediction misses the label.
double point_error(const RandomizedClassifier& clf, const DataPoint& pt,
                   bool hard_decisions);

enum class BaseLearner { network, tree };

struct EGConfig {
  double delta = 0.001;
  int iterations = 50;
  double bound = 100.0;   // total multiplier mass B
  double eta = 2.0;       // multiplier step size
  BaseLearner base = BaseLearner::network;

  /// Training budget for one cost-sensitive iterate. Deliberately
  /// shorter than a standalone fit: the loop trains up to `iterations`
  /// models on overlapping reweightings of the same sample, and a
  /// mixture of near-converged fits concentrates its loss mass on the
  /// upweighted training points.
  static TrainOptions default_iterate_train() {
    TrainOptions t;
    t.epochs = 140;
    return t;
  }
  TrainOptions train = default_iterate_train();
  bool hard_decisions = false;  // threshold at 0.5 in the fairness metric
  double gap_tolerance = 1e-3;

  void validate() const;
};

/// One signed equalized-odds moment: subgroup (g,y) error rate minus the
/// label-y pooled error rate, with sign +1 or -1.
struct Moment {
  SubgroupKey cell;
  int sign = +1;  // +1 constrains err(cell) - err(y) <= delta, -1 the reverse
};

struct ViolationVector {
  std::vector<Moment> moments;
  std::vector<double> values;  // signed, one per moment
};

/// Expected misclassification rate per cell and per label over a view.
/// Throws if a (g,y) cell present in the dataset's group set is empty.
struct ErrorRates {
  std::map<SubgroupKey, double> by_cell;
  std::map<int, double> by_label;  // label-conditioned pooled rate
};
ErrorRates error_rates(const RandomizedClassifier& clf, const DatasetView& view,
                       bool hard_decisions = false);

/// Max over labels and group pairs of the absolute error-rate difference.
double fairness_gap(const RandomizedClassifier& clf, const DatasetView& view,
                    bool hard_decisions = false);
double fairness_gap(const RandomizedClassifier& clf, const Dataset& data,
                    bool hard_decisions = false);

ViolationVector eo_violations(const RandomizedClassifier& clf,
                              const DatasetView& view,
                              bool hard_decisions = false);

/// Cost-sensitive weights realizing the Lagrangian inner problem for the
/// given multipliers (aligned with eo_moments(view)).
SampleWeights reweight_costs(const std::vector<double>& multipliers,
                             const std::vector<Moment>& moments,
                             const DatasetView& view);

std::vector<Moment> eo_moments(const DatasetView& view);

/// Exponentiated-gradient reduction: alternates multiplicative
/// multiplier updates with cost-sensitive base-learner fits, then picks
/// mixture weights over the iterates whose training gap meets delta.
RandomizedClassifier eg_fit(const DatasetView& view, const EGConfig& cfg,
                            std::uint64_t seed);

}  // namespace fairleak
