#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fairleak/dataset.hpp"

namespace fairleak {

inline constexpr double kLossClamp = 1e-7;

/// Clamped binary cross-entropy; finite for all p in [0,1].
double cross_entropy(double p, int y);

/// Expected accuracy of a probabilistic prediction: 1 - |p - y|.
double point_accuracy(double p_expected, int y);

/// Per-sample training weights, with an optional target override used by
/// the cost-sensitive reduction (override -1 means "use the point's own
/// label").
struct SampleWeights {
  std::vector<double> w;
  std::vector<int> label_override;

  static SampleWeights uniform(std::size_t n);
  void validate(std::size_t expected) const;
  int target(std::size_t i, int own_label) const {
    return label_override.empty() || label_override[i] < 0 ? own_label
                                                           : label_override[i];
  }
};

struct TrainOptions {
  // network
  std::vector<int> hidden_widths = {32, 16, 8};
  double learning_rate = 0.001;
  int epochs = 200;
  int batch_size = 64;
  double early_stop_tol = 1e-5;
  int early_stop_patience = 10;
  // warm start: flat parameters to resume from instead of a fresh init
  // (used by the reduction to continue across reweighted fits)
  std::vector<double> init_params;
  // tree
  int max_depth = 5;
  int min_samples_leaf = 1;

  void validate_network() const;
  void validate_tree() const;
};

/// A subset of a dataset's points, by index. Keeps the base dataset's
/// indexing intact so masks remain meaningful.
struct DatasetView {
  const Dataset* data = nullptr;
  std::vector<std::size_t> indices;

  static DatasetView full(const Dataset& d);
  static DatasetView from_mask(const Dataset& d, const MembershipMask& m);
  std::size_t size() const { return indices.size(); }
  const DataPoint& point(std::size_t i) const {
    return data->point(indices[i]);
  }
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class BaseModel {
 public:
  enum class Kind { network, tree };

  virtual ~BaseModel() = default;
  virtual Kind kind() const = 0;
  /// Probability of the positive class; throws on dimension mismatch.
  virtual double predict_prob(std::span<const double> x) const = 0;
  virtual void save(std::ostream& out) const = 0;

  std::uint64_t train_seed = 0;
};

using ModelPtr = std::shared_ptr<const BaseModel>;

/// Fully connected network (ReLU hidden layers, sigmoid output) trained
/// on weighted cross-entropy with Adam. Deterministic for a fixed seed.
ModelPtr train_network(const DatasetView& view, const SampleWeights& weights,
                       const TrainOptions& opts, std::uint64_t seed);

/// Greedy axis-aligned tree on weighted Gini impurity; leaves emit the
/// weighted positive fraction.
ModelPtr train_tree(const DatasetView& view, const SampleWeights& weights,
                    const TrainOptions& opts, std::uint64_t seed);

/// Text-blob round trip for model caching (format "fairleak-model 1").
void save_model(const BaseModel& model, std::ostream& out);
ModelPtr load_model(std::istream& in);

/// Flat-parameter access to the network's loss surface, used by the
/// gradient checks. Parameters are laid out layer by layer, weights
/// (row-major, out x in) then biases.
struct NetworkSpec {
  int dim = 0;
  std::vector<int> hidden_widths;
};
std::size_t network_param_count(const NetworkSpec& spec);
double network_loss_at(const NetworkSpec& spec, std::span<const double> params,
                       const DatasetView& view, const SampleWeights& weights);
std::vector<double> network_gradient_at(const NetworkSpec& spec,
                                        std::span<const double> params,
                                        const DatasetView& view,
                                        const SampleWeights& weights);

/// Flat parameters of a trained network, in the layout above; throws for
/// non-network models.
std::vector<double> network_flat_params(const BaseModel& model);

}  // namespace fairleak
