#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fairleak {

/// One labeled example: feature vector, protected group, binary label.
/// Label 1 is the positive class, 0 the negative class.
struct DataPoint {
  std::vector<double> x;
  int g = 0;
  int y = 0;
};

/// (group, label) cell identifier. Orderable so it can key maps with a
/// stable iteration order.
struct SubgroupKey {
  int g = 0;
  int y = 0;
  friend auto operator<=>(const SubgroupKey&, const SubgroupKey&) = default;
};

std::string to_string(const SubgroupKey& key);

/// Immutable collection of points with a fixed feature dimension.
/// Point indices are stable; membership masks and loss matrices refer
/// to positions in `points`.
class Dataset {
 public:
  Dataset(std::vector<DataPoint> points, int dim);

  const std::vector<DataPoint>& points() const { return points_; }
  const DataPoint& point(std::size_t i) const { return points_[i]; }
  std::size_t size() const { return points_.size(); }
  int dim() const { return dim_; }
  const std::vector<int>& groups() const { return groups_; }

 private:
  std::vector<DataPoint> points_;
  int dim_;
  std::vector<int> groups_;
};

/// Parameters of one per-subgroup Gaussian component.
struct GaussianParams {
  std::vector<double> mean;
  std::vector<std::vector<double>> cov;
};

/// Two-group synthetic distribution: group is Bernoulli, label is
/// Bernoulli conditioned on group, features are Gaussian conditioned on
/// the (group, label) cell.
struct SyntheticConfig {
  int n = 2500;
  double p_group0 = 0.2;
  std::array<double, 2> p_neg_given_g = {0.1, 0.5};
  // Indexed [g][y].
  std::array<std::array<GaussianParams, 2>, 2> gaussians;

  // Throws std::invalid_argument on bad probabilities, dimension
  // mismatches or non-SPD covariances.
  void validate() const;
};

/// The benchmark synthetic setup: n=2500, P0=0.2, P0-=0.1, P1-=0.5 and
/// the four 2-D Gaussians.
SyntheticConfig default_synthetic_config();

/// Subset-of-indices membership indicator for one trained model.
struct MembershipMask {
  std::vector<bool> in_train;
  std::uint64_t seed = 0;

  std::size_t train_size() const;
};

Dataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed);

std::vector<MembershipMask> draw_masks(const Dataset& data, int count,
                                       std::size_t train_size,
                                       std::uint64_t seed);

std::map<SubgroupKey, std::vector<std::size_t>> subgroup_partition(
    const Dataset& data);

/// Column mapping for CSV ingestion. Feature columns must be numeric;
/// the label column is matched against `positive_value` (rows carrying
/// any other value than the two observed ones fail the load).
struct CsvSchema {
  std::vector<std::string> feature_columns;
  std::string group_column;
  std::string label_column;
  std::string positive_value;
};

Dataset load_csv(const std::string& path, const CsvSchema& schema);

/// Writes `index,f0..fk,group,label` with a header row; the companion of
/// load_csv for the gen-data subcommand.
void save_csv(const Dataset& data, const std::string& path);

/// Parses the plain-text key-value synthetic config format
/// (keys n, p_group0, p_neg_g0, p_neg_g1, mean_g{G}_y{Y}, cov_g{G}_y{Y}).
SyntheticConfig parse_synthetic_config(
    const std::map<std::string, std::string>& kv);

}  // namespace fairleak
