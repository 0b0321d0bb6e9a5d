#include "fairleak/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fairleak/random.hpp"

namespace fairleak {

std::string to_string(const SubgroupKey& key) {
  return "G" + std::to_string(key.g) + (key.y == 1 ? "+" : "-");
}

Dataset::Dataset(std::vector<DataPoint> points, int dim)
    : points_(std::move(points)), dim_(dim) {
  if (points_.empty()) throw std::invalid_argument("dataset must be nonempty");
  std::set<int> gs;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto& p = points_[i];
    if (static_cast<int>(p.x.size()) != dim_)
      throw std::invalid_argument("point " + std::to_string(i) +
                                  " has wrong feature dimension");
    if (p.y != 0 && p.y != 1)
      throw std::invalid_argument("point " + std::to_string(i) +
                                  " has non-binary label");
    gs.insert(p.g);
  }
  groups_.assign(gs.begin(), gs.end());
}

namespace {

// Lower-triangular Cholesky factor; throws if the matrix is not
// symmetric positive-definite.
std::vector<std::vector<double>> cholesky(
    const std::vector<std::vector<double>>& a, const std::string& what) {
  const std::size_t d = a.size();
  for (const auto& row : a)
    if (row.size() != d)
      throw std::invalid_argument(what + ": covariance is not square");
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(a[i][j] - a[j][i]) > 1e-12)
        throw std::invalid_argument(what + ": covariance is not symmetric");

  std::vector<std::vector<double>> l(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
      if (i == j) {
        if (s <= 0.0)
          throw std::invalid_argument(what +
                                      ": covariance is not positive-definite");
        l[i][i] = std::sqrt(s);
      } else {
        l[i][j] = s / l[j][j];
      }
    }
  }
  return l;
}

void check_prob(double p, const std::string& what) {
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument(what + " must be in [0,1]");
}

}  // namespace

void SyntheticConfig::validate() const {
  if (n <= 0) throw std::invalid_argument("n must be positive");
  check_prob(p_group0, "p_group0");
  check_prob(p_neg_given_g[0], "p_neg_g0");
  check_prob(p_neg_given_g[1], "p_neg_g1");
  std::size_t dim = gaussians[0][0].mean.size();
  if (dim == 0) throw std::invalid_argument("gaussian mean is empty");
  for (int g = 0; g < 2; ++g) {
    for (int y = 0; y < 2; ++y) {
      const auto& gp = gaussians[g][y];
      std::string what = "gaussian g" + std::to_string(g) + "_y" + std::to_string(y);
      if (gp.mean.size() != dim)
        throw std::invalid_argument(what + ": inconsistent dimension");
      if (gp.cov.size() != dim)
        throw std::invalid_argument(what + ": covariance dimension mismatch");
      cholesky(gp.cov, what);
    }
  }
}

SyntheticConfig default_synthetic_config() {
  SyntheticConfig cfg;
  cfg.gaussians[0][0] = {{0.0, -1.0}, {{7.0, 1.0}, {1.0, 7.0}}};
  cfg.gaussians[1][0] = {{-5.0, 0.0}, {{5.0, 1.0}, {1.0, 5.0}}};
  cfg.gaussians[0][1] = {{1.0, 2.0}, {{5.0, 2.0}, {2.0, 5.0}}};
  cfg.gaussians[1][1] = {{2.0, 3.0}, {{10.0, 1.0}, {1.0, 4.0}}};
  return cfg;
}

std::size_t MembershipMask::train_size() const {
  return static_cast<std::size_t>(
      std::count(in_train.begin(), in_train.end(), true));
}

Dataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t dim = cfg.gaussians[0][0].mean.size();

  std::array<std::array<std::vector<std::vector<double>>, 2>, 2> chol;
  for (int g = 0; g < 2; ++g)
    for (int y = 0; y < 2; ++y)
      chol[g][y] = cholesky(cfg.gaussians[g][y].cov, "cov");

  Rng rng = make_rng(seed, "synthetic");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);

  std::vector<DataPoint> points;
  points.reserve(cfg.n);
  // Draw order per point is fixed: group, then label, then features.
  for (int i = 0; i < cfg.n; ++i) {
    DataPoint p;
    p.g = unif(rng) < cfg.p_group0 ? 0 : 1;
    p.y = unif(rng) < cfg.p_neg_given_g[p.g] ? 0 : 1;
    std::vector<double> z(dim);
    for (auto& v : z) v = norm(rng);
    p.x.assign(cfg.gaussians[p.g][p.y].mean.begin(),
               cfg.gaussians[p.g][p.y].mean.end());
    const auto& l = chol[p.g][p.y];
    for (std::size_t r = 0; r < dim; ++r)
      for (std::size_t c = 0; c <= r; ++c) p.x[r] += l[r][c] * z[c];
    points.push_back(std::move(p));
  }
  return Dataset(std::move(points), static_cast<int>(dim));
}

std::vector<MembershipMask> draw_masks(const Dataset& data, int count,
                                       std::size_t train_size,
                                       std::uint64_t seed) {
  const std::size_t n = data.size();
  if (train_size == 0 || train_size >= n)
    throw std::invalid_argument("train_size must be in (0, n)");
  if (count <= 0) throw std::invalid_argument("count must be positive");

  std::vector<MembershipMask> masks;
  masks.reserve(count);
  std::vector<std::size_t> idx(n);
  for (int m = 0; m < count; ++m) {
    std::uint64_t mask_seed = derive_seed(seed, "mask", m);
    Rng rng(mask_seed);
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first train_size slots are a uniform subset.
    for (std::size_t i = 0; i < train_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    MembershipMask mask;
    mask.seed = mask_seed;
    mask.in_train.assign(n, false);
    for (std::size_t i = 0; i < train_size; ++i) mask.in_train[idx[i]] = true;
    masks.push_back(std::move(mask));
  }
  return masks;
}

std::map<SubgroupKey, std::vector<std::size_t>> subgroup_partition(
    const Dataset& data) {
  std::map<SubgroupKey, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = data.point(i);
    cells[{p.g, p.y}].push_back(i);
  }
  return cells;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim surrounding whitespace
    auto b = field.find_first_not_of(" \t\r");
    auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");

  auto header = split_csv_line(line);
  auto column_of = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw std::runtime_error(path + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };

  std::vector<std::size_t> fcols;
  for (const auto& c : schema.feature_columns) fcols.push_back(column_of(c));
  std::size_t gcol = column_of(schema.group_column);
  std::size_t lcol = column_of(schema.label_column);

  // Two label values: the declared positive one and whatever single
  // other value the file uses.
  std::string negative_value;
  bool negative_seen = false;

  std::vector<DataPoint> points;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw std::runtime_error(path + ": row " + std::to_string(row) +
                               " has " + std::to_string(fields.size()) +
                               " fields, expected " +
                               std::to_string(header.size()));
    DataPoint p;
    for (std::size_t k = 0; k < fcols.size(); ++k) {
      const std::string& raw = fields[fcols[k]];
      try {
        std::size_t pos = 0;
        p.x.push_back(std::stod(raw, &pos));
        if (pos != raw.size()) throw std::invalid_argument(raw);
      } catch (const std::exception&) {
        throw std::runtime_error(path + ": row " + std::to_string(row) +
                                 ", column '" + schema.feature_columns[k] +
                                 "': non-numeric feature '" + raw + "'");
      }
    }
    try {
      p.g = std::stoi(fields[gcol]);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ": row " + std::to_string(row) +
                               ", column '" + schema.group_column +
                               "': non-integer group '" + fields[gcol] + "'");
    }
    const std::string& lab = fields[lcol];
    if (lab == schema.positive_value) {
      p.y = 1;
    } else if (negative_seen && lab == negative_value) {
      p.y = 0;
    } else if (!negative_seen) {
      negative_value = lab;
      negative_seen = true;
      p.y = 0;
    } else {
      throw std::runtime_error(path + ": row " + std::to_string(row) +
                               ", column '" + schema.label_column +
                               "': unexpected label '" + lab + "'");
    }
    points.push_back(std::move(p));
  }
  if (points.empty()) throw std::runtime_error(path + ": no data rows");
  return Dataset(std::move(points), static_cast<int>(points[0].x.size()));
}

void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "index";
  for (int k = 0; k < data.dim(); ++k) out << ",f" << k;
  out << ",group,label\n";
  out.precision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = data.point(i);
    out << i;
    for (double v : p.x) out << ',' << v;
    out << ',' << p.g << ',' << p.y << '\n';
  }
}

namespace {

// Parses "[a, b]" into a vector of doubles.
std::vector<double> parse_vector(const std::string& raw, const std::string& key) {
  std::string s = raw;
  for (char& c : s)
    if (c == '[' || c == ']' || c == ',') c = ' ';
  std::vector<double> out;
  std::stringstream ss(s);
  double v;
  while (ss >> v) out.push_back(v);
  if (out.empty())
    throw std::invalid_argument("config key '" + key + "': expected a vector");
  return out;
}

// Parses "[[a, b], [c, d]]" into a square matrix.
std::vector<std::vector<double>> parse_matrix(const std::string& raw,
                                              const std::string& key) {
  auto flat = parse_vector(raw, key);
  std::size_t d = static_cast<std::size_t>(std::llround(std::sqrt(double(flat.size()))));
  if (d * d != flat.size())
    throw std::invalid_argument("config key '" + key +
                                "': expected a square matrix");
  std::vector<std::vector<double>> m(d, std::vector<double>(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) m[i][j] = flat[i * d + j];
  return m;
}

}  // namespace

SyntheticConfig parse_synthetic_config(
    const std::map<std::string, std::string>& kv) {
  SyntheticConfig cfg = default_synthetic_config();
  for (const auto& [key, value] : kv) {
    if (key == "n") {
      cfg.n = std::stoi(value);
    } else if (key == "p_group0") {
      cfg.p_group0 = std::stod(value);
    } else if (key == "p_neg_g0") {
      cfg.p_neg_given_g[0] = std::stod(value);
    } else if (key == "p_neg_g1") {
      cfg.p_neg_given_g[1] = std::stod(value);
    } else if (key.rfind("mean_g", 0) == 0 || key.rfind("cov_g", 0) == 0) {
      bool is_mean = key[0] == 'm';
      // mean_g{G}_y{Y} / cov_g{G}_y{Y}
      std::size_t gpos = key.find("_g") + 2;
      std::size_t ypos = key.find("_y");
      if (ypos == std::string::npos || ypos + 2 > key.size())
        throw std::invalid_argument("bad subgroup key '" + key + "'");
      int g = std::stoi(key.substr(gpos, ypos - gpos));
      int y = std::stoi(key.substr(ypos + 2));
      if (g < 0 || g > 1 || y < 0 || y > 1)
        throw std::invalid_argument("bad subgroup key '" + key + "'");
      if (is_mean)
        cfg.gaussians[g][y].mean = parse_vector(value, key);
      else
        cfg.gaussians[g][y].cov = parse_matrix(value, key);
    } else {
      throw std::invalid_argument("unknown synthetic config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace fairleak
