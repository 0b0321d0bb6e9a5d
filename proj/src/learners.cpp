#include "fairleak/learners.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "fairleak/random.hpp"

namespace fairleak {

double cross_entropy(double p, int y) {
  double pc = std::clamp(p, kLossClamp, 1.0 - kLossClamp);
  return y == 1 ? -std::log(pc) : -std::log(1.0 - pc);
}

double point_accuracy(double p_expected, int y) {
  return 1.0 - std::abs(p_expected - y);
}

SampleWeights SampleWeights::uniform(std::size_t n) {
  SampleWeights sw;
  sw.w.assign(n, 1.0);
  return sw;
}

void SampleWeights::validate(std::size_t expected) const {
  if (w.size() != expected)
    throw std::invalid_argument("sample weights length mismatch");
  double total = 0.0;
  for (double v : w) {
    if (v < 0.0 || !std::isfinite(v))
      throw std::invalid_argument("sample weights must be nonnegative finite");
    total += v;
  }
  if (total <= 0.0) throw std::invalid_argument("sample weights all zero");
  if (!label_override.empty() && label_override.size() != expected)
    throw std::invalid_argument("label override length mismatch");
}

void TrainOptions::validate_network() const {
  for (int w : hidden_widths)
    if (w <= 0) throw std::invalid_argument("hidden widths must be positive");
  if (learning_rate <= 0.0)
    throw std::invalid_argument("learning rate must be positive");
  if (epochs <= 0 || batch_size <= 0)
    throw std::invalid_argument("epochs and batch size must be positive");
}

void TrainOptions::validate_tree() const {
  if (max_depth < 0) throw std::invalid_argument("max depth must be >= 0");
  if (min_samples_leaf < 1)
    throw std::invalid_argument("min samples per leaf must be >= 1");
}

DatasetView DatasetView::full(const Dataset& d) {
  DatasetView v;
  v.data = &d;
  v.indices.resize(d.size());
  std::iota(v.indices.begin(), v.indices.end(), 0);
  return v;
}

DatasetView DatasetView::from_mask(const Dataset& d, const MembershipMask& m) {
  DatasetView v;
  v.data = &d;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (m.in_train[i]) v.indices.push_back(i);
  return v;
}

// ---------------------------------------------------------------------------
// Network

namespace {

struct Layer {
  int in = 0, out = 0;
  std::vector<double> w;  // out x in, row-major
  std::vector<double> b;
};

class NetworkModel final : public BaseModel {
 public:
  int dim = 0;
  std::vector<Layer> layers;  // hidden layers + final scalar layer

  Kind kind() const override { return Kind::network; }

  double predict_prob(std::span<const double> x) const override {
    if (static_cast<int>(x.size()) != dim)
      throw std::invalid_argument("feature dimension mismatch");
    std::vector<double> a(x.begin(), x.end());
    std::vector<double> next;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Layer& ly = layers[l];
      next.assign(ly.out, 0.0);
      for (int o = 0; o < ly.out; ++o) {
        double s = ly.b[o];
        const double* row = &ly.w[static_cast<std::size_t>(o) * ly.in];
        for (int i = 0; i < ly.in; ++i) s += row[i] * a[i];
        next[o] = l + 1 < layers.size() ? std::max(0.0, s) : s;
      }
      a.swap(next);
    }
    return 1.0 / (1.0 + std::exp(-a[0]));
  }

  void save(std::ostream& out) const override;
};

struct Adam {
  std::vector<double> m, v;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;

  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad,
            double lr) {
    ++t;
    double c1 = 1.0 - std::pow(beta1, t);
    double c2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

}  // namespace

ModelPtr train_network(const DatasetView& view, const SampleWeights& weights,
                       const TrainOptions& opts, std::uint64_t seed) {
  if (view.size() == 0) throw std::invalid_argument("empty training view");
  opts.validate_network();
  weights.validate(view.size());

  const int dim = view.data->dim();
  auto net = std::make_shared<NetworkModel>();
  net->dim = dim;
  net->train_seed = seed;

  std::vector<int> sizes = {dim};
  for (int h : opts.hidden_widths) sizes.push_back(h);
  sizes.push_back(1);

  Rng rng = make_rng(seed, "net-init");
  std::normal_distribution<double> norm(0.0, 1.0);
  std::size_t nparams = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Layer ly;
    ly.in = sizes[l];
    ly.out = sizes[l + 1];
    double scale = std::sqrt(2.0 / ly.in);  // He init for ReLU
    ly.w.resize(static_cast<std::size_t>(ly.in) * ly.out);
    for (auto& w : ly.w) w = scale * norm(rng);
    ly.b.assign(ly.out, 0.0);
    nparams += ly.w.size() + ly.b.size();
    net->layers.push_back(std::move(ly));
  }

  // Flat views over all parameters keep Adam state in one place.
  std::vector<double> params(nparams), grad(nparams);
  auto gather = [&] {
    std::size_t k = 0;
    for (auto& ly : net->layers) {
      std::copy(ly.w.begin(), ly.w.end(), params.begin() + k);
      k += ly.w.size();
      std::copy(ly.b.begin(), ly.b.end(), params.begin() + k);
      k += ly.b.size();
    }
  };
  auto scatter = [&] {
    std::size_t k = 0;
    for (auto& ly : net->layers) {
      std::copy(params.begin() + k, params.begin() + k + ly.w.size(),
                ly.w.begin());
      k += ly.w.size();
      std::copy(params.begin() + k, params.begin() + k + ly.b.size(),
                ly.b.begin());
      k += ly.b.size();
    }
  };
  gather();
  if (!opts.init_params.empty()) {
    if (opts.init_params.size() != nparams)
      throw std::invalid_argument("warm-start parameter count mismatch");
    params = opts.init_params;
    scatter();
  }

  // Normalize weights to mean 1 so scaling all weights leaves the
  // trajectory untouched.
  const std::size_t n = view.size();
  double wsum = std::accumulate(weights.w.begin(), weights.w.end(), 0.0);
  std::vector<double> wn(n);
  for (std::size_t i = 0; i < n; ++i) wn[i] = weights.w[i] * n / wsum;

  std::vector<int> targets(n);
  for (std::size_t i = 0; i < n; ++i)
    targets[i] = weights.target(i, view.point(i).y);

  const std::size_t nlayers = net->layers.size();
  std::vector<std::vector<double>> act(nlayers + 1), delta(nlayers);
  for (std::size_t l = 0; l < nlayers; ++l)
    delta[l].resize(net->layers[l].out);

  Adam adam(nparams);
  Rng shuffle_rng = make_rng(seed, "net-shuffle");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  double best_loss = std::numeric_limits<double>::infinity();
  int stall = 0;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n;
         start += static_cast<std::size_t>(opts.batch_size)) {
      std::size_t end = std::min(n, start + opts.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t bi = start; bi < end; ++bi) {
        std::size_t i = order[bi];
        const DataPoint& pt = view.point(i);
        // forward
        act[0].assign(pt.x.begin(), pt.x.end());
        for (std::size_t l = 0; l < nlayers; ++l) {
          const Layer& ly = net->layers[l];
          act[l + 1].assign(ly.out, 0.0);
          for (int o = 0; o < ly.out; ++o) {
            double s = ly.b[o];
            const double* row = &ly.w[static_cast<std::size_t>(o) * ly.in];
            for (int c = 0; c < ly.in; ++c) s += row[c] * act[l][c];
            act[l + 1][o] = l + 1 < nlayers ? std::max(0.0, s) : s;
          }
        }
        double p = 1.0 / (1.0 + std::exp(-act[nlayers][0]));
        int t = targets[i];
        epoch_loss += wn[i] * cross_entropy(p, t);
        // backward: dL/dz_out = p - t for sigmoid + cross-entropy
        delta[nlayers - 1][0] = wn[i] * (p - t);
        for (std::size_t l = nlayers - 1; l > 0; --l) {
          const Layer& ly = net->layers[l];
          for (int c = 0; c < ly.in; ++c) {
            double s = 0.0;
            for (int o = 0; o < ly.out; ++o)
              s += ly.w[static_cast<std::size_t>(o) * ly.in + c] * delta[l][o];
            delta[l - 1][c] = act[l][c] > 0.0 ? s : 0.0;
          }
        }
        // accumulate gradient
        std::size_t k = 0;
        for (std::size_t l = 0; l < nlayers; ++l) {
          const Layer& ly = net->layers[l];
          for (int o = 0; o < ly.out; ++o)
            for (int c = 0; c < ly.in; ++c)
              grad[k + static_cast<std::size_t>(o) * ly.in + c] +=
                  delta[l][o] * act[l][c];
          k += ly.w.size();
          for (int o = 0; o < ly.out; ++o) grad[k + o] += delta[l][o];
          k += ly.b.size();
        }
      }
      double inv = 1.0 / static_cast<double>(end - start);
      for (auto& g : grad) g *= inv;
      adam.step(params, grad, opts.learning_rate);
      scatter();
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss))
      throw TrainingError("network training diverged at epoch " +
                          std::to_string(epoch));
    if (epoch_loss < best_loss - opts.early_stop_tol) {
      best_loss = epoch_loss;
      stall = 0;
    } else if (++stall >= opts.early_stop_patience) {
      break;
    }
  }
  return net;
}

namespace {

std::vector<Layer> layers_from_flat(const NetworkSpec& spec,
                                    std::span<const double> params) {
  std::vector<int> sizes = {spec.dim};
  for (int h : spec.hidden_widths) sizes.push_back(h);
  sizes.push_back(1);
  std::vector<Layer> layers;
  std::size_t k = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Layer ly;
    ly.in = sizes[l];
    ly.out = sizes[l + 1];
    ly.w.assign(params.begin() + k,
                params.begin() + k + static_cast<std::size_t>(ly.in) * ly.out);
    k += ly.w.size();
    ly.b.assign(params.begin() + k, params.begin() + k + ly.out);
    k += ly.b.size();
    layers.push_back(std::move(ly));
  }
  if (k != params.size())
    throw std::invalid_argument("flat parameter length mismatch");
  return layers;
}

}  // namespace

std::size_t network_param_count(const NetworkSpec& spec) {
  std::vector<int> sizes = {spec.dim};
  for (int h : spec.hidden_widths) sizes.push_back(h);
  sizes.push_back(1);
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
    n += static_cast<std::size_t>(sizes[l]) * sizes[l + 1] + sizes[l + 1];
  return n;
}

double network_loss_at(const NetworkSpec& spec, std::span<const double> params,
                       const DatasetView& view, const SampleWeights& weights) {
  auto layers = layers_from_flat(spec, params);
  const std::size_t nlayers = layers.size();
  double total = 0.0, wsum = 0.0;
  std::vector<double> a, next;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const DataPoint& pt = view.point(i);
    a.assign(pt.x.begin(), pt.x.end());
    for (std::size_t l = 0; l < nlayers; ++l) {
      const Layer& ly = layers[l];
      next.assign(ly.out, 0.0);
      for (int o = 0; o < ly.out; ++o) {
        double s = ly.b[o];
        const double* row = &ly.w[static_cast<std::size_t>(o) * ly.in];
        for (int c = 0; c < ly.in; ++c) s += row[c] * a[c];
        next[o] = l + 1 < nlayers ? std::max(0.0, s) : s;
      }
      a.swap(next);
    }
    double p = 1.0 / (1.0 + std::exp(-a[0]));
    total += weights.w[i] * cross_entropy(p, weights.target(i, pt.y));
    wsum += weights.w[i];
  }
  return total / wsum;
}

std::vector<double> network_gradient_at(const NetworkSpec& spec,
                                        std::span<const double> params,
                                        const DatasetView& view,
                                        const SampleWeights& weights) {
  auto layers = layers_from_flat(spec, params);
  const std::size_t nlayers = layers.size();
  std::vector<double> grad(params.size(), 0.0);
  std::vector<std::vector<double>> act(nlayers + 1), delta(nlayers);
  for (std::size_t l = 0; l < nlayers; ++l) delta[l].resize(layers[l].out);
  double wsum = 0.0;
  for (std::size_t i = 0; i < view.size(); ++i) wsum += weights.w[i];

  for (std::size_t i = 0; i < view.size(); ++i) {
    const DataPoint& pt = view.point(i);
    act[0].assign(pt.x.begin(), pt.x.end());
    for (std::size_t l = 0; l < nlayers; ++l) {
      const Layer& ly = layers[l];
      act[l + 1].assign(ly.out, 0.0);
      for (int o = 0; o < ly.out; ++o) {
        double s = ly.b[o];
        const double* row = &ly.w[static_cast<std::size_t>(o) * ly.in];
        for (int c = 0; c < ly.in; ++c) s += row[c] * act[l][c];
        act[l + 1][o] = l + 1 < nlayers ? std::max(0.0, s) : s;
      }
    }
    double p = 1.0 / (1.0 + std::exp(-act[nlayers][0]));
    int t = weights.target(i, pt.y);
    delta[nlayers - 1][0] = weights.w[i] / wsum * (p - t);
    for (std::size_t l = nlayers - 1; l > 0; --l) {
      const Layer& ly = layers[l];
      for (int c = 0; c < ly.in; ++c) {
        double s = 0.0;
        for (int o = 0; o < ly.out; ++o)
          s += ly.w[static_cast<std::size_t>(o) * ly.in + c] * delta[l][o];
        delta[l - 1][c] = act[l][c] > 0.0 ? s : 0.0;
      }
    }
    std::size_t k = 0;
    for (std::size_t l = 0; l < nlayers; ++l) {
      const Layer& ly = layers[l];
      for (int o = 0; o < ly.out; ++o)
        for (int c = 0; c < ly.in; ++c)
          grad[k + static_cast<std::size_t>(o) * ly.in + c] +=
              delta[l][o] * act[l][c];
      k += ly.w.size();
      for (int o = 0; o < ly.out; ++o) grad[k + o] += delta[l][o];
      k += ly.b.size();
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Decision tree

namespace {

struct TreeNode {
  // leaf iff feature < 0
  int feature = -1;
  double threshold = 0.0;
  double prob = 0.5;
  int left = -1, right = -1;
};

class TreeModel final : public BaseModel {
 public:
  int dim = 0;
  std::vector<TreeNode> nodes;

  Kind kind() const override { return Kind::tree; }

  double predict_prob(std::span<const double> x) const override {
    if (static_cast<int>(x.size()) != dim)
      throw std::invalid_argument("feature dimension mismatch");
    int cur = 0;
    while (nodes[cur].feature >= 0)
      cur = x[nodes[cur].feature] < nodes[cur].threshold ? nodes[cur].left
                                                         : nodes[cur].right;
    return nodes[cur].prob;
  }

  void save(std::ostream& out) const override;
};

struct TreeBuilder {
  const DatasetView& view;
  const std::vector<double>& w;
  const std::vector<int>& targets;
  const TrainOptions& opts;
  std::vector<TreeNode> nodes;

  static double gini(double wpos, double wtot) {
    if (wtot <= 0.0) return 0.0;
    double p = wpos / wtot;
    return 2.0 * p * (1.0 - p);
  }

  int build(std::vector<std::size_t> idx, int depth) {
    double wtot = 0.0, wpos = 0.0;
    for (auto i : idx) {
      wtot += w[i];
      wpos += w[i] * targets[i];
    }
    TreeNode node;
    node.prob = wtot > 0.0 ? wpos / wtot : 0.5;

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_score = gini(wpos, wtot) * wtot;
    if (depth < opts.max_depth &&
        idx.size() >= static_cast<std::size_t>(2 * opts.min_samples_leaf) &&
        wpos > 0.0 && wpos < wtot) {
      const int dim = view.data->dim();
      std::vector<std::size_t> sorted = idx;
      for (int f = 0; f < dim; ++f) {
        std::stable_sort(sorted.begin(), sorted.end(),
                         [&](std::size_t a, std::size_t b) {
                           return view.point(a).x[f] < view.point(b).x[f];
                         });
        double wl = 0.0, wlpos = 0.0;
        for (std::size_t k = 0; k + 1 < sorted.size(); ++k) {
          wl += w[sorted[k]];
          wlpos += w[sorted[k]] * targets[sorted[k]];
          double a = view.point(sorted[k]).x[f];
          double b = view.point(sorted[k + 1]).x[f];
          if (!(a < b)) continue;
          if (k + 1 < static_cast<std::size_t>(opts.min_samples_leaf) ||
              sorted.size() - k - 1 < static_cast<std::size_t>(opts.min_samples_leaf))
            continue;
          double score = gini(wlpos, wl) * wl + gini(wpos - wlpos, wtot - wl) * (wtot - wl);
          double threshold = 0.5 * (a + b);
          // strict improvement; ties keep the earlier (lower feature,
          // lower threshold) candidate
          if (score < best_score - 1e-12 * std::max(1.0, wtot)) {
            best_score = score;
            best_feature = f;
            best_threshold = threshold;
          }
        }
      }
    }

    if (best_feature < 0) {
      nodes.push_back(node);
      return static_cast<int>(nodes.size()) - 1;
    }

    std::vector<std::size_t> left, right;
    for (auto i : idx)
      (view.point(i).x[best_feature] < best_threshold ? left : right)
          .push_back(i);
    idx.clear();
    idx.shrink_to_fit();

    node.feature = best_feature;
    node.threshold = best_threshold;
    nodes.push_back(node);
    int self = static_cast<int>(nodes.size()) - 1;
    nodes[self].left = build(std::move(left), depth + 1);
    nodes[self].right = build(std::move(right), depth + 1);
    return self;
  }
};

}  // namespace

ModelPtr train_tree(const DatasetView& view, const SampleWeights& weights,
                    const TrainOptions& opts, std::uint64_t seed) {
  if (view.size() == 0) throw std::invalid_argument("empty training view");
  opts.validate_tree();
  weights.validate(view.size());

  const std::size_t n = view.size();
  // Normalize to mean 1; tree structure is invariant to global scaling.
  double wsum = std::accumulate(weights.w.begin(), weights.w.end(), 0.0);
  std::vector<double> wn(n);
  for (std::size_t i = 0; i < n; ++i) wn[i] = weights.w[i] * n / wsum;
  std::vector<int> targets(n);
  for (std::size_t i = 0; i < n; ++i)
    targets[i] = weights.target(i, view.point(i).y);

  auto tree = std::make_shared<TreeModel>();
  tree->dim = view.data->dim();
  tree->train_seed = seed;

  TreeBuilder builder{view, wn, targets, opts, {}};
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  builder.build(std::move(all), 0);
  tree->nodes = std::move(builder.nodes);
  return tree;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
constexpr const char* kMagic = "fairleak-model";
constexpr int kVersion = 1;
}  // namespace

void NetworkModel::save(std::ostream& out) const {
  out.precision(17);
  out << kMagic << ' ' << kVersion << " network\n";
  out << dim << ' ' << layers.size() << '\n';
  for (const auto& ly : layers) {
    out << ly.in << ' ' << ly.out << '\n';
    for (double v : ly.w) out << v << ' ';
    out << '\n';
    for (double v : ly.b) out << v << ' ';
    out << '\n';
  }
}

void TreeModel::save(std::ostream& out) const {
  out.precision(17);
  out << kMagic << ' ' << kVersion << " tree\n";
  out << dim << ' ' << nodes.size() << '\n';
  for (const auto& nd : nodes)
    out << nd.feature << ' ' << nd.threshold << ' ' << nd.prob << ' '
        << nd.left << ' ' << nd.right << '\n';
}

std::vector<double> network_flat_params(const BaseModel& model) {
  const auto* net = dynamic_cast<const NetworkModel*>(&model);
  if (!net) throw std::invalid_argument("model is not a network");
  std::vector<double> params;
  for (const Layer& ly : net->layers) {
    params.insert(params.end(), ly.w.begin(), ly.w.end());
    params.insert(params.end(), ly.b.begin(), ly.b.end());
  }
  return params;
}

void save_model(const BaseModel& model, std::ostream& out) { model.save(out); }

ModelPtr load_model(std::istream& in) {
  std::string magic, kind;
  int version = 0;
  in >> magic >> version >> kind;
  if (magic != kMagic || version != kVersion)
    throw std::runtime_error("unrecognized model blob");
  if (kind == "network") {
    auto net = std::make_shared<NetworkModel>();
    std::size_t nlayers = 0;
    in >> net->dim >> nlayers;
    for (std::size_t l = 0; l < nlayers; ++l) {
      Layer ly;
      in >> ly.in >> ly.out;
      ly.w.resize(static_cast<std::size_t>(ly.in) * ly.out);
      for (auto& v : ly.w) in >> v;
      ly.b.resize(ly.out);
      for (auto& v : ly.b) in >> v;
      net->layers.push_back(std::move(ly));
    }
    if (!in) throw std::runtime_error("truncated model blob");
    return net;
  }
  if (kind == "tree") {
    auto tree = std::make_shared<TreeModel>();
    std::size_t nnodes = 0;
    in >> tree->dim >> nnodes;
    tree->nodes.resize(nnodes);
    for (auto& nd : tree->nodes)
      in >> nd.feature >> nd.threshold >> nd.prob >> nd.left >> nd.right;
    if (!in) throw std::runtime_error("truncated model blob");
    return tree;
  }
  throw std::runtime_error("unknown model kind '" + kind + "'");
}

}  // namespace fairleak
