#include "fairleak/learners.hpp"

#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fairleak/random.hpp"

using namespace fairleak;

namespace {

Dataset make_dataset(std::vector<DataPoint> pts) {
  int dim = static_cast<int>(pts[0].x.size());
  return Dataset(std::move(pts), dim);
}

double hard_accuracy(const BaseModel& model, const DatasetView& view) {
  double correct = 0.0;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const auto& pt = view.point(i);
    int pred = model.predict_prob(pt.x) >= 0.5 ? 1 : 0;
    correct += pred == pt.y ? 1.0 : 0.0;
  }
  return correct / view.size();
}

}  // namespace

TEST_CASE("cross entropy analytic values") {
  CHECK(cross_entropy(1.0, 1) <= 1e-6);
  CHECK(cross_entropy(0.5, 0) == doctest::Approx(std::log(2.0)));
  CHECK(cross_entropy(0.5, 1) == doctest::Approx(std::log(2.0)));
  CHECK(cross_entropy(0.0, 1) == doctest::Approx(-std::log(1e-7)));
  CHECK(cross_entropy(0.0, 1) == doctest::Approx(16.118).epsilon(1e-3));
}

TEST_CASE("cross entropy shape properties") {
  double prev1 = cross_entropy(0.01, 1);
  double prev0 = cross_entropy(0.01, 0);
  for (double p = 0.02; p <= 0.99; p += 0.01) {
    double l1 = cross_entropy(p, 1);
    double l0 = cross_entropy(p, 0);
    CHECK(l1 >= 0.0);
    CHECK(l0 >= 0.0);
    CHECK(l1 < prev1);  // decreasing in p for y=1
    CHECK(l0 > prev0);  // increasing in p for y=0
    prev1 = l1;
    prev0 = l0;
  }
}

TEST_CASE("point accuracy") {
  CHECK(point_accuracy(1.0, 1) == doctest::Approx(1.0));
  CHECK(point_accuracy(0.0, 0) == doctest::Approx(1.0));
  CHECK(point_accuracy(0.7, 1) == doctest::Approx(0.7));
  Rng rng(3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    double a = point_accuracy(unif(rng), rng() & 1 ? 1 : 0);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
  CHECK(point_accuracy(1.0, 0) == doctest::Approx(0.0));
}

TEST_CASE("network interpolates a single point") {
  Dataset d = make_dataset({{{0.3, -0.2}, 0, 1}});
  TrainOptions opts;
  opts.hidden_widths = {8};
  opts.epochs = 2000;
  opts.learning_rate = 0.01;
  opts.early_stop_tol = 0.0;
  opts.early_stop_patience = 2000;
  auto model = train_network(DatasetView::full(d), SampleWeights::uniform(1),
                             opts, 1);
  CHECK(cross_entropy(model->predict_prob(d.point(0).x), 1) < 1e-3);
}

TEST_CASE("network solves XOR") {
  Dataset d = make_dataset({{{0.0, 0.0}, 0, 0},
                            {{1.0, 1.0}, 0, 0},
                            {{0.0, 1.0}, 0, 1},
                            {{1.0, 0.0}, 0, 1}});
  TrainOptions opts;
  opts.hidden_widths = {8};
  opts.epochs = 4000;
  opts.batch_size = 4;
  opts.learning_rate = 0.05;
  opts.early_stop_tol = 0.0;
  opts.early_stop_patience = 4000;
  auto model = train_network(DatasetView::full(d), SampleWeights::uniform(4),
                             opts, 12);
  CHECK(hard_accuracy(*model, DatasetView::full(d)) == doctest::Approx(1.0));
}

TEST_CASE("network output stays in [0,1]") {
  Dataset d = make_dataset({{{0.0, 0.0}, 0, 0}, {{1.0, 1.0}, 0, 1}});
  TrainOptions opts;
  opts.hidden_widths = {16, 8};
  opts.epochs = 20;
  auto model = train_network(DatasetView::full(d), SampleWeights::uniform(2),
                             opts, 5);
  Rng rng(9);
  std::normal_distribution<double> norm(0.0, 50.0);
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> x = {norm(rng), norm(rng)};
    double p = model->predict_prob(x);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("network gradient matches central finite differences") {
  Rng rng(21);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.2, 2.0);

  for (int rep = 0; rep < 3; ++rep) {
    std::vector<DataPoint> pts;
    for (int i = 0; i < 12; ++i) {
      pts.push_back({{norm(rng), norm(rng), norm(rng)},
                     0,
                     static_cast<int>(rng() & 1)});
    }
    Dataset d = make_dataset(std::move(pts));
    DatasetView view = DatasetView::full(d);
    SampleWeights weights;
    for (int i = 0; i < 12; ++i) weights.w.push_back(unif(rng));

    NetworkSpec spec{3, {5, 4}};
    std::size_t n = network_param_count(spec);
    std::vector<double> params(n);
    for (auto& p : params) p = 0.4 * norm(rng);

    auto grad = network_gradient_at(spec, params, view, weights);
    const double h = 1e-5;
    for (std::size_t k = 0; k < n; k += 3) {  // spot check a third of them
      auto plus = params, minus = params;
      plus[k] += h;
      minus[k] -= h;
      double fd = (network_loss_at(spec, plus, view, weights) -
                   network_loss_at(spec, minus, view, weights)) /
                  (2.0 * h);
      double denom = std::max({std::abs(fd), std::abs(grad[k]), 1e-6});
      CHECK(std::abs(fd - grad[k]) / denom < 1e-4);
    }
  }
}

TEST_CASE("doubling all sample weights leaves training unchanged") {
  Rng rng(33);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::vector<DataPoint> pts;
  for (int i = 0; i < 40; ++i)
    pts.push_back({{norm(rng), norm(rng)}, 0, static_cast<int>(rng() & 1)});
  Dataset d = make_dataset(std::move(pts));
  DatasetView view = DatasetView::full(d);

  SampleWeights w1;
  std::uniform_real_distribution<double> unif(0.5, 2.0);
  for (int i = 0; i < 40; ++i) w1.w.push_back(unif(rng));
  SampleWeights w2 = w1;
  for (auto& v : w2.w) v *= 2.0;

  TrainOptions net_opts;
  net_opts.hidden_widths = {6};
  net_opts.epochs = 30;
  auto na = train_network(view, w1, net_opts, 7);
  auto nb = train_network(view, w2, net_opts, 7);

  TrainOptions tree_opts;
  tree_opts.max_depth = 4;
  auto ta = train_tree(view, w1, tree_opts, 7);
  auto tb = train_tree(view, w2, tree_opts, 7);

  for (int i = 0; i < 50; ++i) {
    std::vector<double> x = {norm(rng), norm(rng)};
    CHECK(na->predict_prob(x) == nb->predict_prob(x));
    CHECK(ta->predict_prob(x) == tb->predict_prob(x));
  }
}

TEST_CASE("depth-0 tree is the weighted positive fraction") {
  Dataset d = make_dataset(
      {{{0.0}, 0, 1}, {{1.0}, 0, 0}, {{2.0}, 0, 0}, {{3.0}, 0, 0}});
  TrainOptions opts;
  opts.max_depth = 0;
  SampleWeights w;
  w.w = {3.0, 1.0, 1.0, 1.0};
  auto model = train_tree(DatasetView::full(d), w, opts, 0);
  // weighted positives 3 of 6
  for (double v : {-5.0, 0.0, 2.5, 9.0})
    CHECK(model->predict_prob(std::vector<double>{v}) == doctest::Approx(0.5));

  SampleWeights all_pos;
  all_pos.w = {1.0, 0.0, 0.0, 0.0};
  auto pos_model = train_tree(DatasetView::full(d), all_pos, opts, 0);
  CHECK(pos_model->predict_prob(std::vector<double>{1.0}) == doctest::Approx(1.0));
}

TEST_CASE("depth-1 tree nails an axis-separable dataset") {
  std::vector<DataPoint> pts;
  Rng rng(4);
  std::normal_distribution<double> norm(0.0, 1.0);
  for (int i = 0; i < 30; ++i) {
    double a = norm(rng);
    pts.push_back({{a, norm(rng)}, 0, a < 0.0 ? 1 : 0});
  }
  Dataset d = make_dataset(std::move(pts));
  TrainOptions opts;
  opts.max_depth = 1;
  auto model = train_tree(DatasetView::full(d), SampleWeights::uniform(30),
                          opts, 0);
  CHECK(hard_accuracy(*model, DatasetView::full(d)) == doctest::Approx(1.0));
}

TEST_CASE("deeper trees never lose training accuracy") {
  Rng rng(14);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::vector<DataPoint> pts;
  for (int i = 0; i < 120; ++i) {
    double a = norm(rng), b = norm(rng);
    int y = (a * b + 0.3 * norm(rng)) > 0.0 ? 1 : 0;
    pts.push_back({{a, b}, 0, y});
  }
  Dataset d = make_dataset(std::move(pts));
  DatasetView view = DatasetView::full(d);
  double prev = 0.0;
  for (int depth : {5, 15}) {
    TrainOptions opts;
    opts.max_depth = depth;
    auto model = train_tree(view, SampleWeights::uniform(120), opts, 0);
    double acc = hard_accuracy(*model, view);
    CHECK(acc >= prev);
    prev = acc;
  }
}

TEST_CASE("model serialization round trip") {
  Rng rng(6);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::vector<DataPoint> pts;
  for (int i = 0; i < 25; ++i)
    pts.push_back({{norm(rng), norm(rng)}, 0, static_cast<int>(rng() & 1)});
  Dataset d = make_dataset(std::move(pts));
  DatasetView view = DatasetView::full(d);

  TrainOptions net_opts;
  net_opts.hidden_widths = {5};
  net_opts.epochs = 10;
  auto net = train_network(view, SampleWeights::uniform(25), net_opts, 2);
  TrainOptions tree_opts;
  tree_opts.max_depth = 3;
  auto tree = train_tree(view, SampleWeights::uniform(25), tree_opts, 2);

  for (const ModelPtr& model : {net, tree}) {
    std::stringstream blob;
    save_model(*model, blob);
    auto loaded = load_model(blob);
    for (int i = 0; i < 30; ++i) {
      std::vector<double> x = {norm(rng), norm(rng)};
      CHECK(loaded->predict_prob(x) == model->predict_prob(x));
    }
  }
}

TEST_CASE("prediction rejects wrong dimensions") {
  Dataset d = make_dataset({{{0.0, 1.0}, 0, 1}, {{1.0, 0.0}, 0, 0}});
  TrainOptions opts;
  opts.max_depth = 1;
  auto model = train_tree(DatasetView::full(d), SampleWeights::uniform(2),
                          opts, 0);
  CHECK_THROWS(model->predict_prob(std::vector<double>{1.0}));
}

TEST_CASE("invalid options and weights are rejected") {
  Dataset d = make_dataset({{{0.0}, 0, 1}});
  TrainOptions opts;
  opts.learning_rate = 0.0;
  CHECK_THROWS(train_network(DatasetView::full(d), SampleWeights::uniform(1),
                             opts, 0));
  SampleWeights zero;
  zero.w = {0.0};
  CHECK_THROWS(train_tree(DatasetView::full(d), zero, TrainOptions{}, 0));
}
