#include <doctest.h>

#include <random>
#include <sstream>

#include "shiftwatch/baselines.hpp"
#include "support.hpp"

using namespace shiftwatch;
using shiftwatch::testing::gaussian;

namespace {

// Brute-force LOF of `queries` against `ref` (no standardization), same 1e-10 guard.
Vector lof_oracle(const Matrix& ref, const Matrix& queries, int k) {
  const Index n = ref.rows();
  auto knn = [&](const Vector& q, Index self) {
    std::vector<std::pair<double, Index>> d;
    for (Index j = 0; j < n; ++j)
      if (j != self) d.push_back({(ref.row(j).transpose() - q).norm(), j});
    std::sort(d.begin(), d.end());
    d.resize(static_cast<std::size_t>(k));
    return d;
  };
  Vector kdist(n), lrd(n);
  std::vector<std::vector<std::pair<double, Index>>> nn;
  for (Index i = 0; i < n; ++i) {
    nn.push_back(knn(ref.row(i).transpose(), i));
    kdist(i) = nn.back().back().first;
  }
  for (Index i = 0; i < n; ++i) {
    double reach = 0.0;
    for (auto [d, j] : nn[static_cast<std::size_t>(i)]) reach += std::max(kdist(j), d);
    lrd(i) = 1.0 / (reach / k + 1e-10);
  }
  Vector out(queries.rows());
  for (Index i = 0; i < queries.rows(); ++i) {
    double reach = 0.0, sum = 0.0;
    for (auto [d, j] : knn(queries.row(i).transpose(), -1)) {
      reach += std::max(kdist(j), d);
      sum += lrd(j);
    }
    out(i) = sum / k * (reach / k + 1e-10);
  }
  return out;
}

LabeledStream labeled(std::initializer_list<int> labels) {
  LabeledStream s;
  s.schema = FeatureSchema({"x"});
  s.labeled = true;
  std::size_t i = 0;
  for (int y : labels) s.samples.push_back({{i++, Vector::Zero(1)}, y});
  return s;
}

}  // namespace

TEST_CASE("average path length") {
  CHECK(average_path_length(1) == 0.0);
  CHECK(average_path_length(0) == 0.0);
  CHECK(average_path_length(2) == 1.0);
  CHECK(average_path_length(256) == doctest::Approx(2.0 * (std::log(255.0) + 0.5772156649015329) - 2.0 * 255.0 / 256.0));
}

TEST_CASE("isolation forest scores a far outlier above the 99th training percentile") {
  std::mt19937_64 rng(1);
  const Matrix train = gaussian(1000, 3, rng);
  IsolationForest f;
  f.fit(train);
  Vector s = f.score(train);
  std::sort(s.data(), s.data() + s.size());
  CHECK(f.score(Vector(Vector::Constant(3, 8.0))) > s(989));
  CHECK(f.classify(Vector(Vector::Constant(3, 8.0))) == 1);
  CHECK(f.effective_subsample() == 256);
  CHECK(f.max_depth() == 8);
}

TEST_CASE("a point at the training median is not flagged") {
  std::mt19937_64 rng(2);
  const Matrix train = gaussian(500, 2, rng);
  for (const char* name : {"if", "lof", "ae"}) {
    auto d = make_detector(name, 0.085, 3);
    d->fit(train);
    CHECK(d->classify(Vector(Vector::Zero(2))) == 0);
  }
}

TEST_CASE("lof matches a brute-force oracle for k = 3") {
  std::mt19937_64 rng(3);
  const Matrix train = gaussian(40, 2, rng);
  const Matrix queries = gaussian(10, 2, rng, 0.5);
  LofConfig c;
  c.k = 3;
  c.standardize = false;
  LocalOutlierFactor lof(c);
  lof.fit(train);
  const Vector expected = lof_oracle(train, queries, 3);
  for (Index i = 0; i < queries.rows(); ++i) CHECK(lof.score(Matrix(queries)).coeff(i) == doctest::Approx(expected(i)).epsilon(1e-12));
}

TEST_CASE("lof is invariant to the order of the training rows") {
  std::mt19937_64 rng(4);
  const Matrix train = gaussian(60, 3, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> p(60);
  p.setIdentity();
  std::shuffle(p.indices().data(), p.indices().data() + 60, rng);
  LocalOutlierFactor a, b;
  a.fit(train);
  b.fit(Matrix(p * train));
  const Matrix q = gaussian(15, 3, rng, 1.0);
  CHECK((a.score(q) - b.score(q)).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(a.threshold() == doctest::Approx(b.threshold()).epsilon(1e-12));
}

TEST_CASE("autoencoder reconstructs the training manifold better than points off it") {
  std::mt19937_64 rng(5);
  // Rank-two data in four dimensions.
  const Matrix latent = gaussian(400, 2, rng);
  Matrix mix(2, 4);
  mix << 1, 0, 1, -1, 0, 1, 1, 1;
  const Matrix train = latent * mix;
  AutoencoderConfig c;
  c.hidden = 2;
  c.epochs = 150;
  c.optimizer.learning_rate = 1e-2;
  AutoencoderDetector ae(c);
  ae.fit(train);
  const Matrix off = gaussian(100, 4, rng) * 2.0;
  CHECK(ae.score(off).mean() > 5.0 * ae.score(train).mean());
}

TEST_CASE("a score equal to the threshold is normal") {
  std::mt19937_64 rng(6);
  IsolationForest f;
  f.fit(gaussian(300, 2, rng));
  const Vector x = Vector::Constant(2, 1.3);
  f.set_threshold(f.score(x));
  CHECK(f.classify(x) == 0);
}

TEST_CASE("thresholds flag about the contamination share of the training set") {
  std::mt19937_64 rng(7);
  const Matrix train = gaussian(2000, 3, rng);
  for (const char* name : {"if", "lof"}) {
    auto d = make_detector(name, 0.1, 1);
    d->fit(train);
    const auto flags = d->classify(train);
    const double rate = std::accumulate(flags.begin(), flags.end(), 0.0) / 2000.0;
    CHECK(rate == doctest::Approx(0.1).epsilon(0.02));
  }
}

TEST_CASE("fitting is deterministic for a fixed seed") {
  std::mt19937_64 rng(8);
  const Matrix train = gaussian(300, 3, rng);
  const Matrix q = gaussian(20, 3, rng, 1.0);
  for (const char* name : {"if", "lof", "ae"}) {
    auto a = make_detector(name, 0.085, 4), b = make_detector(name, 0.085, 4);
    a->fit(train);
    b->fit(train);
    CHECK(a->score(q) == b->score(q));
  }
}

TEST_CASE("degenerate training sets") {
  const Matrix constant = Matrix::Constant(50, 3, 2.0);
  for (const char* name : {"if", "lof", "ae"}) {
    auto d = make_detector(name, 0.085, 1);
    d->fit(constant);
    CHECK(d->score(constant).allFinite());
    CHECK(std::isfinite(d->score(Vector(Vector::Constant(3, 5.0)))));
  }
  IsolationForest f;
  CHECK_THROWS_AS(f.score(Vector(Vector::Zero(2))), StateError);
  CHECK_THROWS_AS(f.fit(Matrix(0, 2)), SizeError);
  LocalOutlierFactor lof;
  CHECK_THROWS_AS(lof.fit(Matrix::Zero(1, 2)), SizeError);
  CHECK_THROWS_AS(make_detector("svm", 0.1, 1), ConfigError);
  CHECK_THROWS_AS(IsolationForest({0}), ConfigError);
}

TEST_CASE("evaluation of all-zero and perfect flags") {
  const LabeledStream s = labeled({0, 1, 1, 0, 0, 0});
  const std::vector<SegmentDescriptor> segs{{0, 3, SegmentKind::source_product, {}},
                                            {3, 6, SegmentKind::target_product, {}}};
  const std::vector<int> none(6, 0);
  auto e = evaluate_flags(none, s, segs);
  CHECK(e[0].flagged_rate == 0.0);
  CHECK(e[0].precision == 1.0);
  CHECK(e[0].recall == 0.0);
  CHECK(e[1].recall == 1.0);
  const std::vector<int> perfect{0, 1, 1, 0, 0, 0};
  e = evaluate_flags(perfect, s, segs);
  CHECK(e[0].precision == 1.0);
  CHECK(e[0].recall == 1.0);
  CHECK(e[0].flagged_rate == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(evaluate_flags(std::vector<int>(5, 0), s, segs), SizeError);
  std::ostringstream out;
  write_evaluation_csv(out, "x", e);
  CHECK(out.str().rfind("detector,segment,kind,start,end,samples,flagged_rate,precision,recall\n", 0) == 0);
}

TEST_CASE("isolation forest trained on the source product flags new products far more often") {
  const auto g = generate_stream(testing::short_recipe(9));
  const auto& src = g.segments[0];
  const Matrix rows = stack_rows(std::span<const LabeledSample>(g.stream.samples));
  IsolationForest f;
  f.fit(rows.topRows(static_cast<Index>(src.end)));
  const auto e = evaluate_on_stream(f, g.stream, g.segments);
  for (std::size_t s = 1; s < e.size(); ++s) CHECK(e[s].flagged_rate >= 3.0 * e[0].flagged_rate);
}
