// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "anchorlab/analysis/diagnosis.hpp"
#include "anchorlab/harness/csv.hpp"
#include "anchorlab/rng.hpp"
#include "model_helpers.hpp"

using namespace anchorlab;

namespace {

Eigen::MatrixXd random_matrix(std::size_t r, std::size_t c, CounterRng& rng, double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

// Top eigenpairs of a symmetric PSD matrix by power iteration with deflation.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> power_eigen(Eigen::MatrixXd a, std::size_t m) {
  Eigen::MatrixXd vecs(m, a.rows());
  Eigen::VectorXd vals(m);
  for (std::size_t k = 0; k < m; ++k) {
    Eigen::VectorXd v = Eigen::VectorXd::Ones(a.rows()).normalized();
    for (int it = 0; it < 20000; ++it) v = (a * v).normalized();
    vals(k) = v.dot(a * v);
    vecs.row(k) = v.transpose();
    a -= vals(k) * v * v.transpose();
  }
  return {vecs, vals};
}

Eigen::MatrixXd pairwise(const Eigen::MatrixXd& f) {
  Eigen::MatrixXd d(f.rows(), f.rows());
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (Eigen::Index j = 0; j < f.rows(); ++j) d(i, j) = (f.row(i) - f.row(j)).norm();
  }
  return d;
}

}  // namespace

TEST_CASE("khat: degenerate and too-few queries") {
  Eigen::MatrixXd same = Eigen::MatrixXd::Ones(6, 3);
  Eigen::MatrixXd keys = Eigen::MatrixXd::Identity(2, 3);
  CHECK_THROWS_AS(khat_from_vectors(same, keys, 1), std::invalid_argument);
  CounterRng rng(1, "q");
  CHECK_THROWS_AS(khat_from_vectors(random_matrix(2, 3, rng), keys, 3), std::invalid_argument);
}

TEST_CASE("khat: variance along one axis") {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(4, 2);
  q.col(0) << -3, -1, 1, 3;
  Eigen::MatrixXd keys(2, 2);
  keys << 2.0, 7.0, -1.0, 4.0;
  const auto h = khat_from_vectors(q, keys, 1);
  CHECK(std::abs(std::abs(h.directions(0, 0)) - 1.0) < 1e-12);
  CHECK(std::abs(h.directions(0, 1)) < 1e-12);
  const double sigma = std::sqrt(5.0);
  CHECK(h.sigmas(0) == doctest::Approx(sigma).epsilon(1e-12));
  const double sign = h.directions(0, 0);
  CHECK(h.features(0, 0) == doctest::Approx(sigma * 2.0 * sign).epsilon(1e-12));
  CHECK(h.features(1, 0) == doctest::Approx(-sigma * sign).epsilon(1e-12));
}

TEST_CASE("khat matches power iteration on the sample covariance") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CounterRng rng(seed, "eig");
    Eigen::MatrixXd q = random_matrix(40, 6, rng);
    // Spread the spectrum so power iteration converges fast.
    for (Eigen::Index j = 0; j < 6; ++j) q.col(j) *= 1.0 + 1.5 * static_cast<double>(6 - j);
    const Eigen::MatrixXd keys = random_matrix(3, 6, rng);
    const auto h = khat_from_vectors(q, keys, 3);
    const Eigen::MatrixXd centered = q.rowwise() - q.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(q.rows());
    const auto [vecs, vals] = power_eigen(cov, 3);
    for (int k = 0; k < 3; ++k) {
      CHECK(std::abs(h.sigmas(k) - std::sqrt(vals(k))) < 1e-8);
      CHECK(std::abs(std::abs(h.directions.row(k).dot(vecs.row(k))) - 1.0) < 1e-8);
      if (k > 0) CHECK(h.sigmas(k) <= h.sigmas(k - 1));
    }
    const Eigen::MatrixXd gram = h.directions * h.directions.transpose();
    CHECK((gram - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("khat distances are invariant under a common rotation") {
  CounterRng rng(7, "rot");
  const Eigen::MatrixXd q = random_matrix(30, 5, rng);
  const Eigen::MatrixXd keys = random_matrix(4, 5, rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(5, 5, rng));
  const Eigen::MatrixXd rot = qr.householderQ();
  const auto a = khat_from_vectors(q, keys, 3);
  const auto b = khat_from_vectors(q * rot, keys * rot, 3);
  CHECK((pairwise(a.features) - pairwise(b.features)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("predicted confusion examples") {
  Eigen::MatrixXd two(2, 3);
  two << 0, 0, 0, 1, 2, 3;
  const auto p2 = predicted_confusion(two);
  CHECK(p2(0, 1) == 1.0);
  CHECK(p2(1, 0) == 1.0);
  CHECK(p2(0, 0) == 1.0);

  Eigen::MatrixXd line(3, 1);
  line << 0, 1, 2;
  const auto p3 = predicted_confusion(line);
  CHECK(p3(0, 1) == 0.5);
  CHECK(p3(1, 2) == 0.5);
  CHECK(p3(0, 2) == 1.0);
  CHECK(predicted_confusion(line * 3.7) == p3);
  CHECK_THROWS_AS(predicted_confusion(Eigen::MatrixXd::Ones(3, 2)), std::invalid_argument);

  CounterRng rng(3, "pc");
  const Eigen::MatrixXd f = random_matrix(5, 4, rng);
  const auto p = predicted_confusion(f);
  const auto d = pairwise(f);
  const double mx = d.maxCoeff();
  int ones = 0;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      if (i == j) continue;
      CHECK(std::abs(p(i, j) - d(i, j) / mx) < 1e-15);
      CHECK(p(i, j) == p(j, i));
      ones += p(i, j) == 1.0;
    }
  }
  CHECK(ones == 2);
}

TEST_CASE("actual confusion from probabilities") {
  Eigen::MatrixXd probs(6, 3);
  probs << 0.8, 0.1, 0.1,  //
      0.7, 0.2, 0.1,       //
      0.1, 0.8, 0.1,       //
      0.2, 0.6, 0.2,       //
      0.1, 0.1, 0.8,       //
      0.3, 0.1, 0.6;
  const std::vector<std::size_t> right = {0, 0, 1, 1, 2, 2};
  const auto perfect = actual_confusion_from_probs(probs, right);
  CHECK(perfect.matrix(0, 1) == 1.0);
  CHECK(perfect.matrix(1, 2) == 1.0);
  CHECK(perfect.undefined.empty());

  Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(6, 3, 1.0 / 3);
  const auto coin = actual_confusion_from_probs(flat, right);
  CHECK(coin.matrix(0, 2) == 0.5);

  // Pair (0,1): class-0 scores 0.8/0.9, 0.2/0.8 vs class-1 scores 0.5/0.6 .. 0.1/0.9.
  const std::vector<std::size_t> mixed = {0, 1, 0, 1, 2, 2};
  const auto m = actual_confusion_from_probs(probs, mixed);
  std::vector<double> pos, neg;
  for (int i = 0; i < 4; ++i) {
    const double s = probs(i, 0) / (probs(i, 0) + probs(i, 1));
    (mixed[i] == 0 ? pos : neg).push_back(s);
  }
  double wins = 0;
  for (double a : pos) {
    for (double b : neg) wins += a > b ? 1.0 : a == b ? 0.5 : 0.0;
  }
  CHECK(m.matrix(0, 1) == wins / static_cast<double>(pos.size() * neg.size()));

  const auto missing = actual_confusion_from_probs(probs, {0, 0, 0, 1, 1, 1});
  CHECK(missing.undefined.size() == 2);
  CHECK(missing.matrix(0, 2) == 1.0);
}

TEST_CASE("spearman and comparison") {
  CHECK(*spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(*spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(!spearman({1}, {1}));
  CHECK(!spearman({1, 1, 1}, {1, 2, 3}));

  Eigen::MatrixXd a(3, 3);
  a << 1, 0.2, 0.9, 0.2, 1, 0.5, 0.9, 0.5, 1;
  const auto same = compare_confusions(a, a);
  CHECK(*same.spearman == doctest::Approx(1.0));
  CHECK(same.most_confused_predicted == std::pair<std::size_t, std::size_t>{0, 1});
  Eigen::MatrixXd two = Eigen::MatrixXd::Ones(2, 2);
  CHECK(!compare_confusions(two, two).spearman);

  const auto csv = parse_csv(matrix_csv(a, {"x", "y", "z"}));
  CHECK(csv.size() == 4);
  CHECK(csv[0] == std::vector<std::string>{"class", "x", "y", "z"});
}

TEST_CASE("khat on a model: shapes and M clamp") {
  const auto task = testutil::small_task(3);
  const auto w = testutil::task_model<double>(task, 4, 2, 2);
  const auto prompts = testutil::task_prompts(task, 30);
  const auto f = khat(w, prompts, 1, 3);
  CHECK(f.features.rows() == 3);
  CHECK(f.features.cols() == 6);
  const auto big = khat(w, prompts, 1, 200);
  CHECK(big.m == w.config.d_head());
  const auto actual = actual_confusion(w, prompts);
  CHECK(actual.matrix.rows() == 3);
  const auto sweep = m_sweep(w, prompts, 1, actual.matrix, {2, 5, 200});
  CHECK(sweep.size() == 3);
  CHECK(sweep[2].m_used == w.config.d_head());
  CHECK_THROWS_AS(khat(w, prompts, 5, 3), std::out_of_range);
}
