// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/analysis/diagnosis.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "anchorlab/analysis/auc.hpp"
#include "anchorlab/harness/csv.hpp"
#include "anchorlab/parallel.hpp"

namespace anchorlab {

HeadKhat khat_from_vectors(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys, std::size_t m) {
  const auto T = static_cast<std::size_t>(queries.rows());
  const auto d = static_cast<std::size_t>(queries.cols());
  if (keys.cols() != queries.cols()) throw DimensionError("khat: key and query widths differ");
  if (m == 0) throw std::invalid_argument("khat: M must be positive");
  m = std::min(m, d);
  if (T < m) throw std::invalid_argument("khat: " + std::to_string(T) + " query samples for M = " + std::to_string(m));
  const Eigen::RowVectorXd mean = queries.colwise().mean();
  const Eigen::MatrixXd centered = queries.rowwise() - mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(T);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw std::runtime_error("khat: eigendecomposition failed");

  HeadKhat out;
  out.directions.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  out.sigmas.resize(static_cast<Eigen::Index>(m));
  const auto& values = eig.eigenvalues();
  const auto& vectors = eig.eigenvectors();
  for (std::size_t i = 0; i < m; ++i) {
    const auto col = static_cast<Eigen::Index>(d - 1 - i);
    Eigen::VectorXd v = vectors.col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.directions.row(static_cast<Eigen::Index>(i)) = v.transpose();
    out.sigmas(static_cast<Eigen::Index>(i)) = std::sqrt(std::max(0.0, values(col)));
  }
  if (out.sigmas.maxCoeff() <= 0.0) throw std::invalid_argument("khat: target queries have zero variance");
  out.features = (keys * out.directions.transpose()) * out.sigmas.asDiagonal();
  return out;
}

template <typename T>
KhatFeatures khat(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts, std::size_t layer, std::size_t m) {
  const auto& cfg = w.config;
  if (layer >= cfg.n_layers) throw std::out_of_range("khat: layer " + std::to_string(layer) + " >= " + std::to_string(cfg.n_layers));
  if (prompts.empty()) throw std::invalid_argument("khat: no prompts");
  const std::size_t C = prompts.front().n_classes();
  const std::size_t H = cfg.n_heads, dh = cfg.d_head();
  const std::size_t n = prompts.size();
  std::vector<Eigen::MatrixXd> q(H, Eigen::MatrixXd(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dh)));
  std::vector<std::vector<Eigen::MatrixXd>> key_sum(n);
  std::vector<std::vector<std::size_t>> key_count(n);
  parallel_for(n, [&](std::size_t i) {
    const auto& p = prompts[i];
    if (p.n_classes() != C) throw std::invalid_argument("khat: prompts disagree on the class count");
    ForwardOptions opts;
    opts.capture.queries_keys = true;
    const auto res = forward<T>(w, p.tokens, {}, opts);
    key_sum[i].assign(H, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(dh)));
    key_count[i].assign(C, 0);
    for (const auto& a : p.anchors) ++key_count[i][a.cls];
    for (std::size_t h = 0; h < H; ++h) {
      const auto qd = res.trace.queries[layer * H + h].data();
      const auto kd = res.trace.keys[layer * H + h].data();
      for (std::size_t j = 0; j < dh; ++j) q[h](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>(qd[p.target * dh + j]);
      for (const auto& a : p.anchors) {
        for (std::size_t j = 0; j < dh; ++j) {
          key_sum[i][h](static_cast<Eigen::Index>(a.cls), static_cast<Eigen::Index>(j)) += static_cast<double>(kd[a.position * dh + j]);
        }
      }
    }
  });
  std::vector<std::size_t> count(C, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < C; ++c) count[c] += key_count[i][c];
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (count[c] == 0) throw std::invalid_argument("khat: class " + std::to_string(c) + " has no anchor in any prompt");
  }
  KhatFeatures out;
  out.layer = layer;
  std::vector<Eigen::MatrixXd> blocks;
  for (std::size_t h = 0; h < H; ++h) {
    Eigen::MatrixXd keys = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(dh));
    for (std::size_t i = 0; i < n; ++i) keys += key_sum[i][h];
    for (std::size_t c = 0; c < C; ++c) keys.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(count[c]);
    out.heads.push_back(khat_from_vectors(q[h], keys, m));
  }
  out.m = static_cast<std::size_t>(out.heads.front().sigmas.size());
  out.features.resize(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(H * out.m));
  for (std::size_t h = 0; h < H; ++h) {
    out.features.middleCols(static_cast<Eigen::Index>(h * out.m), static_cast<Eigen::Index>(out.m)) = out.heads[h].features;
  }
  return out;
}

Eigen::MatrixXd predicted_confusion(const Eigen::MatrixXd& features) {
  const auto C = features.rows();
  if (C < 2) throw std::invalid_argument("predicted_confusion: need at least 2 classes");
  Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(C, C);
  double mx = 0.0;
  for (Eigen::Index i = 0; i < C; ++i) {
    for (Eigen::Index j = i + 1; j < C; ++j) {
      const double v = (features.row(i) - features.row(j)).norm();
      dist(i, j) = dist(j, i) = v;
      mx = std::max(mx, v);
    }
  }
  if (mx <= 0.0) throw std::invalid_argument("predicted_confusion: all class features coincide");
  Eigen::MatrixXd out = dist / mx;
  out.diagonal().setOnes();
  return out;
}

ActualConfusion actual_confusion_from_probs(const Eigen::MatrixXd& probs, const std::vector<std::size_t>& labels) {
  const auto C = static_cast<std::size_t>(probs.cols());
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) throw DimensionError("actual_confusion: label count differs from sample count");
  ActualConfusion out;
  out.matrix = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(C));
  for (std::size_t i = 0; i < C; ++i) {
    for (std::size_t j = i + 1; j < C; ++j) {
      std::vector<double> score;
      std::vector<bool> positive;
      for (std::size_t s = 0; s < labels.size(); ++s) {
        if (labels[s] != i && labels[s] != j) continue;
        const double pi = probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i));
        const double pj = probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j));
        score.push_back(pi + pj > 0.0 ? pi / (pi + pj) : 0.5);
        positive.push_back(labels[s] == i);
      }
      const auto n_pos = std::count(positive.begin(), positive.end(), true);
      if (n_pos == 0 || n_pos == static_cast<std::ptrdiff_t>(positive.size())) {
        out.undefined.emplace_back(i, j);
        continue;
      }
      const double auc = auc_roc(score, positive);
      out.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = auc;
      out.matrix(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = auc;
    }
  }
  return out;
}

template <typename T>
ActualConfusion actual_confusion(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts) {
  if (prompts.empty()) throw std::invalid_argument("actual_confusion: no prompts");
  const std::size_t C = prompts.front().n_classes();
  Eigen::MatrixXd probs(static_cast<Eigen::Index>(prompts.size()), static_cast<Eigen::Index>(C));
  std::vector<std::size_t> labels(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    const auto& p = prompts[i];
    if (!p.query_label) throw std::invalid_argument("actual_confusion: prompt without a gold label");
    if (p.n_classes() != C) throw std::invalid_argument("actual_confusion: prompts disagree on the class count");
    labels[i] = *p.query_label;
    const auto res = forward<T>(w, p.tokens);
    const std::size_t v = res.logits.dim(1);
    std::vector<double> z(C);
    for (std::size_t c = 0; c < C; ++c) z[c] = static_cast<double>(res.logits.data()[p.target * v + p.label_ids[c]]);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& x : z) sum += (x = std::exp(x - mx));
    for (std::size_t c = 0; c < C; ++c) probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = z[c] / sum;
  });
  return actual_confusion_from_probs(probs, labels);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

std::pair<std::size_t, std::size_t> off_diagonal_argmin(const Eigen::MatrixXd& m) {
  std::pair<std::size_t, std::size_t> best{0, 1};
  double v = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) {
      if (m(i, j) < v) {
        v = m(i, j);
        best = {static_cast<std::size_t>(i), static_cast<std::size_t>(j)};
      }
    }
  }
  return best;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("spearman: inputs differ in length");
  if (a.size() < 2) return std::nullopt;
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

ConfusionComparison compare_confusions(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& actual) {
  if (predicted.rows() != actual.rows() || predicted.cols() != actual.cols() || predicted.rows() != predicted.cols()) {
    throw DimensionError("compare_confusions: matrices differ in shape");
  }
  if (predicted.rows() < 2) throw std::invalid_argument("compare_confusions: need at least 2 classes");
  ConfusionComparison out{predicted, actual, std::nullopt, off_diagonal_argmin(predicted), off_diagonal_argmin(actual)};
  std::vector<double> a, b;
  for (Eigen::Index i = 0; i < predicted.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < predicted.cols(); ++j) {
      a.push_back(predicted(i, j));
      b.push_back(actual(i, j));
    }
  }
  out.spearman = spearman(a, b);
  return out;
}

template <typename T>
std::vector<MSweepRow> m_sweep(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts, std::size_t layer,
                               const Eigen::MatrixXd& actual, const std::vector<std::size_t>& ms) {
  std::vector<MSweepRow> rows;
  for (auto m : ms) {
    const auto f = khat(w, prompts, layer, m);
    rows.push_back({m, f.m, compare_confusions(predicted_confusion(f.features), actual)});
  }
  return rows;
}

template <typename T>
std::size_t auto_layer(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts) {
  const auto curve = layer_auc(w, prompts);
  std::size_t best = 0;
  for (std::size_t l = 1; l < curve.auc.size(); ++l) {
    if (curve.auc[l] > curve.auc[best]) best = l;
  }
  return best;
}

std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& names) {
  if (static_cast<Eigen::Index>(names.size()) != m.rows()) throw DimensionError("matrix_csv: name count differs from rows");
  std::vector<std::string> header{"class"};
  header.insert(header.end(), names.begin(), names.end());
  CsvWriter csv(header);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<std::string> row{names[static_cast<std::size_t>(i)]};
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(csv_number(m(i, j)));
    csv.row(row);
  }
  return csv.str();
}

template KhatFeatures khat(const ModelWeights<float>&, const std::vector<IclPrompt>&, std::size_t, std::size_t);
template KhatFeatures khat(const ModelWeights<double>&, const std::vector<IclPrompt>&, std::size_t, std::size_t);
template ActualConfusion actual_confusion(const ModelWeights<float>&, const std::vector<IclPrompt>&);
template ActualConfusion actual_confusion(const ModelWeights<double>&, const std::vector<IclPrompt>&);
template std::vector<MSweepRow> m_sweep(const ModelWeights<float>&, const std::vector<IclPrompt>&, std::size_t,
                                        const Eigen::MatrixXd&, const std::vector<std::size_t>&);
template std::vector<MSweepRow> m_sweep(const ModelWeights<double>&, const std::vector<IclPrompt>&, std::size_t,
                                        const Eigen::MatrixXd&, const std::vector<std::size_t>&);
template std::size_t auto_layer(const ModelWeights<float>&, const std::vector<IclPrompt>&);
template std::size_t auto_layer(const ModelWeights<double>&, const std::vector<IclPrompt>&);

}  // namespace anchorlab
