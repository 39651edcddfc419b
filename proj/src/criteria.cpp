#include "geoconf/criteria.hpp"

#include "geoconf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace geoconf {

WaicResult waic(const Eigen::MatrixXd& ll) {
  const Eigen::Index d = ll.cols();
  if (d < 2) throw InvalidInput("waic: need at least two posterior draws");
  if (ll.rows() == 0) throw InvalidInput("waic: no observations");
  if (!ll.allFinite()) throw InvalidInput("waic: non-finite log density");
  WaicResult r;
  for (Eigen::Index i = 0; i < ll.rows(); ++i) {
    const auto row = ll.row(i);
    const double top = row.maxCoeff();
    const double lse = top + std::log((row.array() - top).exp().sum());
    r.lppd += lse - std::log(static_cast<double>(d));
    const double mean = row.mean();
    r.p_waic += (row.array() - mean).square().sum() / static_cast<double>(d - 1);
  }
  r.waic = -2.0 * (r.lppd - r.p_waic);
  return r;
}

double dic(const Eigen::VectorXd& deviance_draws, double deviance_at_mean) {
  if (deviance_draws.size() < 2) throw InvalidInput("dic: need at least two draws");
  const double p_d = deviance_draws.mean() - deviance_at_mean;
  return deviance_at_mean + 2.0 * p_d;
}

Eigen::MatrixXd pointwise_loglik(const Eigen::VectorXd& y, const Eigen::MatrixXd& predictor,
                                 const Eigen::VectorXd& sigma_eps) {
  if (predictor.rows() != y.size() || predictor.cols() != sigma_eps.size()) {
    throw InvalidInput("pointwise_loglik: dimension mismatch");
  }
  Eigen::MatrixXd ll(predictor.rows(), predictor.cols());
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (Eigen::Index j = 0; j < predictor.cols(); ++j) {
    const double s = sigma_eps[j];
    ll.col(j) = -half_log_2pi - std::log(s) -
                0.5 * ((y - predictor.col(j)).array() / s).square();
  }
  return ll;
}

SparseMatrix neighbour_weights(std::span<const Point> locations, const NeighbourRule& rule) {
  const auto n = static_cast<Eigen::Index>(locations.size());
  std::vector<Eigen::Triplet<double>> entries;
  std::vector<std::pair<double, int>> order;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (rule.kind == NeighbourRule::Kind::KNearest) {
      if (rule.k < 1 || rule.k >= n) throw InvalidInput("morans_i: k must lie in [1, n-1]");
      order.clear();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j != i) order.emplace_back(distance(locations[i], locations[j]), static_cast<int>(j));
      }
      std::partial_sort(order.begin(), order.begin() + rule.k, order.end());
      for (int t = 0; t < rule.k; ++t) entries.emplace_back(i, order[t].second, 1.0);
    } else {
      if (!(rule.threshold > 0.0)) throw InvalidInput("morans_i: distance threshold must be positive");
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j != i && distance(locations[i], locations[j]) <= rule.threshold) {
          entries.emplace_back(i, j, 1.0);
        }
      }
    }
  }
  SparseMatrix w(n, n);
  w.setFromTriplets(entries.begin(), entries.end());
  return w;
}

MoranResult morans_i(const Eigen::VectorXd& values, std::span<const Point> locations,
                     const NeighbourRule& rule) {
  if (static_cast<Eigen::Index>(locations.size()) != values.size()) {
    throw InvalidInput("morans_i: values and locations differ in length");
  }
  return morans_i(values, neighbour_weights(locations, rule));
}

MoranResult morans_i(const Eigen::VectorXd& values, const SparseMatrix& weights) {
  const Eigen::Index n = values.size();
  if (n < 3) throw InvalidInput("morans_i: need at least three locations");
  if (weights.rows() != n || weights.cols() != n) throw InvalidInput("morans_i: weight matrix size");
  const Eigen::VectorXd dev = values.array() - values.mean();
  const double ss = dev.squaredNorm();
  if (!(ss > 0.0)) throw InvalidInput("morans_i: constant values make I undefined");

  // row standardisation; rows without neighbours stay empty
  Eigen::MatrixXd w = Eigen::MatrixXd(weights);
  if ((w.array() < 0.0).any()) throw InvalidInput("morans_i: negative weights");
  for (Eigen::Index i = 0; i < n; ++i) {
    const double rs = w.row(i).sum();
    if (rs > 0.0) w.row(i) /= rs;
  }
  const double s0 = w.sum();
  if (!(s0 > 0.0)) throw InvalidInput("morans_i: weight matrix is empty");

  MoranResult r;
  const double nn = static_cast<double>(n);
  r.i = nn / s0 * dev.dot(w * dev) / ss;
  r.expected = -1.0 / (nn - 1.0);
  const Eigen::MatrixXd sym = w + w.transpose();
  const double s1 = 0.5 * sym.array().square().sum();
  const Eigen::VectorXd margins = w.rowwise().sum() + w.colwise().sum().transpose();
  const double s2 = margins.squaredNorm();
  r.variance = (nn * nn * s1 - nn * s2 + 3.0 * s0 * s0) / ((nn * nn - 1.0) * s0 * s0) -
               r.expected * r.expected;
  r.z = (r.i - r.expected) / std::sqrt(r.variance);
  r.p_value = std::erfc(std::abs(r.z) / std::numbers::sqrt2);
  return r;
}

std::vector<ModelSummary> summarize_study(const std::vector<ReplicateRecord>& records,
                                          double true_beta) {
  std::vector<ModelSummary> out;
  std::vector<std::vector<const ReplicateRecord*>> cells;
  for (const auto& rec : records) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const ModelSummary& s) { return s.model == rec.model; });
    if (it == out.end()) {
      out.push_back({});
      out.back().model = rec.model;
      cells.emplace_back();
      it = out.end() - 1;
    }
    const auto idx = static_cast<std::size_t>(it - out.begin());
    if (rec.ok) {
      cells[idx].push_back(&rec);
    } else {
      ++it->failed;
    }
  }
  for (std::size_t m = 0; m < out.size(); ++m) {
    auto& s = out[m];
    const auto& ok = cells[m];
    s.replicates = static_cast<int>(ok.size());
    if (ok.empty()) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      s.mean_beta = s.esd = s.mean_se = s.mean_dic = s.mean_waic = s.coverage = nan;
      continue;
    }
    const double k = static_cast<double>(ok.size());
    int covered = 0;
    for (const auto* r : ok) {
      s.mean_beta += r->beta.mean / k;
      s.mean_se += r->beta.sd / k;
      s.mean_dic += r->dic / k;
      s.mean_waic += r->waic / k;
      if (r->beta.q025 <= true_beta && true_beta <= r->beta.q975) ++covered;
    }
    if (ok.size() >= 2) {
      double ss = 0.0;
      for (const auto* r : ok) ss += (r->beta.mean - s.mean_beta) * (r->beta.mean - s.mean_beta);
      s.esd = std::sqrt(ss / (k - 1.0));
    } else {
      s.esd = std::numeric_limits<double>::quiet_NaN();
    }
    s.coverage = 100.0 * covered / k;
  }
  return out;
}

}  // namespace geoconf
