#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "dtr/error.hpp"
#include "dtr/io.hpp"
#include "dtr/random.hpp"

namespace dtr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Pipeline { ridge_raw, ridge_pca, scaled_raw, scaled_pca };

inline constexpr std::array<Pipeline, 4> kAllPipelines{Pipeline::ridge_raw, Pipeline::ridge_pca, Pipeline::scaled_raw,
                                                       Pipeline::scaled_pca};

inline std::string_view to_string(Pipeline p) {
  switch (p) {
    case Pipeline::ridge_raw: return "ridge_raw";
    case Pipeline::ridge_pca: return "ridge_pca";
    case Pipeline::scaled_raw: return "scaled_raw";
    case Pipeline::scaled_pca: return "scaled_pca";
  }
  return "?";
}

inline Pipeline parse_pipeline(std::string_view s) {
  for (auto p : kAllPipelines) {
    if (to_string(p) == s) return p;
  }
  throw DataValidationError(fmt::format("unknown pipeline '{}'", s));
}

inline bool uses_ridge(Pipeline p) { return p == Pipeline::ridge_raw || p == Pipeline::ridge_pca; }
inline bool uses_pca(Pipeline p) { return p == Pipeline::ridge_pca || p == Pipeline::scaled_pca; }

// ---------------------------------------------------------------------------------------------
// Ridge regression

struct RidgeFit {
  Vector weights;
  double intercept = 0.0;
};

/// Ridge regression with an unpenalised intercept, solved by QR of the augmented system
/// [Xc; sqrt(lambda) I] w = [yc; 0] on centred data.
inline RidgeFit ridge_fit(const Matrix& x, const Vector& y, double lambda) {
  if (x.rows() != y.size()) throw ParameterError("ridge: design and target lengths differ");
  if (x.rows() == 0) throw InsufficientDataError("ridge: no rows");
  if (!(lambda >= 0.0)) throw ParameterError("ridge: lambda must be non-negative");
  const Eigen::Index n = x.rows(), p = x.cols();
  const Eigen::RowVectorXd mx = x.colwise().mean();
  const double my = y.mean();
  Matrix a(n + p, p);
  a.topRows(n) = x.rowwise() - mx;
  a.bottomRows(p) = std::sqrt(lambda) * Matrix::Identity(p, p);
  Vector b = Vector::Zero(n + p);
  b.head(n) = y.array() - my;
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  if (qr.rank() < p) throw ParameterError("ridge: singular system (use lambda > 0)");
  RidgeFit fit;
  fit.weights = qr.solve(b);
  fit.intercept = my - mx.dot(fit.weights);
  return fit;
}

inline Vector ridge_weights(const Matrix& x, const Vector& y, double lambda) { return ridge_fit(x, y, lambda).weights; }

struct RidgeData {
  Matrix x;
  Vector y;
};

/// One ridge model per transformer; the weight vectors become that transformer's descriptor.
inline std::map<std::string, Vector> per_transformer_ridge_weights(const std::map<std::string, RidgeData>& data,
                                                                   double lambda) {
  std::map<std::string, Vector> out;
  for (const auto& [id, d] : data) {
    if (d.x.rows() < 2 * d.x.cols()) {
      throw InsufficientDataError(
          fmt::format("ridge for {}: {} rows for {} features (need at least twice as many)", id, d.x.rows(), d.x.cols()));
    }
    out.emplace(id, ridge_weights(d.x, d.y, lambda));
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Scaling and projection

struct ColumnScaling {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;  // 0 for constant columns

  [[nodiscard]] Matrix apply(const Matrix& x) const {
    Matrix out = x.rowwise() - mean;
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      if (scale(c) > 0.0) {
        out.col(c) /= scale(c);
      } else {
        out.col(c).setZero();
      }
    }
    return out;
  }
};

/// Population mean and standard deviation per column.
inline ColumnScaling fit_scaling(const Matrix& x) {
  if (x.rows() < 1) throw InsufficientDataError("scaling needs at least one row");
  ColumnScaling s;
  s.mean = x.colwise().mean();
  s.scale.resize(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double var = (x.col(c).array() - s.mean(c)).square().mean();
    const double sd = std::sqrt(var);
    s.scale(c) = sd > 1e-12 * std::max(1.0, std::abs(s.mean(c))) ? sd : 0.0;
  }
  return s;
}

/// Column-wise (x - mean) / std; constant columns map to zero.
inline Matrix zscore_normalise(const Matrix& x) {
  if (x.rows() < 2) throw InsufficientDataError("z-scoring needs at least two rows");
  return fit_scaling(x).apply(x);
}

struct PcaResult {
  Matrix scores;            // rows x n_components
  Matrix components;        // columns are unit loading vectors
  Vector explained_ratio;   // per retained component
  int n_components = 0;
};

/// Projects centred rows onto the fewest leading principal components whose cumulative explained
/// variance reaches `variance_threshold`.
inline PcaResult pca_project(const Matrix& x, double variance_threshold = 0.90) {
  if (x.rows() < 2) throw InsufficientDataError("PCA needs at least two rows");
  if (!(variance_threshold > 0.0 && variance_threshold <= 1.0)) throw ParameterError("variance threshold must lie in (0, 1]");
  const Matrix centred = x.rowwise() - x.colwise().mean();
  const Matrix cov = centred.transpose() * centred / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Eigen::Index p = x.cols();
  Vector values = eig.eigenvalues().reverse().cwiseMax(0.0);
  Matrix vectors = eig.eigenvectors().rowwise().reverse();
  for (Eigen::Index c = 0; c < p; ++c) {
    Eigen::Index arg = 0;
    vectors.col(c).cwiseAbs().maxCoeff(&arg);
    if (vectors(arg, c) < 0.0) vectors.col(c) *= -1.0;
  }
  const double total = values.sum();
  PcaResult r;
  if (!(total > 0.0)) {
    r.n_components = 1;
  } else {
    double cum = 0.0;
    for (Eigen::Index c = 0; c < p; ++c) {
      cum += values(c);
      r.n_components = static_cast<int>(c + 1);
      if (cum / total >= variance_threshold - 1e-12) break;
    }
  }
  r.components = vectors.leftCols(r.n_components);
  r.scores = centred * r.components;
  r.explained_ratio = total > 0.0 ? Vector(values.head(r.n_components) / total) : Vector(Vector::Ones(1));
  return r;
}

// ---------------------------------------------------------------------------------------------
// K-means

struct KMeansResult {
  std::vector<int> labels;
  Matrix centroids;  // k x d
  double inertia = 0.0;
  int iterations = 0;
  std::vector<double> inertia_history;  // after each assignment step of the winning restart
};

namespace detail {

inline double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

/// Relabels clusters in order of first appearance so ids do not depend on initialisation.
inline void canonicalise(KMeansResult& r) {
  std::vector<int> map(static_cast<std::size_t>(r.centroids.rows()), -1);
  int next = 0;
  for (int l : r.labels) {
    if (map[l] < 0) map[l] = next++;
  }
  for (auto& m : map) {
    if (m < 0) m = next++;
  }
  Matrix c(r.centroids.rows(), r.centroids.cols());
  for (std::size_t i = 0; i < map.size(); ++i) c.row(map[i]) = r.centroids.row(static_cast<Eigen::Index>(i));
  r.centroids = std::move(c);
  for (auto& l : r.labels) l = map[l];
}

inline KMeansResult lloyd(const Matrix& x, int k, Rng& rng, int max_iterations) {
  const Eigen::Index n = x.rows();
  KMeansResult r;
  r.centroids.resize(k, x.cols());
  // k-means++ seeding
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  auto first = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
  r.centroids.row(0) = x.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(x, i, r.centroids, c - 1));
      total += d2[i];
    }
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= d2[i];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    r.centroids.row(c) = x.row(pick);
  }

  r.labels.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = squared_distance(x, i, r.centroids, c);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      inertia += bd;
      if (r.labels[i] != best) {
        r.labels[i] = best;
        changed = true;
      }
    }
    r.inertia_history.push_back(inertia);
    r.inertia = inertia;
    r.iterations = it + 1;
    if (!changed && it > 0) break;
    // update step; an emptied cluster takes the point farthest from its centroid
    Matrix sums = Matrix::Zero(k, x.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(r.labels[i]) += x.row(i);
      ++counts[r.labels[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        r.centroids.row(c) = sums.row(c) / counts[c];
        continue;
      }
      Eigen::Index far = 0;
      double fd = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = squared_distance(x, i, r.centroids, r.labels[i]);
        if (counts[r.labels[i]] > 1 && d > fd) {
          fd = d;
          far = i;
        }
      }
      --counts[r.labels[far]];
      r.labels[far] = c;
      counts[c] = 1;
      r.centroids.row(c) = x.row(far);
    }
  }
  return r;
}

}  // namespace detail

/// Lloyd's algorithm from k-means++ seeds; the restart with the lowest inertia wins.
inline KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int restarts = 10, int max_iterations = 300) {
  if (k < 1) throw ParameterError("k-means needs k >= 1");
  if (k > points.rows()) throw ParameterError(fmt::format("k-means: k = {} exceeds {} points", k, points.rows()));
  if (restarts < 1 || max_iterations < 1) throw ParameterError("k-means needs positive restarts and iterations");
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
  std::optional<KMeansResult> best;
  for (int r = 0; r < restarts; ++r) {
    auto run = detail::lloyd(points, k, rng, max_iterations);
    if (!best || run.inertia < best->inertia) best = std::move(run);
  }
  detail::canonicalise(*best);
  return *best;
}

/// Mean silhouette coefficient; points in singleton clusters score 0.
inline double silhouette(const Matrix& x, const std::vector<int>& labels, int k) {
  const Eigen::Index n = x.rows();
  std::vector<int> sizes(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++sizes[l];
  double total = 0.0;
  std::vector<double> dist_sum(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) dist_sum[labels[j]] += std::sqrt(detail::squared_distance(x, i, x, j));
    }
    const int own = labels[i];
    if (sizes[own] <= 1) continue;
    const double a = dist_sum[own] / (sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != own && sizes[c] > 0) b = std::min(b, dist_sum[c] / sizes[c]);
    }
    const double m = std::max(a, b);
    if (std::isfinite(b) && m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

/// Log-likelihood criterion of a spherical Gaussian mixture at the k-means solution, sign chosen
/// so that larger is better.
inline double kmeans_bic(const Matrix& x, const KMeansResult& km) {
  const auto n = static_cast<double>(x.rows());
  const auto d = static_cast<double>(x.cols());
  const auto k = static_cast<double>(km.centroids.rows());
  std::vector<double> sizes(static_cast<std::size_t>(km.centroids.rows()), 0.0);
  for (int l : km.labels) sizes[l] += 1.0;
  const double dof = std::max(n - k, 1.0) * d;
  const double variance = std::max(km.inertia / dof, 1e-300);
  constexpr double kTwoPi = 6.283185307179586;
  double ll = 0.0;
  for (double ni : sizes) {
    if (ni <= 0.0) continue;
    ll += ni * std::log(ni) - ni * std::log(n) - ni * d / 2.0 * std::log(kTwoPi * variance) - (ni - 1.0) * d / 2.0;
  }
  return ll - 0.5 * k * (d + 1.0) * std::log(n);
}

struct ClusterCountScore {
  int k = 0;
  double silhouette = 0.0;
  double bic = 0.0;
  double combined = 0.0;
};

struct ClusterCountSelection {
  int n_clusters = 0;
  std::vector<ClusterCountScore> scores;
};

/// Chooses k in [k_min, k_max] maximising the mean of min-max normalised silhouette and BIC.
inline ClusterCountSelection select_n_clusters(const Matrix& points, int k_min, int k_max, std::uint64_t seed) {
  if (k_min > k_max) throw ParameterError("empty cluster-count range");
  if (k_min < 2 || k_max > points.rows() - 1) {
    throw ParameterError(fmt::format("cluster-count range [{}, {}] must lie within [2, {}]", k_min, k_max, points.rows() - 1));
  }
  ClusterCountSelection sel;
  bool identical = true;
  for (Eigen::Index i = 1; i < points.rows() && identical; ++i) identical = points.row(i) == points.row(0);
  if (identical) {
    sel.n_clusters = k_min;
    return sel;
  }
  for (int k = k_min; k <= k_max; ++k) {
    const auto km = kmeans(points, k, seed);
    sel.scores.push_back({k, silhouette(points, km.labels, k), kmeans_bic(points, km), 0.0});
  }
  auto normalise = [&](auto member) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : sel.scores) {
      lo = std::min(lo, s.*member);
      hi = std::max(hi, s.*member);
    }
    std::vector<double> out;
    for (const auto& s : sel.scores) out.push_back(hi > lo ? (s.*member - lo) / (hi - lo) : 0.0);
    return out;
  };
  const auto ns = normalise(&ClusterCountScore::silhouette);
  const auto nb = normalise(&ClusterCountScore::bic);
  double best = -1.0;
  for (std::size_t i = 0; i < sel.scores.size(); ++i) {
    sel.scores[i].combined = 0.5 * (ns[i] + nb[i]);
    if (sel.scores[i].combined > best) {
      best = sel.scores[i].combined;
      sel.n_clusters = sel.scores[i].k;
    }
  }
  return sel;
}

// ---------------------------------------------------------------------------------------------
// Assignments

struct ClusterAssignment {
  Pipeline pipeline = Pipeline::ridge_raw;
  int n_clusters = 1;
  std::map<std::string, int> cluster_of;
  Matrix centroids;

  [[nodiscard]] int at(const std::string& id) const {
    const auto it = cluster_of.find(id);
    if (it == cluster_of.end()) throw DataValidationError(fmt::format("transformer {} has no cluster", id));
    return it->second;
  }
  [[nodiscard]] std::vector<std::string> members(int cluster) const {
    std::vector<std::string> out;
    for (const auto& [id, c] : cluster_of) {
      if (c == cluster) out.push_back(id);
    }
    return out;
  }
  void validate() const {
    if (n_clusters < 1 || n_clusters > static_cast<int>(cluster_of.size())) {
      throw InvariantViolation("cluster count outside [1, fleet size]");
    }
    for (const auto& [id, c] : cluster_of) {
      if (c < 0 || c >= n_clusters) throw InvariantViolation(fmt::format("{} has cluster id {} out of range", id, c));
    }
  }
};

struct ClusteringOptions {
  int k_min = 2;
  int k_max = 10;
  double pca_variance = 0.90;
  int restarts = 10;
  int max_iterations = 300;
};

/// Clusters transformers given one descriptor row per id (rows in the order of `ids`).
inline ClusterAssignment cluster_descriptors(Pipeline pipeline, const std::vector<std::string>& ids, const Matrix& descriptors,
                                             std::uint64_t seed, const ClusteringOptions& opt = {}) {
  if (static_cast<Eigen::Index>(ids.size()) != descriptors.rows()) throw ParameterError("descriptor rows must match ids");
  ClusterAssignment a;
  a.pipeline = pipeline;
  const int n = static_cast<int>(ids.size());
  if (n < 3) {
    a.n_clusters = 1;
    for (const auto& id : ids) a.cluster_of[id] = 0;
    a.centroids = descriptors.colwise().mean();
    return a;
  }
  Matrix pts = uses_ridge(pipeline) ? descriptors : zscore_normalise(descriptors);
  if (uses_pca(pipeline)) pts = pca_project(pts, opt.pca_variance).scores;
  const int k_hi = std::min(opt.k_max, n - 1);
  const int k_lo = std::min(opt.k_min, k_hi);
  a.n_clusters = select_n_clusters(pts, k_lo, k_hi, seed).n_clusters;
  const auto km = kmeans(pts, a.n_clusters, seed, opt.restarts, opt.max_iterations);
  for (int i = 0; i < n; ++i) a.cluster_of[ids[i]] = km.labels[i];
  a.centroids = km.centroids;
  a.validate();
  return a;
}

struct PipelineScore {
  Pipeline pipeline = Pipeline::ridge_raw;
  double coverage = 0.0;  // fleet-mean 5-95 coverage on the holdout, percent
};

/// Index of the candidate whose holdout coverage is closest to 90%; ties go to the earlier pipeline.
inline std::size_t choose_pipeline(const std::vector<PipelineScore>& candidates, double nominal = 90.0) {
  if (candidates.empty()) throw ParameterError("no pipelines to choose from");
  std::vector<std::size_t> idx(candidates.size());
  std::iota(idx.begin(), idx.end(), 0);
  return *std::min_element(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double da = std::abs(candidates[a].coverage - nominal);
    const double db = std::abs(candidates[b].coverage - nominal);
    if (da != db) return da < db;
    return static_cast<int>(candidates[a].pipeline) < static_cast<int>(candidates[b].pipeline);
  });
}

}  // namespace dtr
