/**
 * WCLS and cluster-based C-WCLS fits with sandwich covariances.
 *
 * Every estimator reduces to the same weighted least-squares system
 *
 *   sum_m f_m sum_{b in m} X_b' W_b (y_b - X_b theta) = 0
 *
 * where a unit m is an individual (WCLS, f_m = 1) or a cluster (C-WCLS,
 * f_m = 1/G_m for the direct criterion and 1/(G_m (G_m - 1)) for the
 * indirect one), and a block b is an individual or an ordered pair.
 *
 * The small-sample adjustment replaces each block score X_b' W_b e_b by
 * X_b' W_b (I - H_b)^{-1} e_b with H_b = X_b Q^{-1} X_b' W_b. The
 * push-through identity turns this into Q (Q - M_b)^{-1} X_b' W_b e_b with
 * M_b = X_b' W_b X_b, so only (p+q)-sized systems are ever formed.
 */
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "excursion/design.hpp"
#include "excursion/error.hpp"
#include "excursion/panel.hpp"

namespace excursion {

enum class EstimatorKind { wcls, cwcls_direct, cwcls_indirect };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::wcls: return "wcls";
    case EstimatorKind::cwcls_direct: return "cwcls_direct";
    case EstimatorKind::cwcls_indirect: return "cwcls_indirect";
  }
  return "wcls";
}

/// Short label used in report tables.
inline std::string display_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::wcls: return "WCLS";
    case EstimatorKind::cwcls_direct: return "C-WCLS";
    case EstimatorKind::cwcls_indirect: return "C-WCLS-IE";
  }
  return "WCLS";
}

inline EstimatorKind parse_estimator(const std::string& s) {
  if (s == "wcls" || s == "WCLS") return EstimatorKind::wcls;
  if (s == "cwcls_direct" || s == "cwcls" || s == "C-WCLS") return EstimatorKind::cwcls_direct;
  if (s == "cwcls_indirect" || s == "C-WCLS-IE") return EstimatorKind::cwcls_indirect;
  throw ConfigError("unknown estimator '" + s + "' (expected wcls, cwcls_direct or cwcls_indirect)");
}

struct FitOptions {
  bool adjust = true;   // small-sample (I - H)^{-1} residual adjustment
  double level = 0.95;  // confidence level of the stored intervals
};

/// Stacked weighted least-squares problem. Rows are stored row-major in
/// `X`; rows [block_start[b], block_start[b+1]) form block b and blocks
/// [unit_start[m], unit_start[m+1]) form unit m.
struct EstimatingSystem {
  std::size_t p = 0, q = 0;
  std::vector<std::string> names;
  std::vector<double> X, y, w;
  std::vector<std::size_t> block_start{0};
  std::vector<std::size_t> unit_start{0};
  std::vector<double> unit_factor;

  std::size_t k() const { return p + q; }
  std::size_t n_rows() const { return y.size(); }
  std::size_t n_blocks() const { return block_start.size() - 1; }
  std::size_t n_units() const { return unit_factor.size(); }

  void add_row(std::span<const double> g, std::span<const double> centered, double outcome, double weight) {
    X.insert(X.end(), g.begin(), g.end());
    X.insert(X.end(), centered.begin(), centered.end());
    y.push_back(outcome);
    w.push_back(weight);
  }
  void close_block() { block_start.push_back(y.size()); }
  void close_unit(double factor) {
    unit_start.push_back(n_blocks());
    unit_factor.push_back(factor);
  }
};

struct CoefficientInference {
  std::string name;
  double estimate = 0.0, se = 0.0, t_stat = 0.0, p_value = 1.0, ci_low = 0.0, ci_high = 0.0;
};

struct FitResult {
  EstimatorKind kind = EstimatorKind::wcls;
  int delta = 1;
  ReferencePolicy policy;
  bool adjusted = true;
  double level = 0.95;

  std::vector<std::string> alpha_names, beta_names;
  Eigen::VectorXd alpha_hat, beta_hat;
  Eigen::MatrixXd bread;                   // Q
  Eigen::MatrixXd meat;                    // Lambda (adjusted when `adjusted`)
  Eigen::MatrixXd covariance;              // Q^-1 Lambda Q^-1 as reported
  Eigen::MatrixXd covariance_unadjusted;   // with H = 0
  Eigen::MatrixXd beta_cov;                // lower-right q x q block of covariance
  Eigen::VectorXd se, t_stat, p_value;     // per beta coefficient
  Eigen::VectorXd ci_low, ci_high;

  int dof = 0;
  std::size_t n_units = 0;
  std::size_t n_rows = 0;

  std::size_t p() const { return static_cast<std::size_t>(alpha_hat.size()); }
  std::size_t q() const { return static_cast<std::size_t>(beta_hat.size()); }
};

// ---- linear algebra --------------------------------------------------------

inline constexpr double kSingularRcond = 1e-12;
inline constexpr double kAdjustmentCond = 1e12;

struct GramSystem {
  Eigen::MatrixXd Q;
  Eigen::VectorXd b;
};

inline GramSystem accumulate(const EstimatingSystem& sys) {
  const std::size_t k = sys.k();
  GramSystem out{Eigen::MatrixXd::Zero(k, k), Eigen::VectorXd::Zero(k)};
  Eigen::MatrixXd Qu(k, k);
  Eigen::VectorXd bu(k);
  for (std::size_t m = 0; m < sys.n_units(); ++m) {
    Qu.setZero();
    bu.setZero();
    const std::size_t r0 = sys.block_start[sys.unit_start[m]];
    const std::size_t r1 = sys.block_start[sys.unit_start[m + 1]];
    for (std::size_t r = r0; r < r1; ++r) {
      Eigen::Map<const Eigen::VectorXd> x(&sys.X[r * k], k);
      Qu.selfadjointView<Eigen::Lower>().rankUpdate(x, sys.w[r]);
      bu.noalias() += (sys.w[r] * sys.y[r]) * x;
    }
    out.Q += sys.unit_factor[m] * Qu.selfadjointView<Eigen::Lower>().toDenseMatrix();
    out.b += sys.unit_factor[m] * bu;
  }
  return out;
}

/// Cholesky factor of Q computed on the diagonally equilibrated matrix;
/// throws SingularityError naming the columns that fail to be identified.
class GramFactor {
 public:
  GramFactor(const Eigen::MatrixXd& Q, const std::vector<std::string>& names) {
    const Eigen::Index k = Q.rows();
    scale_ = Eigen::VectorXd::Ones(k);
    std::vector<std::string> zero;
    for (Eigen::Index i = 0; i < k; ++i) {
      if (!(Q(i, i) > 0.0) || !std::isfinite(Q(i, i))) zero.push_back(names[i]);
      else scale_(i) = 1.0 / std::sqrt(Q(i, i));
    }
    if (!zero.empty()) throw SingularityError("singular weighted Gram matrix: no weighted variation in " + join(zero));
    const Eigen::MatrixXd Qs = scale_.asDiagonal() * Q * scale_.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Qs, Eigen::EigenvaluesOnly);
    const double lmax = eig.eigenvalues().maxCoeff();
    const double lmin = eig.eigenvalues().minCoeff();
    rcond_ = lmax > 0.0 ? lmin / lmax : 0.0;
    if (!(rcond_ >= kSingularRcond)) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Qs);
      qr.setThreshold(1e-9);
      Eigen::Index rank = qr.rank();
      if (rank >= k) rank = k - 1;
      std::vector<std::string> bad;
      for (Eigen::Index i = rank; i < k; ++i) bad.push_back(names[qr.colsPermutation().indices()(i)]);
      throw SingularityError("singular weighted Gram matrix (rcond " + detail::format_double(rcond_) +
                             "): collinear column(s) " + join(bad));
    }
    llt_.compute(Qs);
    if (llt_.info() != Eigen::Success) throw SingularityError("weighted Gram matrix is not positive definite");
  }

  double rcond() const { return rcond_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    return scale_.asDiagonal() * llt_.solve(scale_.asDiagonal() * b);
  }

  Eigen::MatrixXd inverse() const {
    const Eigen::Index k = scale_.size();
    Eigen::MatrixXd inv = scale_.asDiagonal() * llt_.solve(Eigen::MatrixXd::Identity(k, k)) * scale_.asDiagonal();
    return 0.5 * (inv + inv.transpose());
  }

  /// L with Q = L L'.
  Eigen::MatrixXd lower() const { return scale_.cwiseInverse().asDiagonal() * Eigen::MatrixXd(llt_.matrixL()); }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
  }

  Eigen::VectorXd scale_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double rcond_ = 0.0;
};

/// Weighted estimating-equation value sum_m f_m sum_b X_b' W_b (y_b - X_b theta).
inline Eigen::VectorXd estimating_equation(const EstimatingSystem& sys, const Eigen::VectorXd& theta) {
  const std::size_t k = sys.k();
  Eigen::VectorXd total = Eigen::VectorXd::Zero(k);
  for (std::size_t m = 0; m < sys.n_units(); ++m) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(k);
    for (std::size_t r = sys.block_start[sys.unit_start[m]]; r < sys.block_start[sys.unit_start[m + 1]]; ++r) {
      Eigen::Map<const Eigen::VectorXd> x(&sys.X[r * k], k);
      s += sys.w[r] * (sys.y[r] - x.dot(theta)) * x;
    }
    total += sys.unit_factor[m] * s;
  }
  return total;
}

struct RobustCovariance {
  Eigen::MatrixXd meat, covariance;                             // as requested
  Eigen::MatrixXd meat_unadjusted, covariance_unadjusted;
};

/// Sandwich covariance Q^-1 Lambda Q^-1 with Lambda = sum_m s_m s_m',
/// s_m = f_m sum_b score_b. With `adjust`, score_b is inflated by
/// (I - H_b)^{-1}; a block whose (I - H_b) has condition number above
/// 1e12 raises AdjustmentError.
inline RobustCovariance robust_covariance(const EstimatingSystem& sys, const GramFactor& factor,
                                          const Eigen::VectorXd& theta, bool adjust) {
  const std::size_t k = sys.k();
  const Eigen::MatrixXd Qinv = factor.inverse();
  Eigen::MatrixXd L, Linv;
  if (adjust) {
    L = factor.lower();
    Linv = L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(k, k));
  }
  RobustCovariance out;
  out.meat_unadjusted = Eigen::MatrixXd::Zero(k, k);
  if (adjust) out.meat = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd su(k), sa(k), v(k);
  Eigen::MatrixXd Mb(k, k);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
  for (std::size_t m = 0; m < sys.n_units(); ++m) {
    su.setZero();
    sa.setZero();
    for (std::size_t b = sys.unit_start[m]; b < sys.unit_start[m + 1]; ++b) {
      v.setZero();
      Mb.setZero();
      for (std::size_t r = sys.block_start[b]; r < sys.block_start[b + 1]; ++r) {
        Eigen::Map<const Eigen::VectorXd> x(&sys.X[r * k], k);
        v.noalias() += (sys.w[r] * (sys.y[r] - x.dot(theta))) * x;
        if (adjust) Mb.selfadjointView<Eigen::Lower>().rankUpdate(x, sys.w[r]);
      }
      su += v;
      if (!adjust) continue;
      // Q (Q - M)^-1 v = L V diag(1/(1-mu)) V' L^-1 v, mu = eig(L^-1 M L^-T).
      const Eigen::MatrixXd C = Linv * Mb.selfadjointView<Eigen::Lower>().toDenseMatrix() * Linv.transpose();
      eig.compute(0.5 * (C + C.transpose()));
      const Eigen::VectorXd one_minus = (1.0 - eig.eigenvalues().array()).matrix();
      // Spectrum of (I - H_b) is {1 - mu_i}, plus 1 when the block has more rows than columns.
      double hi = one_minus.cwiseAbs().maxCoeff(), lo = one_minus.cwiseAbs().minCoeff();
      if (sys.block_start[b + 1] - sys.block_start[b] > k) {
        hi = std::max(hi, 1.0);
        lo = std::min(lo, 1.0);
      }
      if (!(lo > 0.0) || hi / lo > kAdjustmentCond) {
        throw AdjustmentError("small-sample adjustment is ill-conditioned (cond(I - H) > 1e12) in block " +
                              std::to_string(b) + "; refit with adjust=false");
      }
      const Eigen::MatrixXd& V = eig.eigenvectors();
      sa += L * (V * ((V.transpose() * (Linv * v)).array() / one_minus.array()).matrix());
    }
    const double f = sys.unit_factor[m];
    out.meat_unadjusted.noalias() += (f * f) * su * su.transpose();
    if (adjust) out.meat.noalias() += (f * f) * sa * sa.transpose();
  }
  auto sandwich = [&](const Eigen::MatrixXd& meat) {
    Eigen::MatrixXd c = Qinv * meat * Qinv;
    return Eigen::MatrixXd(0.5 * (c + c.transpose()));
  };
  out.covariance_unadjusted = sandwich(out.meat_unadjusted);
  if (adjust) {
    out.covariance = sandwich(out.meat);
  } else {
    out.meat = out.meat_unadjusted;
    out.covariance = out.covariance_unadjusted;
  }
  return out;
}

// ---- inference -------------------------------------------------------------

/// Two-sided t critical value t_{dof, 1 - (1 - level)/2}.
inline double t_critical(int dof, double level) {
  if (dof <= 0) throw InferenceError("degrees of freedom must be positive, got " + std::to_string(dof));
  if (!(level > 0.0 && level < 1.0)) throw InferenceError("confidence level must lie in (0,1)");
  boost::math::students_t dist(static_cast<double>(dof));
  return boost::math::quantile(dist, 1.0 - (1.0 - level) / 2.0);
}

inline CoefficientInference coefficient_inference(std::string name, double estimate, double se, int dof, double level) {
  CoefficientInference c{std::move(name), estimate, se};
  const double crit = t_critical(dof, level);
  c.ci_low = estimate - crit * se;
  c.ci_high = estimate + crit * se;
  if (se > 0.0) {
    c.t_stat = estimate / se;
    boost::math::students_t dist(static_cast<double>(dof));
    c.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(c.t_stat)));
  } else if (estimate == 0.0) {
    c.t_stat = 0.0;
    c.p_value = 1.0;
  } else {
    c.t_stat = std::copysign(std::numeric_limits<double>::infinity(), estimate);
    c.p_value = 0.0;
  }
  return c;
}

/// Per-beta intervals, t statistics and p-values at `level` on dof = n_units - p - q.
inline std::vector<CoefficientInference> inference(const FitResult& fit, double level) {
  if (fit.dof <= 0) {
    throw InferenceError("no residual degrees of freedom (n_units=" + std::to_string(fit.n_units) +
                         ", p+q=" + std::to_string(fit.p() + fit.q()) + ")");
  }
  std::vector<CoefficientInference> out;
  for (std::size_t i = 0; i < fit.q(); ++i) {
    out.push_back(coefficient_inference(fit.beta_names[i], fit.beta_hat(i), std::sqrt(std::max(0.0, fit.beta_cov(i, i))),
                                        fit.dof, level));
  }
  return out;
}

/// Solves the system and fills every FitResult field except the metadata.
inline FitResult solve_system(const EstimatingSystem& sys, const FitOptions& opt) {
  if (sys.n_units() == 0 || sys.n_rows() == 0) throw InsufficientDataError("no rows with positive weight");
  const auto gram = accumulate(sys);
  const GramFactor factor(gram.Q, sys.names);
  const Eigen::VectorXd theta = factor.solve(gram.b);
  const auto cov = robust_covariance(sys, factor, theta, opt.adjust);

  FitResult fit;
  const auto p = static_cast<Eigen::Index>(sys.p), q = static_cast<Eigen::Index>(sys.q);
  fit.adjusted = opt.adjust;
  fit.level = opt.level;
  fit.alpha_names.assign(sys.names.begin(), sys.names.begin() + p);
  fit.beta_names.assign(sys.names.begin() + p, sys.names.end());
  fit.alpha_hat = theta.head(p);
  fit.beta_hat = theta.tail(q);
  fit.bread = gram.Q;
  fit.meat = cov.meat;
  fit.covariance = cov.covariance;
  fit.covariance_unadjusted = cov.covariance_unadjusted;
  fit.beta_cov = fit.covariance.bottomRightCorner(q, q);
  fit.n_units = sys.n_units();
  fit.n_rows = sys.n_rows();
  fit.dof = static_cast<int>(fit.n_units) - static_cast<int>(p + q);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  fit.se = fit.beta_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  fit.t_stat = fit.p_value = fit.ci_low = fit.ci_high = Eigen::VectorXd::Constant(q, nan);
  if (fit.dof > 0) {
    const auto inf = inference(fit, opt.level);
    for (Eigen::Index i = 0; i < q; ++i) {
      fit.t_stat(i) = inf[i].t_stat;
      fit.p_value(i) = inf[i].p_value;
      fit.ci_low(i) = inf[i].ci_low;
      fit.ci_high(i) = inf[i].ci_high;
    }
  }
  return fit;
}

// ---- system builders -------------------------------------------------------

namespace detail {

inline void require_valid(const MRTDataset& ds) {
  const auto v = validate(ds);
  if (!v.empty()) throw ValidationError(describe_violations(v));
}

inline std::vector<std::string> system_names(const DesignContext& ctx) {
  auto names = ctx.g().labels();
  for (auto& n : names) n = "alpha:" + n;
  for (const auto& n : ctx.f().labels()) names.push_back("beta:" + n);
  return names;
}

/// Lag weight per row position; 0 for unavailable rows, whose windows are never read.
inline std::vector<double> lag_weights(const Individual& ind, int delta, const ReferencePolicy& policy) {
  std::vector<double> out(ind.rows.size(), 0.0);
  for (std::size_t pos = 0; pos < ind.rows.size(); ++pos) {
    if (!ind.rows[pos].available) continue;
    out[pos] = delta == 1 ? 1.0 : excursion_weight(lag_window(ind, pos, delta), policy);
  }
  return out;
}

/// Individual-block system for WCLS (one unit per individual) or
/// direct C-WCLS (one unit per cluster).
inline EstimatingSystem direct_system(const MRTDataset& ds, const DesignContext& ctx, const ReferencePolicy& policy,
                                      bool by_cluster) {
  EstimatingSystem sys;
  sys.p = ctx.g().size();
  sys.q = ctx.f().size();
  sys.names = system_names(ctx);
  std::vector<double> centered(sys.q);
  for (const auto& cluster : ds.clusters) {
    const std::size_t G = cluster.members.size();
    const std::size_t T = cluster.members.front().rows.size();
    const auto fv = ctx.f().evaluate_cluster(cluster);
    const auto gv = ctx.g().evaluate_cluster(cluster);
    for (std::size_t j = 0; j < G; ++j) {
      const auto& ind = cluster.members[j];
      const auto lag = lag_weights(ind, ds.delta, policy);
      for (std::size_t pos = 0; pos < T; ++pos) {
        const auto& row = ind.rows[pos];
        if (!row.available) continue;
        const double w = marginal_weight(row, ctx.plan()) * lag[pos];
        if (w == 0.0) continue;
        const double c = row.treatment - ctx.plan().tilde_p1(row);
        const double* f = &fv[(j * T + pos) * sys.q];
        for (std::size_t i = 0; i < sys.q; ++i) centered[i] = c * f[i];
        sys.add_row({&gv[(j * T + pos) * sys.p], sys.p}, centered, row.outcome, w);
      }
      sys.close_block();
      if (!by_cluster) sys.close_unit(1.0);
    }
    if (by_cluster) sys.close_unit(1.0 / static_cast<double>(G));
  }
  return sys;
}

/// Ordered-pair-block system for the indirect criterion.
inline EstimatingSystem indirect_system(const MRTDataset& ds, const DesignContext& ctx, const ReferencePolicy& policy) {
  EstimatingSystem sys;
  sys.p = ctx.g().size();
  sys.q = ctx.f().size();
  sys.names = system_names(ctx);
  const auto& plan = ctx.plan();
  if (!plan.plan().independent) {
    throw WeightPlanError("joint randomization probabilities are not available; set independent=true");
  }
  const bool empirical = plan.plan().numerator == WeightPlan::Numerator::empirical_pair;
  std::vector<double> centered(sys.q);
  for (const auto& cluster : ds.clusters) {
    const std::size_t G = cluster.members.size();
    const std::size_t T = cluster.members.front().rows.size();
    const auto fv = ctx.f().evaluate_cluster(cluster);
    const auto gv = ctx.g().evaluate_cluster(cluster);
    std::vector<std::vector<double>> lag(G);
    std::vector<double> p1(G * T, 0.5);
    std::vector<PairTable> tab(empirical ? G * T : 0);
    for (std::size_t j = 0; j < G; ++j) {
      lag[j] = lag_weights(cluster.members[j], ds.delta, policy);
      for (std::size_t pos = 0; pos < T; ++pos) {
        const auto& row = cluster.members[j].rows[pos];
        if (!row.available) continue;
        if (empirical) tab[j * T + pos] = plan.pair_numerator(row, row);
        else p1[j * T + pos] = plan.tilde_p1(row);
      }
    }
    for (std::size_t j = 0; j < G; ++j) {
      for (std::size_t jp = 0; jp < G; ++jp) {
        if (jp == j) continue;
        for (std::size_t pos = 0; pos < T; ++pos) {
          const auto& rj = cluster.members[j].rows[pos];
          const auto& rk = cluster.members[jp].rows[pos];
          if (!rj.available || !rk.available) continue;
          const double lw = lag[j][pos] * lag[jp][pos];
          if (lw == 0.0) continue;
          const PairTable num = empirical ? tab[j * T + pos] : PairTable::factorized(p1[j * T + pos], p1[jp * T + pos]);
          const double pj = rj.treatment ? rj.rand_prob : 1.0 - rj.rand_prob;
          const double pk = rk.treatment ? rk.rand_prob : 1.0 - rk.rand_prob;
          const double w = num(rj.treatment, rk.treatment) / (pj * pk) * lw;
          const double c = (1 - rj.treatment) * (rk.treatment - p_star(num));
          const double* f = &fv[(j * T + pos) * sys.q];
          for (std::size_t i = 0; i < sys.q; ++i) centered[i] = c * f[i];
          sys.add_row({&gv[(j * T + pos) * sys.p], sys.p}, centered, rj.outcome, w);
        }
        sys.close_block();
      }
    }
    sys.close_unit(1.0 / static_cast<double>(G * (G - 1)));
  }
  return sys;
}

inline FitResult finish(FitResult fit, EstimatorKind kind, const MRTDataset& ds, const ReferencePolicy& policy) {
  fit.kind = kind;
  fit.delta = ds.delta;
  fit.policy = policy;
  return fit;
}

}  // namespace detail

inline EstimatingSystem build_system(EstimatorKind kind, const MRTDataset& ds, const ModelSpec& spec,
                                     const WeightPlan& plan, const ReferencePolicy& policy) {
  detail::require_valid(ds);
  policy.check(ds.delta);
  if (kind == EstimatorKind::cwcls_direct && ds.M() < 2) {
    throw InsufficientDataError("cluster-based estimator needs at least 2 clusters, got " + std::to_string(ds.M()));
  }
  if (kind == EstimatorKind::cwcls_indirect) {
    for (const auto& c : ds.clusters) {
      if (c.members.size() < 2) {
        throw InsufficientDataError("indirect estimator needs clusters of size >= 2; cluster " + c.id + " has 1 member");
      }
    }
  } else if (plan.numerator == WeightPlan::Numerator::empirical_pair) {
    throw WeightPlanError("empirical pair numerators apply to the indirect estimator only");
  }
  const DesignContext ctx(ds, spec, plan);
  if (kind == EstimatorKind::cwcls_indirect) return detail::indirect_system(ds, ctx, policy);
  return detail::direct_system(ds, ctx, policy, kind == EstimatorKind::cwcls_direct);
}

inline FitResult fit(EstimatorKind kind, const MRTDataset& ds, const ModelSpec& spec, const WeightPlan& plan,
                     const ReferencePolicy& policy = {}, const FitOptions& opt = {}) {
  return detail::finish(solve_system(build_system(kind, ds, spec, plan, policy), opt), kind, ds, policy);
}

inline FitResult fit_wcls(const MRTDataset& ds, const ModelSpec& spec, const WeightPlan& plan,
                          const ReferencePolicy& policy = {}, const FitOptions& opt = {}) {
  return fit(EstimatorKind::wcls, ds, spec, plan, policy, opt);
}

inline FitResult fit_cwcls_direct(const MRTDataset& ds, const ModelSpec& spec, const WeightPlan& plan,
                                  const ReferencePolicy& policy = {}, const FitOptions& opt = {}) {
  return fit(EstimatorKind::cwcls_direct, ds, spec, plan, policy, opt);
}

inline FitResult fit_cwcls_indirect(const MRTDataset& ds, const ModelSpec& spec, const WeightPlan& plan,
                                    const ReferencePolicy& policy = {}, const FitOptions& opt = {}) {
  return fit(EstimatorKind::cwcls_indirect, ds, spec, plan, policy, opt);
}

/// Efficient-score weight K for arm variances sigma2(H,1), sigma2(H,0) and
/// randomization probability p:
///   K = 1/s1 + p (p/s1 + (1-p)/s0) (1/s1 - 1/s0).
inline double efficient_score_weight(double sigma2_treated, double sigma2_control, double p) {
  if (!(sigma2_treated > 0.0) || !(sigma2_control > 0.0) || !std::isfinite(sigma2_treated) ||
      !std::isfinite(sigma2_control)) {
    throw DomainError("arm variances must be positive and finite");
  }
  if (!(p > 0.0 && p < 1.0)) throw DomainError("randomization probability must lie in (0,1)");
  const double i1 = 1.0 / sigma2_treated, i0 = 1.0 / sigma2_control;
  return i1 + p * (p * i1 + (1.0 - p) * i0) * (i1 - i0);
}

}  // namespace excursion
