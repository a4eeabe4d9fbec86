/**
 * Weights and centered design rows for the three least-squares criteria.
 *
 * Direct rows are [g(H_t), (A - p~(1|S)) f(S)] with weight
 * p~(A|S)/p(A|H) times the lag-window weight. Indirect rows pair a focal
 * individual j with another member j' of the same cluster at the same time:
 * [g(H_t), (1 - A_j)(A_j' - p~*(1|S)) f(S)] weighted by
 * p~(A_j, A_j'|S) / (p(A_j|H) p(A_j'|H)).
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "excursion/error.hpp"
#include "excursion/panel.hpp"

namespace excursion {

// ---- feature maps ----------------------------------------------------------

/// One term of f_t(S_t) or g_t(H_t).
struct Feature {
  enum class Kind { intercept, column, cluster_mean, loo_mean };
  Kind kind = Kind::intercept;
  std::string column;

  bool operator==(const Feature&) const = default;

  /// "intercept", "S", "cluster_mean(S)", "loo_mean(S)".
  static Feature parse(std::string_view text) {
    const std::string s = detail::trim(text);
    if (s.empty()) throw SpecError("empty feature name");
    if (s == "intercept" || s == "1") return {Kind::intercept, {}};
    auto wrapped = [&](std::string_view fn) -> std::optional<std::string> {
      if (s.size() > fn.size() + 2 && s.compare(0, fn.size(), fn) == 0 && s[fn.size()] == '(' && s.back() == ')') {
        return detail::trim(std::string_view(s).substr(fn.size() + 1, s.size() - fn.size() - 2));
      }
      return std::nullopt;
    };
    if (auto inner = wrapped("cluster_mean")) return {Kind::cluster_mean, *inner};
    if (auto inner = wrapped("loo_mean")) return {Kind::loo_mean, *inner};
    return {Kind::column, s};
  }

  std::string label() const {
    switch (kind) {
      case Kind::intercept: return "intercept";
      case Kind::column: return column;
      case Kind::cluster_mean: return "cluster_mean(" + column + ")";
      case Kind::loo_mean: return "loo_mean(" + column + ")";
    }
    return column;
  }
};

struct ModelSpec {
  std::vector<Feature> moderators;  // f_t(S_t), q terms
  std::vector<Feature> controls;    // g_t(H_t), p terms

  bool operator==(const ModelSpec&) const = default;

  static ModelSpec from_labels(const std::vector<std::string>& f, const std::vector<std::string>& g) {
    ModelSpec spec;
    for (const auto& s : f) spec.moderators.push_back(Feature::parse(s));
    for (const auto& s : g) spec.controls.push_back(Feature::parse(s));
    return spec;
  }
};

/// A raw covariate column of ObservationRow.
struct ColumnRef {
  bool moderator = true;
  std::size_t index = 0;

  double value(const ObservationRow& r) const { return moderator ? r.moderators[index] : r.controls[index]; }
};

/// Feature list bound to a dataset's columns. f maps may only read
/// moderator columns; g maps read controls first, then moderators.
class FeatureMap {
 public:
  enum class Role { moderator, control };

  FeatureMap(const std::vector<Feature>& features, const MRTDataset& ds, Role role) : features_(features) {
    if (features_.empty()) {
      throw SpecError(role == Role::moderator ? "moderator feature map is empty (q must be >= 1)"
                                              : "control feature map is empty (p must be >= 1)");
    }
    for (const auto& f : features_) {
      if (f.kind == Feature::Kind::intercept) {
        refs_.push_back({});
        continue;
      }
      std::optional<ColumnRef> ref;
      if (role == Role::control) {
        if (auto i = ds.control_index(f.column)) ref = ColumnRef{false, *i};
      }
      if (!ref) {
        if (auto i = ds.moderator_index(f.column)) ref = ColumnRef{true, *i};
      }
      if (!ref) {
        throw SpecError("unresolvable feature '" + f.label() + "': no " +
                        (role == Role::moderator ? std::string("moderator") : std::string("control or moderator")) +
                        " column '" + f.column + "'");
      }
      refs_.push_back(*ref);
    }
  }

  std::size_t size() const { return features_.size(); }
  const std::vector<Feature>& features() const { return features_; }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& f : features_) out.push_back(f.label());
    return out;
  }

  /// Features of `member` at row position `pos` (positions are shared
  /// across a valid cluster's members).
  void evaluate(const Cluster& cluster, std::size_t member, std::size_t pos, std::span<double> out) const {
    const auto& row = cluster.members[member].rows[pos];
    for (std::size_t k = 0; k < features_.size(); ++k) {
      const auto& f = features_[k];
      switch (f.kind) {
        case Feature::Kind::intercept: out[k] = 1.0; break;
        case Feature::Kind::column: out[k] = refs_[k].value(row); break;
        case Feature::Kind::cluster_mean:
        case Feature::Kind::loo_mean: {
          double sum = 0.0;
          for (const auto& m : cluster.members) sum += refs_[k].value(m.rows[pos]);
          double n = static_cast<double>(cluster.members.size());
          if (f.kind == Feature::Kind::loo_mean) {
            if (cluster.members.size() < 2) {
              throw SpecError("feature '" + f.label() + "' needs clusters of size >= 2 (cluster " + cluster.id + ")");
            }
            sum -= refs_[k].value(row);
            n -= 1.0;
          }
          out[k] = sum / n;
          break;
        }
      }
    }
  }

  /// All features for a cluster, laid out [member][pos][feature].
  std::vector<double> evaluate_cluster(const Cluster& cluster) const {
    const std::size_t G = cluster.members.size();
    const std::size_t T = G ? cluster.members.front().rows.size() : 0;
    const std::size_t K = features_.size();
    std::vector<double> out(G * T * K);
    std::vector<double> sums(T * K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      if (features_[k].kind != Feature::Kind::cluster_mean && features_[k].kind != Feature::Kind::loo_mean) continue;
      if (features_[k].kind == Feature::Kind::loo_mean && G < 2) {
        throw SpecError("feature '" + features_[k].label() + "' needs clusters of size >= 2 (cluster " + cluster.id + ")");
      }
      for (std::size_t pos = 0; pos < T; ++pos)
        for (const auto& m : cluster.members) sums[pos * K + k] += refs_[k].value(m.rows[pos]);
    }
    for (std::size_t j = 0; j < G; ++j) {
      for (std::size_t pos = 0; pos < T; ++pos) {
        const auto& row = cluster.members[j].rows[pos];
        double* dst = &out[(j * T + pos) * K];
        for (std::size_t k = 0; k < K; ++k) {
          switch (features_[k].kind) {
            case Feature::Kind::intercept: dst[k] = 1.0; break;
            case Feature::Kind::column: dst[k] = refs_[k].value(row); break;
            case Feature::Kind::cluster_mean: dst[k] = sums[pos * K + k] / static_cast<double>(G); break;
            case Feature::Kind::loo_mean:
              dst[k] = (sums[pos * K + k] - refs_[k].value(row)) / static_cast<double>(G - 1);
              break;
          }
        }
      }
    }
    return out;
  }

 private:
  std::vector<Feature> features_;
  std::vector<ColumnRef> refs_;
};

// ---- weight plans ----------------------------------------------------------

struct WeightPlan {
  enum class Numerator { constant, column, empirical_pair };

  Numerator numerator = Numerator::constant;
  double constant = 0.5;  // p~(1|S) for Numerator::constant
  std::string column;     // p~(1|S) column for Numerator::column
  // Empirical pair strata: focal individual's values of these moderator
  // columns, optionally split by decision point.
  std::vector<std::string> stratify_by;
  bool by_time = false;
  // Treatments of cluster members are conditionally independent given H_t,
  // so p(a, a'|H_t) = p(a|H_t) p(a'|H_t).
  bool independent = true;

  bool operator==(const WeightPlan&) const = default;
};

inline constexpr double kPairFrequencyFloor = 1e-6;

/// Joint numerator p~(a, a' | S) over {0,1}^2.
struct PairTable {
  std::array<std::array<double, 2>, 2> p{};

  double operator()(int a, int a_other) const { return p[a][a_other]; }

  static PairTable factorized(double p1_focal, double p1_other) {
    PairTable tab;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        tab.p[a][b] = (a ? p1_focal : 1.0 - p1_focal) * (b ? p1_other : 1.0 - p1_other);
    return tab;
  }
};

/// p~*(1|S) = p~(0,1|S) / (p~(0,0|S) + p~(0,1|S)).
inline double p_star(const PairTable& tab) {
  const double denom = tab(0, 0) + tab(0, 1);
  if (!(denom > 0.0)) throw WeightPlanError("degenerate pair numerator: p~(0,0) + p~(0,1) = 0");
  return tab(0, 1) / denom;
}

/// Clips every cell into (eps, 1 - eps) and renormalizes.
inline PairTable clip_pair_frequencies(const std::array<std::array<double, 2>, 2>& counts) {
  const double total = counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
  if (!(total > 0.0)) throw EstimationError("empty stratum: no treatment pairs to tabulate");
  PairTable tab;
  double sum = 0.0;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      tab.p[a][b] = std::clamp(counts[a][b] / total, kPairFrequencyFloor, 1.0 - kPairFrequencyFloor);
      sum += tab.p[a][b];
    }
  }
  for (auto& r : tab.p)
    for (auto& v : r) v /= sum;
  return tab;
}

namespace detail {

using StratumKey = std::pair<int, std::vector<double>>;

inline std::vector<ColumnRef> stratum_columns(const MRTDataset& ds, const std::vector<std::string>& names) {
  std::vector<ColumnRef> refs;
  for (const auto& n : names) {
    auto i = ds.moderator_index(n);
    if (!i) throw WeightPlanError("stratification column '" + n + "' is not a moderator column");
    refs.push_back({true, *i});
  }
  return refs;
}

/// Ordered available pairs (j != j') tallied by stratum of the focal j.
inline std::map<StratumKey, std::array<std::array<double, 2>, 2>> tally_pairs(const MRTDataset& ds,
                                                                              const std::vector<ColumnRef>& strata,
                                                                              bool by_time) {
  std::map<StratumKey, std::array<std::array<double, 2>, 2>> counts;
  for (const auto& cluster : ds.clusters) {
    const std::size_t G = cluster.members.size();
    if (G < 2) continue;
    const std::size_t T = cluster.members.front().rows.size();
    for (std::size_t pos = 0; pos < T; ++pos) {
      for (std::size_t j = 0; j < G; ++j) {
        const auto& rj = cluster.members[j].rows[pos];
        if (!rj.available) continue;
        StratumKey key{by_time ? rj.t : 0, {}};
        for (const auto& ref : strata) key.second.push_back(ref.value(rj));
        auto& c = counts[key];
        for (std::size_t jp = 0; jp < G; ++jp) {
          if (jp == j) continue;
          const auto& rp = cluster.members[jp].rows[pos];
          if (!rp.available) continue;
          c[rj.treatment][rp.treatment] += 1.0;
        }
      }
    }
  }
  return counts;
}

}  // namespace detail

/// Empirical frequency of ordered treatment pairs at decision point `t`
/// (all decision points when empty) among focal individuals whose
/// `stratify_by` moderator values equal `stratum`. Cells are clipped into
/// (1e-6, 1 - 1e-6) and renormalized.
inline PairTable empirical_pair_frequency(const MRTDataset& ds, std::optional<int> t,
                                          const std::vector<std::string>& stratify_by = {},
                                          const std::vector<double>& stratum = {}) {
  if (stratum.size() != stratify_by.size()) throw WeightPlanError("stratum values do not match stratification columns");
  const auto refs = detail::stratum_columns(ds, stratify_by);
  const auto counts = detail::tally_pairs(ds, refs, t.has_value());
  auto it = counts.find({t.value_or(0), stratum});
  if (it == counts.end()) throw EstimationError("empty stratum: no available treatment pairs match");
  return clip_pair_frequencies(it->second);
}

/// A WeightPlan resolved against one dataset.
class BoundWeightPlan {
 public:
  BoundWeightPlan(const WeightPlan& plan, const MRTDataset& ds) : plan_(plan) {
    switch (plan_.numerator) {
      case WeightPlan::Numerator::constant:
        check_probability(plan_.constant, "constant numerator");
        break;
      case WeightPlan::Numerator::column: {
        if (auto i = ds.moderator_index(plan_.column)) column_ = ColumnRef{true, *i};
        else if (auto c = ds.control_index(plan_.column)) column_ = ColumnRef{false, *c};
        else throw WeightPlanError("numerator column '" + plan_.column + "' not found");
        break;
      }
      case WeightPlan::Numerator::empirical_pair: {
        strata_ = detail::stratum_columns(ds, plan_.stratify_by);
        for (const auto& [key, counts] : detail::tally_pairs(ds, strata_, plan_.by_time)) {
          empirical_.emplace(key, clip_pair_frequencies(counts));
        }
        break;
      }
    }
  }

  /// Plans that need no dataset (constant numerators).
  explicit BoundWeightPlan(const WeightPlan& plan) : BoundWeightPlan(plan, MRTDataset{}) {}

  const WeightPlan& plan() const { return plan_; }

  /// p~(1 | S_t) for direct estimators.
  double tilde_p1(const ObservationRow& row) const {
    switch (plan_.numerator) {
      case WeightPlan::Numerator::constant: return plan_.constant;
      case WeightPlan::Numerator::column: {
        const double v = column_->value(row);
        check_probability(v, "numerator column '" + plan_.column + "'");
        return v;
      }
      case WeightPlan::Numerator::empirical_pair:
        throw WeightPlanError("empirical pair numerators apply to the indirect estimator only");
    }
    return plan_.constant;
  }

  /// p~(a, a' | S_t) for a focal row and its partner.
  PairTable pair_numerator(const ObservationRow& focal, const ObservationRow& other) const {
    switch (plan_.numerator) {
      case WeightPlan::Numerator::constant:
        return PairTable::factorized(plan_.constant, plan_.constant);
      case WeightPlan::Numerator::column:
        return PairTable::factorized(tilde_p1(focal), tilde_p1(other));
      case WeightPlan::Numerator::empirical_pair: {
        detail::StratumKey key{plan_.by_time ? focal.t : 0, {}};
        for (const auto& ref : strata_) key.second.push_back(ref.value(focal));
        auto it = empirical_.find(key);
        if (it == empirical_.end()) throw EstimationError("empty stratum for focal row at t=" + std::to_string(focal.t));
        return it->second;
      }
    }
    return {};
  }

 private:
  static void check_probability(double v, const std::string& what) {
    if (!(v > 0.0 && v < 1.0)) {
      throw WeightPlanError(what + " must lie in (0,1), got " + detail::format_double(v));
    }
  }

  WeightPlan plan_;
  std::optional<ColumnRef> column_;
  std::vector<ColumnRef> strata_;
  std::map<detail::StratumKey, PairTable> empirical_;
};

/// W_t = p~(A|S) / p(A|H).
inline double marginal_weight(const ObservationRow& row, const BoundWeightPlan& plan) {
  const double num1 = plan.tilde_p1(row);
  return row.treatment == 1 ? num1 / row.rand_prob : (1.0 - num1) / (1.0 - row.rand_prob);
}

/// p~(A_j, A_j' | S) / p(A_j, A_j' | H). The long format carries marginal
/// probabilities only, so the denominator must factorize.
inline double pair_weight(const ObservationRow& focal, const ObservationRow& other, const BoundWeightPlan& plan) {
  if (focal.cluster_id != other.cluster_id || focal.t != other.t) {
    throw PairingError("pair rows must share cluster and decision point");
  }
  if (focal.individual_id == other.individual_id) throw PairingError("pair rows must come from different individuals");
  if (!plan.plan().independent) {
    throw WeightPlanError("joint randomization probabilities are not available; set independent=true");
  }
  const double num = plan.pair_numerator(focal, other)(focal.treatment, other.treatment);
  const double pj = focal.treatment ? focal.rand_prob : 1.0 - focal.rand_prob;
  const double pk = other.treatment ? other.rand_prob : 1.0 - other.rand_prob;
  return num / (pj * pk);
}

// ---- reference policies ----------------------------------------------------

/// Distribution of treatments t+1..t+delta-1 defining the excursion.
struct ReferencePolicy {
  enum class Kind { observed, always_treat, always_control, fixed };
  Kind kind = Kind::observed;
  std::vector<double> probs;  // pi_u(1) for u = t+1, t+2, ... (Kind::fixed)

  bool operator==(const ReferencePolicy&) const = default;

  static ReferencePolicy observed() { return {}; }
  static ReferencePolicy always_treat() { return {Kind::always_treat, {}}; }
  static ReferencePolicy always_control() { return {Kind::always_control, {}}; }
  static ReferencePolicy fixed(std::vector<double> p) { return {Kind::fixed, std::move(p)}; }

  std::string label() const {
    switch (kind) {
      case Kind::observed: return "observed";
      case Kind::always_treat: return "always_treat";
      case Kind::always_control: return "always_control";
      case Kind::fixed: return "fixed";
    }
    return "observed";
  }

  void check(int delta) const {
    if (kind != Kind::fixed) return;
    if (probs.size() + 1 < static_cast<std::size_t>(delta)) {
      throw SpecError("fixed policy needs " + std::to_string(delta - 1) + " probabilities");
    }
    for (double p : probs)
      if (!(p >= 0.0 && p <= 1.0)) throw SpecError("fixed policy probabilities must lie in [0,1]");
  }

  /// pi(1) at window offset `offset` (0 for u = t+1). Observed returns p.
  double treat_probability(std::size_t offset, double rand_prob) const {
    switch (kind) {
      case Kind::observed: return rand_prob;
      case Kind::always_treat: return 1.0;
      case Kind::always_control: return 0.0;
      case Kind::fixed: return probs.at(offset);
    }
    return rand_prob;
  }
};

/// Rows u = t+1..t+delta-1 following position `pos`.
inline std::span<const ObservationRow> lag_window(const Individual& ind, std::size_t pos, int delta) {
  const std::size_t need = static_cast<std::size_t>(delta - 1);
  if (pos + need >= ind.rows.size()) {
    throw LagWindowError("individual " + ind.id + " at t=" + std::to_string(ind.rows[pos].t) + ": lag window needs " +
                         std::to_string(need) + " future decision point(s)");
  }
  std::span<const ObservationRow> window(ind.rows.data() + pos + 1, need);
  for (std::size_t i = 0; i < need; ++i) {
    if (window[i].t != ind.rows[pos].t + static_cast<int>(i) + 1) {
      throw LagWindowError("individual " + ind.id + " at t=" + std::to_string(ind.rows[pos].t) +
                           ": missing decision point " + std::to_string(ind.rows[pos].t + static_cast<int>(i) + 1));
    }
  }
  return window;
}

/// W_{t,delta} = prod_u pi(A_u|H_u) / p(A_u|H_u); exactly 1 for an empty
/// window or the observed-distribution policy.
inline double excursion_weight(std::span<const ObservationRow> window, const ReferencePolicy& policy) {
  if (policy.kind == ReferencePolicy::Kind::observed) return 1.0;
  double w = 1.0;
  for (std::size_t i = 0; i < window.size(); ++i) {
    const auto& r = window[i];
    const double pi1 = policy.treat_probability(i, r.rand_prob);
    w *= r.treatment ? pi1 / r.rand_prob : (1.0 - pi1) / (1.0 - r.rand_prob);
  }
  return w;
}

// ---- centered design rows --------------------------------------------------

struct DesignRow {
  std::vector<double> controls;  // g_t(H_t)
  std::vector<double> centered;  // centered moderator block
};

/// [g, (A - p~(1|S)) f].
inline DesignRow direct_design_row(const ObservationRow& row, std::span<const double> f, std::span<const double> g,
                                   double tilde_p1) {
  DesignRow out{{g.begin(), g.end()}, {}};
  const double c = row.treatment - tilde_p1;
  for (double v : f) out.centered.push_back(c * v);
  return out;
}

/// [g, (1 - A_j)(A_j' - p~*(1|S)) f].
inline DesignRow indirect_design_row(const ObservationRow& focal, const ObservationRow& other,
                                     std::span<const double> f, std::span<const double> g, double pstar) {
  if (focal.cluster_id != other.cluster_id || focal.t != other.t) {
    throw PairingError("pair rows must share cluster and decision point");
  }
  if (focal.individual_id == other.individual_id) throw PairingError("pair rows must come from different individuals");
  DesignRow out{{g.begin(), g.end()}, {}};
  const double c = (1 - focal.treatment) * (other.treatment - pstar);
  for (double v : f) out.centered.push_back(c * v);
  return out;
}

/// Dataset-level convenience wrapper around the row builders.
class DesignContext {
 public:
  DesignContext(const MRTDataset& ds, const ModelSpec& spec, const WeightPlan& plan)
      : f_(spec.moderators, ds, FeatureMap::Role::moderator),
        g_(spec.controls, ds, FeatureMap::Role::control),
        plan_(plan, ds) {}

  const FeatureMap& f() const { return f_; }
  const FeatureMap& g() const { return g_; }
  const BoundWeightPlan& plan() const { return plan_; }

  DesignRow direct_row(const Cluster& c, std::size_t member, std::size_t pos) const {
    std::vector<double> fv(f_.size()), gv(g_.size());
    f_.evaluate(c, member, pos, fv);
    g_.evaluate(c, member, pos, gv);
    const auto& row = c.members[member].rows[pos];
    return direct_design_row(row, fv, gv, plan_.tilde_p1(row));
  }

  DesignRow indirect_row(const Cluster& c, std::size_t focal, std::size_t other, std::size_t pos) const {
    std::vector<double> fv(f_.size()), gv(g_.size());
    f_.evaluate(c, focal, pos, fv);
    g_.evaluate(c, focal, pos, gv);
    const auto& rj = c.members[focal].rows[pos];
    const auto& rk = c.members[other].rows[pos];
    return indirect_design_row(rj, rk, fv, gv, p_star(plan_.pair_numerator(rj, rk)));
  }

 private:
  FeatureMap f_;
  FeatureMap g_;
  BoundWeightPlan plan_;
};

}  // namespace excursion
