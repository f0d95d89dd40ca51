#include "aspm/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace aspm {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double ratio(double num, double den) { return den == 0.0 ? kNaN : num / den; }
}  // namespace

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> preds) {
  if (labels.size() != preds.size() || labels.empty())
    throw std::invalid_argument("confusion: labels/preds must be equal-sized and non-empty");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool a = labels[i] != 0;
    const bool p = preds[i] != 0;
    if (a && p) ++cm.tp;
    else if (!a && p) ++cm.fp;
    else if (a && !p) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

MetricSet metrics(const ConfusionMatrix& cm) {
  const double tp = static_cast<double>(cm.tp);
  const double fp = static_cast<double>(cm.fp);
  const double fn = static_cast<double>(cm.fn);
  const double tn = static_cast<double>(cm.tn);
  const double n = tp + fp + fn + tn;
  if (n == 0.0) throw std::invalid_argument("metrics: empty confusion matrix");

  MetricSet m;
  m.accuracy = (tp + tn) / n;
  m.sensitivity = ratio(tp, tp + fn);
  m.specificity = ratio(tn, tn + fp);
  m.ppv = ratio(tp, tp + fp);

  const double p_o = m.accuracy;
  const double p_e = ((tp + fn) * (tp + fp) + (tn + fp) * (tn + fn)) / (n * n);
  m.kappa = ratio(p_o - p_e, 1.0 - p_e);
  return m;
}

double kappa_score(std::span<const int> labels, std::span<const int> preds) {
  return metrics(confusion(labels, preds)).kappa;
}

double bayes_posterior(double prior, double sensitivity, double predicted_positive_rate) {
  if (predicted_positive_rate == 0.0) return kNaN;
  return sensitivity * prior / predicted_positive_rate;
}

Severity severity_class(double ahi) {
  if (ahi < 0.0 || !std::isfinite(ahi)) throw std::invalid_argument("severity_class: AHI must be >= 0");
  if (ahi < 5.0) return Severity::normal;
  if (ahi < 15.0) return Severity::mild;
  if (ahi < 30.0) return Severity::moderate;
  return Severity::severe;
}

const char* to_string(Severity s) {
  switch (s) {
    case Severity::normal: return "normal";
    case Severity::mild: return "mild";
    case Severity::moderate: return "moderate";
    case Severity::severe: return "severe";
  }
  return "?";
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return kNaN;
  const double m = mean(v);
  double sq = 0.0;
  for (double x : v) sq += (x - m) * (x - m);
  return std::sqrt(sq / static_cast<double>(v.size() - 1));
}

AgreementStats agreement(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size())
    throw std::invalid_argument("agreement: size mismatch");
  const std::size_t n = actual.size();
  if (n < 3) throw std::invalid_argument("agreement: need at least 3 subjects");

  AgreementStats st;
  st.n = n;
  const double my = mean(actual);
  const double mx = mean(predicted);
  st.mean_predicted = mx;

  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = predicted[i] - mx;
    const double dy = actual[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  st.sxx = sxx;

  if (sxx == 0.0 || syy == 0.0) {
    st.pearson_r = kNaN;
  } else {
    st.pearson_r = sxy / std::sqrt(sxx * syy);
  }

  std::vector<double> diffs(n);
  for (std::size_t i = 0; i < n; ++i) diffs[i] = predicted[i] - actual[i];
  st.ba_bias = mean(diffs);
  double dsd = sample_sd(diffs);
  if (!std::isfinite(dsd)) dsd = 0.0;
  st.ba_loa_low = st.ba_bias - 1.96 * dsd;
  st.ba_loa_high = st.ba_bias + 1.96 * dsd;

  if (sxx == 0.0) {
    st.ols_slope = kNaN;
    st.ols_intercept = kNaN;
    st.residual_se = kNaN;
    st.conf_half.assign(n, kNaN);
    st.pred_half.assign(n, kNaN);
    return st;
  }

  st.ols_slope = sxy / sxx;
  st.ols_intercept = my - st.ols_slope * mx;

  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double fit = st.ols_intercept + st.ols_slope * predicted[i];
    ss_res += (actual[i] - fit) * (actual[i] - fit);
  }
  const double dof = static_cast<double>(n - 2);
  st.residual_se = std::sqrt(ss_res / dof);

  const boost::math::students_t tdist(dof);
  const double tq = boost::math::quantile(tdist, 0.975);

  st.conf_half.resize(n);
  st.pred_half.resize(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = predicted[i] - mx;
    const double lever = inv_n + dx * dx / sxx;
    st.conf_half[i] = tq * st.residual_se * std::sqrt(lever);
    st.pred_half[i] = tq * st.residual_se * std::sqrt(1.0 + lever);
  }
  return st;
}

}  // namespace aspm
