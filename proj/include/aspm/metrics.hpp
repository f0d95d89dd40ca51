#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace aspm {

// Positive class = apneic (period level) or AHI >= threshold (subject level).
struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
};

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> preds);

// Undefined values (zero denominator) are NaN, rendered as "NaN" in reports.
struct MetricSet {
  double kappa = 0.0;
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double ppv = 0.0;
};

MetricSet metrics(const ConfusionMatrix& cm);

double kappa_score(std::span<const int> labels, std::span<const int> preds);

// P(A|P) = sens * P(A) / P(P); NaN when P(P) == 0 or sens is undefined.
double bayes_posterior(double prior, double sensitivity, double predicted_positive_rate);

enum class Severity : int { normal = 0, mild = 1, moderate = 2, severe = 3 };

Severity severity_class(double ahi);
const char* to_string(Severity s);

// Pearson r, OLS of actual on predicted with 95% confidence/prediction
// bands (t quantiles), and Bland-Altman bias / limits of agreement for
// predicted - actual.
struct AgreementStats {
  std::size_t n = 0;
  double pearson_r = 0.0;
  double ols_slope = 0.0;
  double ols_intercept = 0.0;
  double residual_se = 0.0;  // s of the OLS fit
  double mean_predicted = 0.0;
  double sxx = 0.0;  // sum of squared deviations of predicted
  double ba_bias = 0.0;
  double ba_loa_low = 0.0;
  double ba_loa_high = 0.0;
  // Half-widths evaluated at each input predicted value, same order.
  std::vector<double> conf_half;
  std::vector<double> pred_half;
};

AgreementStats agreement(std::span<const double> actual, std::span<const double> predicted);

double mean(std::span<const double> v);
double sample_sd(std::span<const double> v);

}  // namespace aspm
