#pragma once

namespace estnma {

double normal_cdf(double x);

/// Inverse of the standard normal CDF. Accurate to ~1e-15 on (0, 1).
double normal_quantile(double p);

/// Two-sided critical value for a confidence level in (0, 1),
/// i.e. the quantile at (1 + level) / 2.
double critical_value(double level);

}  // namespace estnma
