#pragma once

#include <vector>

namespace mmf {

// Mann-Whitney AUC with half credit for ties (midrank computation). This is
// the normative implementation. Throws UndefinedMetricError unless both
// classes are present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Trapezoidal integration of the ROC step curve, grouping tied scores. Must
// agree with auc() to floating-point accuracy.
double auc_trapezoid(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace mmf
