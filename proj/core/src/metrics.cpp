#include "mmfusion/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "mmfusion/errors.hpp"

namespace mmf {

namespace {

void check_classes(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) {
        throw ValueError("auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
    }
    std::size_t pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw ValueError("auc: labels must be 0/1");
        pos += static_cast<std::size_t>(y);
    }
    if (pos == 0 || pos == labels.size()) {
        throw UndefinedMetricError("auc: undefined when only one class is present");
    }
}

}  // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_classes(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        // Midrank of the tie group [i, j), 1-based ranks.
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                rank_sum_pos += midrank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auc_trapezoid(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_classes(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double n_pos = 0, n_neg = 0;
    for (int y : labels) (y == 1 ? n_pos : n_neg) += 1.0;

    double area = 0.0;
    double tp = 0.0, fp = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        double d_tp = 0.0, d_fp = 0.0;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? d_tp : d_fp) += 1.0;
            ++j;
        }
        // One ROC vertex per distinct threshold; ties advance diagonally and
        // the trapezoid awards them half credit, matching pair counting.
        const double tpr0 = tp / n_pos, fpr0 = fp / n_neg;
        tp += d_tp;
        fp += d_fp;
        const double tpr1 = tp / n_pos, fpr1 = fp / n_neg;
        area += 0.5 * (tpr0 + tpr1) * (fpr1 - fpr0);
        i = j;
    }
    return area;
}

}  // namespace mmf
