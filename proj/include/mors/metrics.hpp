#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mors/common.hpp"

namespace mors::metrics {

// Confusion matrix indexed [true][predicted]; macro aggregates are unweighted
// means over classes. A class with no true samples gets recall 0 and is
// flagged rather than producing NaN, so macro aggregates stay total.
struct Metrics {
    std::vector<std::vector<std::size_t>> confusion;
    std::vector<double> precision, recall, f1;
    double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
    double accuracy = 0;
    double loss = 0;
    std::vector<std::size_t> empty_classes;
};

inline Metrics from_confusion(std::vector<std::vector<std::size_t>> confusion, double loss = 0.0) {
    const std::size_t k = confusion.size();
    for (const auto& row : confusion) {
        if (row.size() != k) throw DimensionError("metrics: confusion matrix must be square");
    }
    Metrics m;
    m.confusion = std::move(confusion);
    m.loss = loss;
    m.precision.assign(k, 0.0);
    m.recall.assign(k, 0.0);
    m.f1.assign(k, 0.0);

    std::size_t total = 0, correct = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t row_sum = 0, col_sum = 0;
        for (std::size_t j = 0; j < k; ++j) {
            row_sum += m.confusion[c][j];
            col_sum += m.confusion[j][c];
            total += m.confusion[c][j];
        }
        const std::size_t tp = m.confusion[c][c];
        correct += tp;
        m.precision[c] = col_sum ? static_cast<double>(tp) / static_cast<double>(col_sum) : 0.0;
        if (row_sum) {
            m.recall[c] = static_cast<double>(tp) / static_cast<double>(row_sum);
        } else {
            m.recall[c] = 0.0;
            m.empty_classes.push_back(c);
        }
        const double pr = m.precision[c] + m.recall[c];
        m.f1[c] = pr > 0 ? 2.0 * m.precision[c] * m.recall[c] / pr : 0.0;
    }
    for (std::size_t c = 0; c < k; ++c) {
        m.macro_precision += m.precision[c];
        m.macro_recall += m.recall[c];
        m.macro_f1 += m.f1[c];
    }
    m.macro_precision /= static_cast<double>(k);
    m.macro_recall /= static_cast<double>(k);
    m.macro_f1 /= static_cast<double>(k);
    m.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    return m;
}

inline Metrics from_pairs(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                          std::size_t k, double loss = 0.0) {
    if (y_true.size() != y_pred.size()) throw DimensionError("metrics: label/prediction size mismatch");
    std::vector<std::vector<std::size_t>> conf(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const int t = y_true[i], p = y_pred[i];
        if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= k || static_cast<std::size_t>(p) >= k) {
            throw DataError("metrics: label out of range at sample " + std::to_string(i));
        }
        ++conf[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    }
    return from_confusion(std::move(conf), loss);
}

}  // namespace mors::metrics
