#include "hsic/metrics.hpp"

#include <algorithm>
#include <iterator>

#include "hsic/error.hpp"

namespace hsic::metrics {

namespace {
LabelSet sorted_unique(LabelSet s) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
}
}  // namespace

double multilabel_accuracy(const std::vector<LabelSet>& pred, const std::vector<LabelSet>& truth) {
    if (pred.size() != truth.size()) throw InvalidArgument("multilabel_accuracy: prediction and truth lengths differ");
    if (pred.empty()) throw InvalidArgument("multilabel_accuracy: no samples");
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const LabelSet a = sorted_unique(pred[i]);
        const LabelSet b = sorted_unique(truth[i]);
        LabelSet inter, uni;
        std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
        std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
        total += uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    }
    return 100.0 * total / static_cast<double>(pred.size());
}

double hamming_accuracy(const std::vector<LabelSet>& pred, const std::vector<LabelSet>& truth, int num_classes) {
    if (pred.size() != truth.size()) throw InvalidArgument("hamming_accuracy: prediction and truth lengths differ");
    if (pred.empty() || num_classes <= 0) throw InvalidArgument("hamming_accuracy: no samples or classes");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const LabelSet a = sorted_unique(pred[i]);
        const LabelSet b = sorted_unique(truth[i]);
        for (int c = 1; c <= num_classes; ++c) {
            const bool in_a = std::binary_search(a.begin(), a.end(), c);
            const bool in_b = std::binary_search(b.begin(), b.end(), c);
            agree += in_a == in_b;
        }
    }
    return 100.0 * static_cast<double>(agree) / static_cast<double>(pred.size() * static_cast<std::size_t>(num_classes));
}

double singlelabel_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size()) throw InvalidArgument("singlelabel_accuracy: prediction and truth lengths differ");
    if (pred.empty()) throw InvalidArgument("singlelabel_accuracy: no samples");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
    return 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
}

MultiMetric parse_multi_metric(const std::string& s) {
    if (s == "jaccard") return MultiMetric::jaccard;
    if (s == "hamming") return MultiMetric::hamming;
    throw InvalidArgument("unknown multi-label metric '" + s + "'");
}

std::string to_string(MultiMetric m) { return m == MultiMetric::jaccard ? "jaccard" : "hamming"; }

}  // namespace hsic::metrics
