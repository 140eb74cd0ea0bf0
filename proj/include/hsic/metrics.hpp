#pragma once

#include <string>
#include <vector>

namespace hsic::metrics {

using LabelSet = std::vector<int>;

/// Example-based Jaccard accuracy in percent: mean of |Y∩Ŷ| / |Y∪Ŷ|, with a
/// term of 1 when both sets are empty.
double multilabel_accuracy(const std::vector<LabelSet>& pred, const std::vector<LabelSet>& truth);

/// Hamming-style accuracy in percent: fraction of (sample, class) decisions
/// that agree, over classes 1..num_classes.
double hamming_accuracy(const std::vector<LabelSet>& pred, const std::vector<LabelSet>& truth, int num_classes);

/// Percent of exact matches. Empty input is rejected.
double singlelabel_accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

enum class MultiMetric { jaccard, hamming };

MultiMetric parse_multi_metric(const std::string& s);
std::string to_string(MultiMetric m);

}  // namespace hsic::metrics
