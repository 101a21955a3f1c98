#pragma once

#include <string>
#include <vector>

#include "cxrage/dataset.hpp"
#include "cxrage/network.hpp"

namespace cxrage {

struct MetricsReport {
    std::size_t n = 0;
    double mse_normalized = 0.0;
    double r_squared = 0.0;
    double recall_pm4 = 0.0;
    double recall_pm9 = 0.0;
    double mean_signed_error_years = 0.0;
    ViewSelector view = ViewSelector::BOTH;
};

// 1 - SS_res/SS_tot about the targets' own mean; negative for predictors
// worse than the mean. Rejects lists shorter than 2 or all-equal targets.
double r_squared(const std::vector<double>& preds, const std::vector<double>& targets);

// Fraction of samples with |pred - real| <= k (inclusive bound).
double recall_within(const std::vector<double>& pred_ages, const std::vector<double>& real_ages,
                     double k);

// Mean of (pred - real); positive means overestimation.
double mean_signed_error(const std::vector<double>& pred_ages,
                         const std::vector<double>& real_ages);

// Runs predict_age over the slice in batches and assembles every metric.
template <typename T>
MetricsReport evaluate(const Network<T>& net, const std::vector<LabeledImage>& slice,
                       ViewSelector view);

std::string view_name(ViewSelector view);
std::string metrics_report_json(const MetricsReport& report);

extern template MetricsReport evaluate<float>(const Network<float>&,
                                              const std::vector<LabeledImage>&, ViewSelector);
extern template MetricsReport evaluate<double>(const Network<double>&,
                                               const std::vector<LabeledImage>&, ViewSelector);

}  // namespace cxrage
