#include "cxrage/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace cxrage {

namespace {

void check_pair_lengths(const char* op, std::size_t a, std::size_t b, std::size_t min_n) {
    if (a != b)
        throw std::invalid_argument(std::string(op) + ": length mismatch (" + std::to_string(a) +
                                    " vs " + std::to_string(b) + ")");
    if (a < min_n)
        throw std::invalid_argument(std::string(op) + ": need at least " + std::to_string(min_n) +
                                    " samples, got " + std::to_string(a));
}

}  // namespace

double r_squared(const std::vector<double>& preds, const std::vector<double>& targets) {
    check_pair_lengths("r_squared", preds.size(), targets.size(), 2);
    bool all_equal = true;
    for (std::size_t i = 1; i < targets.size() && all_equal; ++i)
        all_equal = targets[i] == targets[0];
    if (all_equal)
        throw std::invalid_argument("r_squared: targets are all equal (zero total sum of squares)");

    double mean = 0.0;
    for (double t : targets) mean += t;
    mean /= static_cast<double>(targets.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        ss_res += (targets[i] - preds[i]) * (targets[i] - preds[i]);
        ss_tot += (targets[i] - mean) * (targets[i] - mean);
    }
    return 1.0 - ss_res / ss_tot;
}

double recall_within(const std::vector<double>& pred_ages, const std::vector<double>& real_ages,
                     double k) {
    check_pair_lengths("recall_within", pred_ages.size(), real_ages.size(), 1);
    if (!(k > 0.0)) throw std::invalid_argument("recall_within: k must be positive");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred_ages.size(); ++i)
        if (std::abs(pred_ages[i] - real_ages[i]) <= k) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred_ages.size());
}

double mean_signed_error(const std::vector<double>& pred_ages,
                         const std::vector<double>& real_ages) {
    check_pair_lengths("mean_signed_error", pred_ages.size(), real_ages.size(), 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred_ages.size(); ++i) acc += pred_ages[i] - real_ages[i];
    return acc / static_cast<double>(pred_ages.size());
}

template <typename T>
MetricsReport evaluate(const Network<T>& net, const std::vector<LabeledImage>& slice,
                       ViewSelector view) {
    if (slice.empty()) throw std::invalid_argument("evaluate: empty dataset slice");
    const NetworkSpec& spec = net.spec;
    constexpr std::size_t kBatch = 32;

    std::vector<double> preds_norm, targets_norm;
    preds_norm.reserve(slice.size());
    targets_norm.reserve(slice.size());
    for (std::size_t start = 0; start < slice.size(); start += kBatch) {
        const std::size_t b = std::min(kBatch, slice.size() - start);
        Tensor<T> batch({b, spec.input_channels, spec.input_h, spec.input_w});
        const std::size_t img_sz = spec.input_channels * spec.input_h * spec.input_w;
        for (std::size_t i = 0; i < b; ++i) {
            const Tensor<double>& px = slice[start + i].pixels;
            if (px.numel() != img_sz)
                throw std::invalid_argument("evaluate: image " + shape_str(px.shape) +
                                            " does not match the network input");
            for (std::size_t j = 0; j < img_sz; ++j)
                batch.data[i * img_sz + j] = static_cast<T>(px.data[j]);
        }
        const Tensor<T> out = forward(net, batch);
        for (std::size_t i = 0; i < b; ++i) {
            preds_norm.push_back(static_cast<double>(out.data[i]));
            targets_norm.push_back(slice[start + i].age_normalized);
        }
    }

    std::vector<double> pred_years, real_years;
    pred_years.reserve(preds_norm.size());
    real_years.reserve(preds_norm.size());
    for (std::size_t i = 0; i < preds_norm.size(); ++i) {
        pred_years.push_back(preds_norm[i] * 90.0);
        real_years.push_back(slice[i].age_years);
    }

    MetricsReport report;
    report.n = slice.size();
    report.view = view;
    double mse = 0.0;
    for (std::size_t i = 0; i < preds_norm.size(); ++i)
        mse += (preds_norm[i] - targets_norm[i]) * (preds_norm[i] - targets_norm[i]);
    report.mse_normalized = mse / static_cast<double>(preds_norm.size());
    report.r_squared = r_squared(preds_norm, targets_norm);
    report.recall_pm4 = recall_within(pred_years, real_years, 4.0);
    report.recall_pm9 = recall_within(pred_years, real_years, 9.0);
    report.mean_signed_error_years = mean_signed_error(pred_years, real_years);
    return report;
}

std::string view_name(ViewSelector view) {
    switch (view) {
        case ViewSelector::PA:
            return "PA";
        case ViewSelector::AP:
            return "AP";
        default:
            return "BOTH";
    }
}

std::string metrics_report_json(const MetricsReport& report) {
    nlohmann::json j;
    j["n"] = report.n;
    j["mse_normalized"] = report.mse_normalized;
    j["r_squared"] = report.r_squared;
    j["recall_pm4"] = report.recall_pm4;
    j["recall_pm9"] = report.recall_pm9;
    j["mean_signed_error_years"] = report.mean_signed_error_years;
    j["view"] = view_name(report.view);
    return j.dump(2) + "\n";
}

template MetricsReport evaluate<float>(const Network<float>&, const std::vector<LabeledImage>&,
                                       ViewSelector);
template MetricsReport evaluate<double>(const Network<double>&, const std::vector<LabeledImage>&,
                                        ViewSelector);

}  // namespace cxrage
