#include "cxrage/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace cxrage {

namespace {

std::string sig9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string quoted = "\"";
    for (const char c : s) {
        if (c == '"') quoted += '"';
        quoted += c;
    }
    quoted += '"';
    return quoted;
}

}  // namespace

std::vector<DisparityRow> disparity_rows(const std::vector<std::string>& image_indices,
                                         const std::vector<double>& real_ages,
                                         const std::vector<double>& predicted_ages,
                                         double threshold_years) {
    if (image_indices.size() != real_ages.size() || real_ages.size() != predicted_ages.size())
        throw std::invalid_argument("disparity inputs have mismatched lengths: " +
                                    std::to_string(image_indices.size()) + " indices, " +
                                    std::to_string(real_ages.size()) + " real ages, " +
                                    std::to_string(predicted_ages.size()) + " predictions");
    if (!(threshold_years >= 0.0))
        throw std::invalid_argument("disparity threshold must be nonnegative, got " +
                                    std::to_string(threshold_years));
    std::vector<DisparityRow> rows;
    for (std::size_t i = 0; i < real_ages.size(); ++i) {
        const double gap = predicted_ages[i] - real_ages[i];
        if (!(std::abs(gap) > threshold_years)) continue;
        DisparityRow row;
        row.image_index = image_indices[i];
        row.real_age = real_ages[i];
        row.predicted_age = predicted_ages[i];
        row.gap_years = gap;
        row.direction = gap > 0.0 ? Direction::OLDER : Direction::YOUNGER;
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const DisparityRow& a, const DisparityRow& b) {
        return std::abs(a.gap_years) > std::abs(b.gap_years);
    });
    return rows;
}

std::string epoch_stats_csv(const std::vector<EpochStats>& history) {
    std::string out = "epoch,train_loss,val_loss,val_r2\n";
    for (const EpochStats& e : history) {
        out += std::to_string(e.epoch);
        out += ',';
        out += sig9(e.train_loss);
        out += ',';
        out += sig9(e.val_loss);
        out += ',';
        out += sig9(e.val_r2);
        out += '\n';
    }
    return out;
}

std::string disparity_csv(const std::vector<DisparityRow>& rows) {
    std::string out = "image_index,real_age,predicted_age,gap_years,direction\n";
    for (const DisparityRow& r : rows) {
        out += csv_field(r.image_index);
        out += ',';
        out += sig9(r.real_age);
        out += ',';
        out += sig9(r.predicted_age);
        out += ',';
        out += sig9(r.gap_years);
        out += ',';
        out += r.direction == Direction::OLDER ? "OLDER" : "YOUNGER";
        out += '\n';
    }
    return out;
}

}  // namespace cxrage
