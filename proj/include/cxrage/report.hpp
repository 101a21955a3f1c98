#pragma once

#include <string>
#include <vector>

#include "cxrage/trainer.hpp"

namespace cxrage {

enum class Direction { OLDER, YOUNGER };

struct DisparityRow {
    std::string image_index;
    double real_age = 0.0;
    double predicted_age = 0.0;
    double gap_years = 0.0;  // predicted - real
    Direction direction = Direction::OLDER;
};

// Rows where |predicted - real| is strictly greater than threshold_years,
// sorted by |gap| descending; ties keep the input order.
std::vector<DisparityRow> disparity_rows(const std::vector<std::string>& image_indices,
                                         const std::vector<double>& real_ages,
                                         const std::vector<double>& predicted_ages,
                                         double threshold_years);

// "epoch,train_loss,val_loss,val_r2" header plus one row per epoch, values
// printed with 9 significant digits.
std::string epoch_stats_csv(const std::vector<EpochStats>& history);

// "image_index,real_age,predicted_age,gap_years,direction" header plus rows.
std::string disparity_csv(const std::vector<DisparityRow>& rows);

}  // namespace cxrage
