#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "cxrage/checkpoint.hpp"
#include "cxrage/dataset.hpp"
#include "cxrage/network.hpp"

namespace cxrage {

enum class Objective { MSE, R2 };
enum class Precision { F32, F64 };

struct TrainConfig {
    Objective objective = Objective::MSE;
    double learning_rate = 0.05;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 60;
    std::size_t patience = 10;
    double min_delta = 1e-5;
    std::uint64_t seed = 0;
    Precision precision = Precision::F32;

    // Throws std::invalid_argument naming the violated constraint.
    void validate() const;
};

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;  // always MSE on normalized ages
    double val_r2 = 0.0;
};

// True iff the last `patience` epochs brought no val_loss below
// (best value seen before that window) - min_delta. False while the
// history is not longer than `patience`.
bool has_plateaued(const std::vector<EpochStats>& history, std::size_t patience,
                   double min_delta);

struct TrainResult {
    Checkpoint best;  // parameters of the best-val-loss epoch
    std::vector<EpochStats> history;
    bool diverged = false;
};

// Seeded SGD with momentum 0.9. Under the R2 objective, batches whose
// targets are all equal are skipped with a note to `log`. On divergence
// (non-finite batch loss) training aborts, keeping completed epochs.
template <typename T>
TrainResult train(const Network<T>& net, const SplitDataset& data, const TrainConfig& config,
                  std::ostream* log = nullptr);

extern template TrainResult train<float>(const Network<float>&, const SplitDataset&,
                                         const TrainConfig&, std::ostream*);
extern template TrainResult train<double>(const Network<double>&, const SplitDataset&,
                                          const TrainConfig&, std::ostream*);

}  // namespace cxrage
