#include "cxrage/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>

#include "cxrage/metrics.hpp"

namespace cxrage {

namespace {

void shuffle_indices(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

template <typename T>
Tensor<T> assemble_batch(const NetworkSpec& spec, const std::vector<LabeledImage>& images,
                         const std::vector<std::size_t>& order, std::size_t start,
                         std::size_t count) {
    const std::size_t per = spec.input_channels * spec.input_h * spec.input_w;
    Tensor<T> batch({count, spec.input_channels, spec.input_h, spec.input_w});
    for (std::size_t b = 0; b < count; ++b) {
        const LabeledImage& img = images[order[start + b]];
        if (img.pixels.numel() != per)
            throw std::invalid_argument("image " + std::to_string(order[start + b]) +
                                        " has shape " + shape_str(img.pixels.shape) +
                                        ", the network expects " +
                                        std::to_string(spec.input_channels) + "x" +
                                        std::to_string(spec.input_h) + "x" +
                                        std::to_string(spec.input_w));
        for (std::size_t k = 0; k < per; ++k)
            batch.data[b * per + k] = static_cast<T>(img.pixels.data[k]);
    }
    return batch;
}

template <typename T>
Tensor<T> assemble_targets(const std::vector<LabeledImage>& images,
                           const std::vector<std::size_t>& order, std::size_t start,
                           std::size_t count) {
    Tensor<T> t({count, 1});
    for (std::size_t b = 0; b < count; ++b)
        t.data[b] = static_cast<T>(images[order[start + b]].age_normalized);
    return t;
}

template <typename T>
bool all_targets_equal(const Tensor<T>& t) {
    for (const T& v : t.data)
        if (v != t.data[0]) return false;
    return true;
}

// Validation metrics on the normalized scale, batched to bound memory.
template <typename T>
void validation_stats(const Network<T>& model, const std::vector<LabeledImage>& val,
                      std::size_t batch_size, double& val_loss, double& val_r2) {
    std::vector<std::size_t> order(val.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> preds, targets;
    preds.reserve(val.size());
    targets.reserve(val.size());
    for (std::size_t start = 0; start < val.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, val.size() - start);
        Tensor<T> batch = assemble_batch<T>(model.spec, val, order, start, n);
        Tensor<T> out = forward(model, batch);
        for (std::size_t b = 0; b < n; ++b) {
            preds.push_back(static_cast<double>(out.data[b]));
            targets.push_back(val[start + b].age_normalized);
        }
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double d = preds[i] - targets[i];
        sq += d * d;
    }
    val_loss = sq / static_cast<double>(preds.size());
    // r_squared rejects fewer than two samples or all-equal targets.
    bool all_equal = true;
    for (std::size_t i = 1; i < targets.size(); ++i)
        if (targets[i] != targets[0]) {
            all_equal = false;
            break;
        }
    if (preds.size() < 2 || all_equal)
        val_r2 = std::numeric_limits<double>::quiet_NaN();
    else
        val_r2 = r_squared(preds, targets);
}

}  // namespace

void TrainConfig::validate() const {
    if (!std::isfinite(learning_rate) || learning_rate < 0.0)
        throw std::invalid_argument("learning_rate must be a finite non-negative real, got " +
                                    std::to_string(learning_rate));
    if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
    if (max_epochs == 0) throw std::invalid_argument("max_epochs must be at least 1");
    if (patience == 0) throw std::invalid_argument("patience must be at least 1");
    if (patience >= max_epochs)
        throw std::invalid_argument("patience (" + std::to_string(patience) +
                                    ") must be smaller than max_epochs (" +
                                    std::to_string(max_epochs) + ")");
    if (!std::isfinite(min_delta) || min_delta < 0.0)
        throw std::invalid_argument("min_delta must be a finite non-negative real, got " +
                                    std::to_string(min_delta));
}

bool has_plateaued(const std::vector<EpochStats>& history, std::size_t patience,
                   double min_delta) {
    if (patience == 0 || history.size() <= patience) return false;
    double best_before = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + patience < history.size(); ++i)
        best_before = std::min(best_before, history[i].val_loss);
    for (std::size_t i = history.size() - patience; i < history.size(); ++i)
        if (history[i].val_loss < best_before - min_delta) return false;
    return true;
}

template <typename T>
TrainResult train(const Network<T>& net, const SplitDataset& data, const TrainConfig& config,
                  std::ostream* log) {
    config.validate();
    if (data.train.empty()) throw std::invalid_argument("training split is empty");
    if (data.val.empty()) throw std::invalid_argument("validation split is empty");

    Network<T> model = net;
    std::vector<std::vector<T>> velocity(model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i)
        velocity[i].assign(model.params[i].tensor.numel(), T(0));

    const T momentum = static_cast<T>(0.9);
    const T lr = static_cast<T>(config.learning_rate);

    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    result.best = make_checkpoint(model, std::numeric_limits<double>::infinity(), 0);

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        shuffle_indices(order, rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        bool diverged = false;

        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t n = std::min(config.batch_size, order.size() - start);
            Tensor<T> targets = assemble_targets<T>(data.train, order, start, n);
            if (config.objective == Objective::R2 && (n < 2 || all_targets_equal(targets))) {
                if (log)
                    *log << "epoch " << epoch << ": skipped a batch of " << n
                         << " (targets unusable under the R2 objective)\n";
                continue;
            }
            Tensor<T> batch = assemble_batch<T>(model.spec, data.train, order, start, n);

            Graph<T> g;
            ForwardHandles h = build_forward(g, model, std::move(batch), true, false);
            NodeId target_node = g.input(std::move(targets), false);
            NodeId loss = config.objective == Objective::MSE
                              ? g.mse_loss(h.output, target_node)
                              : g.r2_objective_loss(h.output, target_node);
            const double loss_value = static_cast<double>(g.value(loss).data[0]);
            if (!std::isfinite(loss_value)) {
                diverged = true;
                if (log)
                    *log << "epoch " << epoch
                         << ": non-finite training loss, aborting (divergence)\n";
                break;
            }
            g.backward(loss);
            for (std::size_t i = 0; i < model.params.size(); ++i) {
                const Tensor<T>& grad = g.grad(h.params[i]);
                std::vector<T>& vel = velocity[i];
                std::vector<T>& p = model.params[i].tensor.data;
                for (std::size_t k = 0; k < p.size(); ++k) {
                    vel[k] = momentum * vel[k] + grad.data[k];
                    p[k] -= lr * vel[k];
                }
            }
            loss_sum += loss_value * static_cast<double>(n);
            seen += n;
        }

        if (diverged) {
            result.diverged = true;
            break;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = seen > 0 ? loss_sum / static_cast<double>(seen)
                                    : std::numeric_limits<double>::quiet_NaN();
        validation_stats(model, data.val, config.batch_size, stats.val_loss, stats.val_r2);
        result.history.push_back(stats);

        if (log)
            *log << "epoch " << epoch << ": train_loss=" << stats.train_loss
                 << " val_loss=" << stats.val_loss << " val_r2=" << stats.val_r2 << "\n";

        if (stats.val_loss < result.best.best_val_loss)
            result.best = make_checkpoint(model, stats.val_loss, epoch);

        if (has_plateaued(result.history, config.patience, config.min_delta)) {
            if (log)
                *log << "early stop after epoch " << epoch << " (no val_loss improvement in the last "
                     << config.patience << " epochs)\n";
            break;
        }
    }
    return result;
}

template TrainResult train<float>(const Network<float>&, const SplitDataset&, const TrainConfig&,
                                  std::ostream*);
template TrainResult train<double>(const Network<double>&, const SplitDataset&, const TrainConfig&,
                                   std::ostream*);

}  // namespace cxrage
