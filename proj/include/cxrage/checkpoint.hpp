#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cxrage/network.hpp"
#include "cxrage/tensor.hpp"

namespace cxrage {

struct CheckpointParam {
    std::string name;
    Shape shape;
    std::vector<std::uint8_t> bytes;  // little-endian scalars
};

// File layout: "AGSC" magic, u32 LE format_version, u64 LE header length,
// JSON header (spec, precision, best_val_loss, epoch, parameter names and
// shapes), then the raw parameter arrays concatenated in header order.
struct Checkpoint {
    NetworkSpec spec;
    std::vector<CheckpointParam> params;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t epoch = 0;
    std::uint32_t format_version = 1;
    int precision = 32;  // bits per parameter scalar
};

template <typename T>
Checkpoint make_checkpoint(const Network<T>& net, double best_val_loss, std::size_t epoch);

// Requires the checkpoint precision to match T; validates names and shapes
// against a network freshly built from the stored spec.
template <typename T>
Network<T> checkpoint_to_network(const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// Throws std::runtime_error with distinct messages for bad magic,
// unsupported version, and truncation.
Checkpoint load_checkpoint(const std::string& path);

extern template Checkpoint make_checkpoint<float>(const Network<float>&, double, std::size_t);
extern template Checkpoint make_checkpoint<double>(const Network<double>&, double, std::size_t);
extern template Network<float> checkpoint_to_network<float>(const Checkpoint&);
extern template Network<double> checkpoint_to_network<double>(const Checkpoint&);

}  // namespace cxrage
