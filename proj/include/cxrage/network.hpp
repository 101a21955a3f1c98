#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cxrage/graph.hpp"
#include "cxrage/tensor.hpp"

namespace cxrage {

enum class StemKind {
    Conv3x3,       // 3x3 stride 1 pad 1, keeps spatial dims
    Conv7x7Pooled, // 7x7 stride 2 pad 3 then 2x2 avg pool, quarters spatial dims
};

struct NetworkSpec {
    std::size_t input_h = 0;
    std::size_t input_w = 0;
    std::size_t input_channels = 1;
    std::size_t initial_channels = 0;
    std::size_t growth_rate = 0;
    std::vector<std::size_t> block_layers;
    double compression = 0.5;
    bool bottleneck = false;
    StemKind stem = StemKind::Conv3x3;
    std::uint64_t seed = 0;

    // Throws std::invalid_argument naming the violated constraint.
    void validate() const;
};

NetworkSpec dense_tiny_spec(std::uint64_t seed);
NetworkSpec dense169_shape_spec(std::uint64_t seed);
// Accepts "DENSE_TINY" or "DENSE169_SHAPE".
NetworkSpec spec_for_preset(const std::string& name, std::uint64_t seed);

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
struct Network {
    NetworkSpec spec;
    std::vector<NamedTensor<T>> params;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.tensor.numel();
        return n;
    }
};

// Deterministic Kaiming-uniform init (zero biases) seeded from spec.seed.
template <typename T>
Network<T> build_network(const NetworkSpec& spec);

struct ForwardHandles {
    NodeId input;
    std::vector<NodeId> params;  // same order as Network::params
    NodeId output;               // N x 1, strictly inside (0,1)
};

// Appends the whole forward computation to `g` and returns the handles
// needed for training (parameter nodes) and saliency (input node).
template <typename T>
ForwardHandles build_forward(Graph<T>& g, const Network<T>& net, Tensor<T> batch,
                             bool params_require_grad, bool input_requires_grad);

template <typename T>
Tensor<T> forward(const Network<T>& net, const Tensor<T>& batch);

// forward() times 90, computed in 64-bit; strictly inside (0, 90).
template <typename T>
std::vector<double> predict_age(const Network<T>& net, const Tensor<T>& batch);

extern template Network<float> build_network<float>(const NetworkSpec&);
extern template Network<double> build_network<double>(const NetworkSpec&);
extern template ForwardHandles build_forward<float>(Graph<float>&, const Network<float>&,
                                                    Tensor<float>, bool, bool);
extern template ForwardHandles build_forward<double>(Graph<double>&, const Network<double>&,
                                                     Tensor<double>, bool, bool);
extern template Tensor<float> forward<float>(const Network<float>&, const Tensor<float>&);
extern template Tensor<double> forward<double>(const Network<double>&, const Tensor<double>&);
extern template std::vector<double> predict_age<float>(const Network<float>&,
                                                       const Tensor<float>&);
extern template std::vector<double> predict_age<double>(const Network<double>&,
                                                        const Tensor<double>&);

}  // namespace cxrage
