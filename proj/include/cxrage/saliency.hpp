#pragma once

#include <cstdint>
#include <vector>

#include "cxrage/dataset.hpp"
#include "cxrage/network.hpp"
#include "cxrage/tensor.hpp"

namespace cxrage {

struct SaliencyMap {
    Tensor<double> values;  // HxW, nonnegative
    double raw_max = 0.0;   // maximum before any normalization
};

struct RgbRaster {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;  // 3 bytes per pixel, row major
};

// Gradient of the sigmoid output with respect to every input pixel for a
// single image shaped 1xCxHxW. Parameters stay fixed.
template <typename T>
Tensor<T> input_gradient(const Network<T>& net, const Tensor<T>& image);

// Per-pixel maximum over channels of the absolute gradient. For a single
// channel this is the elementwise absolute value.
template <typename T>
SaliencyMap saliency_map(const Tensor<T>& grad);

// Scales values so the maximum becomes 1; identically zero maps pass
// through unchanged. raw_max keeps the pre-normalization maximum, so the
// operation is idempotent.
SaliencyMap normalize_map(const SaliencyMap& map);

// Blends the grayscale image with a blue-to-red colormap at alpha 0.5.
// Map values are read as colormap coordinates and clamped to [0,1].
RgbRaster overlay(const Tensor<double>& image, const SaliencyMap& map);

// mean(values inside region) / max(1e-12, mean(values outside region)).
// The region and its complement must both be nonempty.
double region_saliency_ratio(const SaliencyMap& map, const Rect& region);

extern template Tensor<float> input_gradient<float>(const Network<float>&, const Tensor<float>&);
extern template Tensor<double> input_gradient<double>(const Network<double>&,
                                                      const Tensor<double>&);
extern template SaliencyMap saliency_map<float>(const Tensor<float>&);
extern template SaliencyMap saliency_map<double>(const Tensor<double>&);

}  // namespace cxrage
