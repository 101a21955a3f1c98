#include "cxrage/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cxrage/graph.hpp"

namespace cxrage {

template <typename T>
Tensor<T> input_gradient(const Network<T>& net, const Tensor<T>& image) {
    const NetworkSpec& s = net.spec;
    const Shape want{1, s.input_channels, s.input_h, s.input_w};
    if (image.shape != want)
        throw std::invalid_argument("saliency input has shape " + shape_str(image.shape) +
                                    ", the network expects " + shape_str(want));
    Graph<T> g;
    const ForwardHandles h = build_forward(g, net, image, false, true);
    g.backward(h.output);
    return g.grad(h.input);
}

template <typename T>
SaliencyMap saliency_map(const Tensor<T>& grad) {
    if (grad.rank() != 4 || grad.shape[0] != 1)
        throw std::invalid_argument("saliency expects a 1xCxHxW gradient, got " +
                                    shape_str(grad.shape));
    const std::size_t c = grad.shape[1], h = grad.shape[2], w = grad.shape[3];
    SaliencyMap map;
    map.values = Tensor<double>({h, w});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < h * w; ++i) {
            const double a = std::abs(static_cast<double>(grad.data[ci * h * w + i]));
            map.values.data[i] = std::max(map.values.data[i], a);
        }
    map.raw_max = 0.0;
    for (const double v : map.values.data) map.raw_max = std::max(map.raw_max, v);
    return map;
}

SaliencyMap normalize_map(const SaliencyMap& map) {
    SaliencyMap out = map;
    double current = 0.0;
    for (const double v : out.values.data) current = std::max(current, v);
    if (current > 0.0)
        for (double& v : out.values.data) v /= current;
    return out;
}

RgbRaster overlay(const Tensor<double>& image, const SaliencyMap& map) {
    if (image.rank() != 3 || image.shape[0] != 1)
        throw std::invalid_argument("overlay expects a 1xHxW image, got " +
                                    shape_str(image.shape));
    if (map.values.rank() != 2 || map.values.shape[0] != image.shape[1] ||
        map.values.shape[1] != image.shape[2])
        throw std::invalid_argument("overlay: map " + shape_str(map.values.shape) +
                                    " does not cover image " + shape_str(image.shape));
    const std::size_t h = image.shape[1], w = image.shape[2];
    RgbRaster raster;
    raster.height = h;
    raster.width = w;
    raster.pixels.resize(3 * h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        const double gray = std::clamp(image.data[i], 0.0, 1.0);
        const double v = std::clamp(map.values.data[i], 0.0, 1.0);
        const double rgb[3] = {0.5 * gray + 0.5 * v, 0.5 * gray, 0.5 * gray + 0.5 * (1.0 - v)};
        for (int ch = 0; ch < 3; ++ch)
            raster.pixels[3 * i + static_cast<std::size_t>(ch)] =
                static_cast<std::uint8_t>(std::lround(255.0 * rgb[ch]));
    }
    return raster;
}

double region_saliency_ratio(const SaliencyMap& map, const Rect& region) {
    if (map.values.rank() != 2)
        throw std::invalid_argument("saliency ratio expects an HxW map, got " +
                                    shape_str(map.values.shape));
    const std::size_t h = map.values.shape[0], w = map.values.shape[1];
    if (region.row1 > h || region.col1 > w || region.row0 >= region.row1 ||
        region.col0 >= region.col1)
        throw std::invalid_argument("region [" + std::to_string(region.row0) + "," +
                                    std::to_string(region.col0) + ")x[" +
                                    std::to_string(region.row1) + "," +
                                    std::to_string(region.col1) + ") does not fit a " +
                                    std::to_string(h) + "x" + std::to_string(w) + " map");
    const std::size_t inside_n = region.area();
    if (inside_n >= h * w)
        throw std::invalid_argument("region covers the whole map, nothing to compare against");
    double inside = 0.0, outside = 0.0;
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const double v = map.values.data[r * w + c];
            if (region.contains(r, c))
                inside += v;
            else
                outside += v;
        }
    const double mean_in = inside / static_cast<double>(inside_n);
    const double mean_out = outside / static_cast<double>(h * w - inside_n);
    return mean_in / std::max(1e-12, mean_out);
}

template Tensor<float> input_gradient<float>(const Network<float>&, const Tensor<float>&);
template Tensor<double> input_gradient<double>(const Network<double>&, const Tensor<double>&);
template SaliencyMap saliency_map<float>(const Tensor<float>&);
template SaliencyMap saliency_map<double>(const Tensor<double>&);

}  // namespace cxrage
