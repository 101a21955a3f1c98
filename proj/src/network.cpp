#include "cxrage/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace cxrage {

namespace {

std::size_t transition_channels(double compression, std::size_t channels) {
    return static_cast<std::size_t>(std::floor(compression * static_cast<double>(channels)));
}

struct StemShape {
    std::size_t kernel, stride, padding;
    bool pooled;
};

StemShape stem_shape(StemKind kind) {
    if (kind == StemKind::Conv7x7Pooled) return {7, 2, 3, true};
    return {3, 1, 1, false};
}

}  // namespace

void NetworkSpec::validate() const {
    if (input_h == 0 || input_w == 0)
        throw std::invalid_argument("network spec: input_size dims must be positive");
    if (input_channels == 0)
        throw std::invalid_argument("network spec: input_channels must be positive");
    if (initial_channels == 0)
        throw std::invalid_argument("network spec: initial_channels must be positive");
    if (growth_rate == 0)
        throw std::invalid_argument("network spec: growth_rate must be positive");
    if (block_layers.empty())
        throw std::invalid_argument("network spec: block_layers must be nonempty");
    for (std::size_t l : block_layers)
        if (l == 0) throw std::invalid_argument("network spec: block_layers entries must be positive");
    if (!(compression > 0.0) || compression > 1.0)
        throw std::invalid_argument("network spec: compression must lie in (0,1]");

    const StemShape stem_cfg = stem_shape(stem);
    if (input_h + 2 * stem_cfg.padding < stem_cfg.kernel ||
        input_w + 2 * stem_cfg.padding < stem_cfg.kernel)
        throw std::invalid_argument("network spec: input smaller than the stem kernel");

    std::size_t h = (input_h + 2 * stem_cfg.padding - stem_cfg.kernel) / stem_cfg.stride + 1;
    std::size_t w = (input_w + 2 * stem_cfg.padding - stem_cfg.kernel) / stem_cfg.stride + 1;
    if (stem_cfg.pooled) {
        if (h < 2 || w < 2)
            throw std::invalid_argument("network spec: input too small for the pooled stem");
        h /= 2;
        w /= 2;
    }

    std::size_t channels = initial_channels;
    for (std::size_t b = 0; b < block_layers.size(); ++b) {
        channels += block_layers[b] * growth_rate;
        if (b + 1 == block_layers.size()) break;
        const std::size_t reduced = transition_channels(compression, channels);
        if (reduced < 1)
            throw std::invalid_argument(
                "network spec: transition after block " + std::to_string(b + 1) +
                " would leave floor(compression x channels) = 0 channels");
        channels = reduced;
        if (h < 2 || w < 2)
            throw std::invalid_argument(
                "network spec: transition after block " + std::to_string(b + 1) +
                " would shrink spatial dims below 1");
        h /= 2;
        w /= 2;
    }
}

NetworkSpec dense_tiny_spec(std::uint64_t seed) {
    NetworkSpec s;
    s.input_h = 64;
    s.input_w = 64;
    s.input_channels = 1;
    s.initial_channels = 8;
    s.growth_rate = 4;
    s.block_layers = {2, 2};
    s.compression = 0.5;
    s.bottleneck = false;
    s.stem = StemKind::Conv3x3;
    s.seed = seed;
    return s;
}

NetworkSpec dense169_shape_spec(std::uint64_t seed) {
    NetworkSpec s;
    s.input_h = 224;
    s.input_w = 224;
    s.input_channels = 1;
    s.initial_channels = 64;
    s.growth_rate = 32;
    s.block_layers = {6, 12, 32, 32};
    s.compression = 0.5;
    s.bottleneck = true;
    s.stem = StemKind::Conv7x7Pooled;
    s.seed = seed;
    return s;
}

NetworkSpec spec_for_preset(const std::string& name, std::uint64_t seed) {
    if (name == "DENSE_TINY") return dense_tiny_spec(seed);
    if (name == "DENSE169_SHAPE") return dense169_shape_spec(seed);
    throw std::invalid_argument("unknown architecture preset '" + name +
                                "' (expected DENSE_TINY or DENSE169_SHAPE)");
}

template <typename T>
Network<T> build_network(const NetworkSpec& spec) {
    spec.validate();
    Network<T> net;
    net.spec = spec;
    std::mt19937_64 rng(spec.seed);

    const auto add_conv = [&](const std::string& name, std::size_t out_c, std::size_t in_c,
                              std::size_t k) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in_c * k * k));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor<T> wt({out_c, in_c, k, k});
        for (auto& v : wt.data) v = static_cast<T>(dist(rng));
        net.params.push_back({name + ".weight", std::move(wt)});
        net.params.push_back({name + ".bias", Tensor<T>({out_c})});
    };
    const auto add_fc = [&](const std::string& name, std::size_t out_c, std::size_t in_c) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in_c));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor<T> wt({out_c, in_c});
        for (auto& v : wt.data) v = static_cast<T>(dist(rng));
        net.params.push_back({name + ".weight", std::move(wt)});
        net.params.push_back({name + ".bias", Tensor<T>({out_c})});
    };

    const StemShape stem_cfg = stem_shape(spec.stem);
    add_conv("stem", spec.initial_channels, spec.input_channels, stem_cfg.kernel);

    std::size_t channels = spec.initial_channels;
    for (std::size_t b = 0; b < spec.block_layers.size(); ++b) {
        for (std::size_t l = 0; l < spec.block_layers[b]; ++l) {
            const std::string base =
                "block" + std::to_string(b + 1) + ".layer" + std::to_string(l + 1);
            std::size_t conv_in = channels;
            if (spec.bottleneck) {
                add_conv(base + ".bottleneck", 4 * spec.growth_rate, channels, 1);
                conv_in = 4 * spec.growth_rate;
            }
            add_conv(base + ".conv", spec.growth_rate, conv_in, 3);
            channels += spec.growth_rate;
        }
        if (b + 1 < spec.block_layers.size()) {
            const std::size_t reduced = transition_channels(spec.compression, channels);
            add_conv("transition" + std::to_string(b + 1), reduced, channels, 1);
            channels = reduced;
        }
    }
    add_fc("head", 1, channels);
    return net;
}

template <typename T>
ForwardHandles build_forward(Graph<T>& g, const Network<T>& net, Tensor<T> batch,
                             bool params_require_grad, bool input_requires_grad) {
    const NetworkSpec& spec = net.spec;
    if (batch.rank() != 4 || batch.shape[1] != spec.input_channels ||
        batch.shape[2] != spec.input_h || batch.shape[3] != spec.input_w || batch.shape[0] == 0) {
        throw std::invalid_argument("forward: batch " + shape_str(batch.shape) +
                                    " does not match the network input " +
                                    std::to_string(spec.input_channels) + "x" +
                                    std::to_string(spec.input_h) + "x" +
                                    std::to_string(spec.input_w));
    }

    ForwardHandles handles;
    handles.input = g.input(std::move(batch), input_requires_grad);
    handles.params.reserve(net.params.size());
    for (const auto& p : net.params)
        handles.params.push_back(g.input(p.tensor, params_require_grad));

    std::size_t next = 0;
    const auto take2 = [&]() {
        const NodeId w = handles.params[next];
        const NodeId bias = handles.params[next + 1];
        next += 2;
        return std::pair<NodeId, NodeId>(w, bias);
    };

    const StemShape stem_cfg = stem_shape(spec.stem);
    auto [sw, sb] = take2();
    NodeId x = g.conv2d(handles.input, sw, sb, stem_cfg.stride, stem_cfg.padding);
    if (stem_cfg.pooled) x = g.avg_pool2d(x, 2, 2);

    std::size_t channels = spec.initial_channels;
    for (std::size_t b = 0; b < spec.block_layers.size(); ++b) {
        const std::size_t entry_channels = channels;
        for (std::size_t l = 0; l < spec.block_layers[b]; ++l) {
            NodeId t = g.relu(x);
            if (spec.bottleneck) {
                auto [bw, bb] = take2();
                t = g.relu(g.conv2d(t, bw, bb, 1, 0));
            }
            auto [cw, cb] = take2();
            t = g.conv2d(t, cw, cb, 1, 1);
            x = g.concat_channels({x, t});
            channels += spec.growth_rate;
        }
        if (g.value(x).shape[1] != entry_channels + spec.block_layers[b] * spec.growth_rate) {
            throw std::logic_error("forward: dense block " + std::to_string(b + 1) +
                                   " channel count does not equal entry + layers x growth");
        }
        if (b + 1 < spec.block_layers.size()) {
            auto [tw, tb] = take2();
            x = g.conv2d(x, tw, tb, 1, 0);
            x = g.avg_pool2d(x, 2, 2);
            channels = transition_channels(spec.compression, channels);
        }
    }

    auto [hw, hb] = take2();
    handles.output = g.sigmoid(g.fully_connected(g.global_avg_pool(x), hw, hb));
    return handles;
}

template <typename T>
Tensor<T> forward(const Network<T>& net, const Tensor<T>& batch) {
    Graph<T> g;
    const ForwardHandles h = build_forward(g, net, batch, false, false);
    return g.value(h.output);
}

template <typename T>
std::vector<double> predict_age(const Network<T>& net, const Tensor<T>& batch) {
    const Tensor<T> out = forward(net, batch);
    std::vector<double> ages;
    ages.reserve(out.numel());
    for (const T& v : out.data) ages.push_back(static_cast<double>(v) * 90.0);
    return ages;
}

template Network<float> build_network<float>(const NetworkSpec&);
template Network<double> build_network<double>(const NetworkSpec&);
template ForwardHandles build_forward<float>(Graph<float>&, const Network<float>&, Tensor<float>,
                                             bool, bool);
template ForwardHandles build_forward<double>(Graph<double>&, const Network<double>&,
                                              Tensor<double>, bool, bool);
template Tensor<float> forward<float>(const Network<float>&, const Tensor<float>&);
template Tensor<double> forward<double>(const Network<double>&, const Tensor<double>&);
template std::vector<double> predict_age<float>(const Network<float>&, const Tensor<float>&);
template std::vector<double> predict_age<double>(const Network<double>&, const Tensor<double>&);

}  // namespace cxrage
