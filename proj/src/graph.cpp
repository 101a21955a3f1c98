#include "cxrage/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>

namespace cxrage {

namespace {

template <typename T>
T stable_sigmoid(T x) {
    T s;
    if (x >= T(0)) {
        s = T(1) / (T(1) + std::exp(-x));
    } else {
        const T e = std::exp(x);
        s = e / (T(1) + e);
    }
    // Keep outputs strictly inside (0,1) even where exp saturates.
    const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    const T lo = std::numeric_limits<T>::min();
    return std::min(hi, std::max(lo, s));
}

// c[M,N] += a[M,K] * b[K,N], all row-major contiguous.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m_dim, std::size_t k_dim,
              std::size_t n_dim) {
    for (std::size_t m = 0; m < m_dim; ++m) {
        const T* arow = a + m * k_dim;
        T* crow = c + m * n_dim;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const T av = arow[k];
            if (av == T(0)) continue;
            const T* brow = b + k * n_dim;
            for (std::size_t n = 0; n < n_dim; ++n) crow[n] += av * brow[n];
        }
    }
}

struct ConvDims {
    std::size_t in_c, in_h, in_w;
    std::size_t kh, kw;
    std::size_t stride, pad;
    std::size_t out_h, out_w;
    std::size_t patch() const { return in_c * kh * kw; }
    std::size_t out_hw() const { return out_h * out_w; }
};

// col layout [C*Kh*Kw, Ho*Wo]; zero padding.
template <typename T>
void im2col(const T* img, const ConvDims& d, T* col) {
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(d.in_h);
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(d.in_w);
    T* out = col;
    for (std::size_t c = 0; c < d.in_c; ++c) {
        const T* plane = img + c * d.in_h * d.in_w;
        for (std::size_t kh = 0; kh < d.kh; ++kh) {
            for (std::size_t kw = 0; kw < d.kw; ++kw) {
                for (std::size_t ho = 0; ho < d.out_h; ++ho) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(ho * d.stride + kh) -
                                              static_cast<std::ptrdiff_t>(d.pad);
                    if (ih < 0 || ih >= H) {
                        std::fill(out, out + d.out_w, T(0));
                        out += d.out_w;
                        continue;
                    }
                    const T* row = plane + static_cast<std::size_t>(ih) * d.in_w;
                    if (d.stride == 1) {
                        // iw = wo + kw - pad; copy the in-bounds span, zero the rest.
                        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kw) -
                                                     static_cast<std::ptrdiff_t>(d.pad);
                        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
                        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(
                            static_cast<std::ptrdiff_t>(d.out_w), W - shift);
                        for (std::ptrdiff_t wo = 0; wo < lo; ++wo) out[wo] = T(0);
                        for (std::ptrdiff_t wo = std::max<std::ptrdiff_t>(lo, 0); wo < hi; ++wo)
                            out[wo] = row[wo + shift];
                        for (std::ptrdiff_t wo = std::max<std::ptrdiff_t>(hi, 0);
                             wo < static_cast<std::ptrdiff_t>(d.out_w); ++wo)
                            out[wo] = T(0);
                    } else {
                        for (std::size_t wo = 0; wo < d.out_w; ++wo) {
                            const std::ptrdiff_t iw =
                                static_cast<std::ptrdiff_t>(wo * d.stride + kw) -
                                static_cast<std::ptrdiff_t>(d.pad);
                            out[wo] = (iw >= 0 && iw < W) ? row[iw] : T(0);
                        }
                    }
                    out += d.out_w;
                }
            }
        }
    }
}

// colT layout [Ho*Wo, C*Kh*Kw]; used by the weight-gradient GEMM.
template <typename T>
void im2col_t(const T* img, const ConvDims& d, T* col_t) {
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(d.in_h);
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(d.in_w);
    T* out = col_t;
    for (std::size_t ho = 0; ho < d.out_h; ++ho) {
        for (std::size_t wo = 0; wo < d.out_w; ++wo) {
            for (std::size_t c = 0; c < d.in_c; ++c) {
                const T* plane = img + c * d.in_h * d.in_w;
                for (std::size_t kh = 0; kh < d.kh; ++kh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(ho * d.stride + kh) -
                                              static_cast<std::ptrdiff_t>(d.pad);
                    if (ih < 0 || ih >= H) {
                        std::fill(out, out + d.kw, T(0));
                        out += d.kw;
                        continue;
                    }
                    const T* row = plane + static_cast<std::size_t>(ih) * d.in_w;
                    for (std::size_t kw = 0; kw < d.kw; ++kw) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(wo * d.stride + kw) -
                                                  static_cast<std::ptrdiff_t>(d.pad);
                        out[kw] = (iw >= 0 && iw < W) ? row[iw] : T(0);
                    }
                    out += d.kw;
                }
            }
        }
    }
}

// Scatter-add of dcol [C*Kh*Kw, Ho*Wo] back onto the input image gradient.
template <typename T>
void col2im_acc(const T* dcol, const ConvDims& d, T* dimg) {
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(d.in_h);
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(d.in_w);
    const T* in = dcol;
    for (std::size_t c = 0; c < d.in_c; ++c) {
        T* plane = dimg + c * d.in_h * d.in_w;
        for (std::size_t kh = 0; kh < d.kh; ++kh) {
            for (std::size_t kw = 0; kw < d.kw; ++kw) {
                for (std::size_t ho = 0; ho < d.out_h; ++ho) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(ho * d.stride + kh) -
                                              static_cast<std::ptrdiff_t>(d.pad);
                    if (ih < 0 || ih >= H) {
                        in += d.out_w;
                        continue;
                    }
                    T* row = plane + static_cast<std::size_t>(ih) * d.in_w;
                    if (d.stride == 1) {
                        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kw) -
                                                     static_cast<std::ptrdiff_t>(d.pad);
                        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
                        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(
                            static_cast<std::ptrdiff_t>(d.out_w), W - shift);
                        for (std::ptrdiff_t wo = lo; wo < hi; ++wo) row[wo + shift] += in[wo];
                    } else {
                        for (std::size_t wo = 0; wo < d.out_w; ++wo) {
                            const std::ptrdiff_t iw =
                                static_cast<std::ptrdiff_t>(wo * d.stride + kw) -
                                static_cast<std::ptrdiff_t>(d.pad);
                            if (iw >= 0 && iw < W) row[iw] += in[wo];
                        }
                    }
                    in += d.out_w;
                }
            }
        }
    }
}

}  // namespace

template <typename T>
void Graph<T>::check_id(NodeId id, const char* op) const {
    if (id.index >= nodes_.size()) {
        throw std::invalid_argument(std::string(op) + ": node id " + std::to_string(id.index) +
                                    " out of range (graph has " + std::to_string(nodes_.size()) +
                                    " nodes)");
    }
}

template <typename T>
bool Graph<T>::any_requires(const std::vector<std::size_t>& ids) const {
    for (std::size_t i : ids)
        if (nodes_[i].requires_grad) return true;
    return false;
}

template <typename T>
NodeId Graph<T>::push(Node node) {
    nodes_.push_back(std::move(node));
    return NodeId{nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::grad(NodeId id) const {
    const Node& n = nodes_[id.index];
    if (!n.grad.data.empty()) return n.grad;
    zero_grad_scratch_ = Tensor<T>(n.value.shape);
    return zero_grad_scratch_;
}

template <typename T>
NodeId Graph<T>::input(Tensor<T> value, bool requires_grad) {
    Node n;
    n.kind = OpKind::Input;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::conv2d(NodeId x_id, NodeId k_id, NodeId b_id, std::size_t stride,
                        std::size_t padding) {
    check_id(x_id, "conv2d");
    check_id(k_id, "conv2d");
    check_id(b_id, "conv2d");
    const Tensor<T>& x = value(x_id);
    const Tensor<T>& k = value(k_id);
    const Tensor<T>& b = value(b_id);
    if (x.rank() != 4 || k.rank() != 4) {
        throw std::invalid_argument("conv2d: need 4-d input and kernel, got input " +
                                    shape_str(x.shape) + ", kernel " + shape_str(k.shape));
    }
    const std::size_t batch = x.shape[0], in_c = x.shape[1], in_h = x.shape[2], in_w = x.shape[3];
    const std::size_t out_c = k.shape[0];
    if (k.shape[1] != in_c) {
        throw std::invalid_argument("conv2d: kernel channel count does not match input (input " +
                                    shape_str(x.shape) + ", kernel " + shape_str(k.shape) + ")");
    }
    if (b.shape != Shape{out_c}) {
        throw std::invalid_argument("conv2d: bias shape " + shape_str(b.shape) +
                                    " does not match kernel output channels " +
                                    std::to_string(out_c));
    }
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    if (in_h + 2 * padding < k.shape[2] || in_w + 2 * padding < k.shape[3]) {
        throw std::invalid_argument("conv2d: kernel " + shape_str(k.shape) +
                                    " does not fit padded input " + shape_str(x.shape) +
                                    " (padding " + std::to_string(padding) + ")");
    }

    ConvDims d;
    d.in_c = in_c;
    d.in_h = in_h;
    d.in_w = in_w;
    d.kh = k.shape[2];
    d.kw = k.shape[3];
    d.stride = stride;
    d.pad = padding;
    d.out_h = (in_h + 2 * padding - d.kh) / stride + 1;
    d.out_w = (in_w + 2 * padding - d.kw) / stride + 1;

    const std::size_t patch = d.patch();
    const std::size_t out_hw = d.out_hw();
    const bool plain1x1 = d.kh == 1 && d.kw == 1 && stride == 1 && padding == 0;

    Tensor<T> out({batch, out_c, d.out_h, d.out_w});
    std::vector<T> col;
    if (!plain1x1) col.resize(patch * out_hw);
    for (std::size_t n = 0; n < batch; ++n) {
        const T* xn = x.data.data() + n * in_c * in_h * in_w;
        const T* cols = xn;
        if (!plain1x1) {
            im2col(xn, d, col.data());
            cols = col.data();
        }
        T* on = out.data.data() + n * out_c * out_hw;
        for (std::size_t o = 0; o < out_c; ++o)
            std::fill(on + o * out_hw, on + (o + 1) * out_hw, b.data[o]);
        gemm_acc(k.data.data(), cols, on, out_c, patch, out_hw);
    }

    Node node;
    node.kind = OpKind::Conv2d;
    node.inputs = {x_id.index, k_id.index, b_id.index};
    node.value = std::move(out);
    node.requires_grad = any_requires(node.inputs);
    node.backprop = [d, batch, out_c, plain1x1](Graph& g, const Node& self) {
        Node& xn = g.nodes_[self.inputs[0]];
        Node& kn = g.nodes_[self.inputs[1]];
        Node& bn = g.nodes_[self.inputs[2]];
        const std::size_t patch = d.patch();
        const std::size_t out_hw = d.out_hw();
        const std::size_t img_sz = d.in_c * d.in_h * d.in_w;

        if (bn.requires_grad) {
            for (std::size_t n = 0; n < batch; ++n) {
                const T* gn = self.grad.data.data() + n * out_c * out_hw;
                for (std::size_t o = 0; o < out_c; ++o) {
                    T acc = 0;
                    const T* row = gn + o * out_hw;
                    for (std::size_t i = 0; i < out_hw; ++i) acc += row[i];
                    bn.grad.data[o] += acc;
                }
            }
        }

        std::vector<T> col_t;
        if (kn.requires_grad) col_t.resize(out_hw * patch);
        std::vector<T> ker_t;
        std::vector<T> dcol;
        if (xn.requires_grad) {
            // kernel transposed to [patch, out_c] for the dx GEMM
            ker_t.resize(patch * out_c);
            for (std::size_t o = 0; o < out_c; ++o)
                for (std::size_t p = 0; p < patch; ++p)
                    ker_t[p * out_c + o] = kn.value.data[o * patch + p];
            if (!plain1x1) dcol.resize(patch * out_hw);
        }

        for (std::size_t n = 0; n < batch; ++n) {
            const T* gn = self.grad.data.data() + n * out_c * out_hw;
            if (kn.requires_grad) {
                im2col_t(xn.value.data.data() + n * img_sz, d, col_t.data());
                gemm_acc(gn, col_t.data(), kn.grad.data.data(), out_c, out_hw, patch);
            }
            if (xn.requires_grad) {
                T* dxn = xn.grad.data.data() + n * img_sz;
                if (plain1x1) {
                    gemm_acc(ker_t.data(), gn, dxn, patch, out_c, out_hw);
                } else {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    gemm_acc(ker_t.data(), gn, dcol.data(), patch, out_c, out_hw);
                    col2im_acc(dcol.data(), d, dxn);
                }
            }
        }
    };
    return push(std::move(node));
}

template <typename T>
NodeId Graph<T>::relu(NodeId x_id) {
    check_id(x_id, "relu");
    const Tensor<T>& x = value(x_id);
    Tensor<T> out;
    out.shape = x.shape;
    out.data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i)
        out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);

    Node node;
    node.kind = OpKind::Relu;
    node.inputs = {x_id.index};
    node.value = std::move(out);
    node.requires_grad = any_requires(node.inputs);
    node.backprop = [](Graph& g, const Node& self) {
        Node& xn = g.nodes_[self.inputs[0]];
        if (!xn.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.data.size(); ++i)
            if (xn.value.data[i] > T(0)) xn.grad.data[i] += self.grad.data[i];
    };
    return push(std::move(node));
}

template <typename T>
NodeId Graph<T>::sigmoid(NodeId x_id) {
    check_id(x_id, "sigmoid");
    const Tensor<T>& x = value(x_id);
    Tensor<T> out;
    out.shape = x.shape;
    out.data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = stable_sigmoid(x.data[i]);

    Node node;
    node.kind = OpKind::Sigmoid;
    node.inputs = {x_id.index};
    node.value = std::move(out);
    node.requires_grad = any_requires(node.inputs);
    node.backprop = [](Graph& g, const Node& self) {
        Node& xn = g.nodes_[self.inputs[0]];
        if (!xn.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
            const T s = self.value.data[i];
            xn.grad.data[i] += self.grad.data[i] * s * (T(1) - s);
        }
    };
    return push(std::move(node));
}

template <typename T>
NodeId Graph<T>::avg_pool2d(NodeId x_id, std::size_t window, std::size_t stride) {
    check_id(x_id, "avg_pool2d");
    const Tensor<T>& x = value(x_id);
    if (x.rank() != 4) {
        throw std::invalid_argument("avg_pool2d: need 4-d input, got " + shape_str(x.shape));
    }
    if (window == 0 || stride == 0) {
        throw std::invalid_argument("avg_pool2d: window and stride must be positive");
    }
    const std::size_t batch = x.shape[0], chans = x.shape[1], in_h = x.shape[2], in_w = x.shape[3];
    if (in_h < window || in_w < window) {
        throw std::invalid_argument("avg_pool2d: window " + std::to_string(window) +
                                    " larger than spatial dims of " + shape_str(x.shape));
    }
    const std::size_t out_h = (in_h - window) / stride + 1;
    const std::size_t out_w = (in_w - window) / stride + 1;
    const T inv = T(1) / static_cast<T>(window * window);

    Tensor<T> out({batch, chans, out_h, out_w});
    for (std::size_t nc = 0; nc < batch * chans; ++nc) {
        const T* plane = x.data.data() + nc * in_h * in_w;
        T* oplane = out.data.data() + nc * out_h * out_w;
        for (std::size_t ho = 0; ho < out_h; ++ho) {
            for (std::size_t wo = 0; wo < out_w; ++wo) {
                T acc = 0;
                for (std::size_t dh = 0; dh < window; ++dh) {
                    const T* row = plane + (ho * stride + dh) * in_w + wo * stride;
                    for (std::size_t dw = 0; dw < window; ++dw) acc += row[dw];
                }
                oplane[ho * out_w + wo] = acc * inv;
            }
        }
    }

    Node node;
    node.kind = OpKind::AvgPool2d;
    node.inputs = {x_id.index};
    node.value = std::move(out);
    node.requires_grad = any_requires(node.inputs);
    node.backprop = [window, stride, inv, in_h, in_w, out_h, out_w](Graph& g, const Node& self) {
        Node& xn = g.nodes_[self.inputs[0]];
        if (!xn.requires_grad) return;
        const std::size_t planes = self.value.shape[0] * self.value.shape[1];
        for (std::size_t nc = 0; nc < planes; ++nc) {
            const T* gplane = self.grad.data.data() + nc * out_h * out_w;
            T* dplane = xn.grad.data.data() + nc * in_h * in_w;
            for (std::size_t ho = 0; ho < out_h; ++ho) {
                for (std::size_t wo = 0; wo < out_w; ++wo) {
                    const T gv = gplane[ho * out_w + wo] * inv;
                    for (std::size_t dh = 0; dh < window; ++dh) {
                        T* row = dplane + (ho * stride + dh) * in_w + wo * stride;
                        for (std::size_t dw = 0; dw < window; ++dw) row[dw] += gv;
                    }
                }
            }
        }
    };
    return push(std::move(node));
}

template <typename T>
NodeId Graph<T>::global_avg_pool(NodeId x_id) {
    check_id(x_id, "global_avg_pool");
    const Tensor<T>& x = value(x_id);
    if (x.rank() != 4) {
        throw std::invalid_argument("global_avg_pool: need 4-d input, got " + shape_str(x.shape));
    }
    const std::size_t batch = x.shape[0], chans = x.shape[1];
    const std::size_t hw = x.shape[2] * x.shape[3];
    const T inv = T(1) / static_cast<T>(hw);

    Tensor<T> out({batch, chans});
    for (std::size_t nc = 0; nc < batch * chans; ++nc) {
        const T* plane = x.data.data() + nc * hw;
        T acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += plane[i];
        out.data[nc] = acc * inv;
    }

    Node node;
    node.kind = OpKind::GlobalAvgPool;
    node.inputs = {x_id.index};
    node.value = std::move(out);
    node.requires_grad = any_requires(node.inputs);
    node.backprop = [hw, inv](Graph& g, const Node& self) {
        Node& xn = g.nodes_[self.inputs[0]];
        if (!xn.requires_grad) return;
        for (std::size_t nc = 0; nc < self.grad.data.size(); ++nc) {
            const T gv = self.grad.data[nc] * inv;
            T* plane = xn.grad.data.data() + nc * hw;
            for (std::size_t i = 0; i < hw; ++i) plane[i] += gv;
        }
    };
    return push(std::move(node));
}

template <typename T>
NodeId Graph<T>::concat_channels(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: need at least one input");
    for (NodeId id : xs) check_id(id, "concat_channels");
    const Tensor<T>& first = value(xs[0]);
    if (first.rank() != 4) {
        throw std::invalid_argument("concat_channels: need 4-d inputs, got " +
                                    shape_str(first.shape));
    }
    const std::size_t batch = first.shape[0], in_h = first.shape[2], in_w = first.shape[3];
    std::size_t total_c = 0;
    for (NodeId id : xs) {
        const Tensor<T>& t = value(id);
        if (t.rank() != 4 || t.shape[0] != batch || t.shape[2] != in_h || t.shape[3] != in_w) {
            throw std::invalid_argument("concat_channels: input " + shape_str(t.shape) +
                                        " does not match " + shape_str(first.shape) +
                                        " on batch/spatial dims");
        }
        total_c += t.shape[1];
    }

    const std::size_t hw = in_h * in_w;
    Tensor<T> out({batch, total_c, in_h, in_w});
    for (std::size_t n = 0; n < batch; ++n) {
        T* dst = out.data.data() + n * total_c * hw;
        for (NodeId id : xs) {
            const Tensor<T>& t = value(id);
            const std::size_t block = t.shape[1] * hw;
            std::memcpy(dst, t.data.data() + n * block, block * sizeof(T));
            dst += block;
        }
    }

    Node node;
    node.kind = OpKind::ConcatChannels;
    node.inputs.reserve(xs.size());
    for (NodeId id : xs) node.inputs.push_back(id.index);
    node.value = std::move(out);
    node.requires_grad = any_requires(node.inputs);
    node.backprop = [batch, total_c, hw](Graph& g, const Node& self) {
        for (std::size_t n = 0; n < batch; ++n) {
            const T* src = self.grad.data.data() + n * total_c * hw;
            for (std::size_t in_idx : self.inputs) {
                Node& xn = g.nodes_[in_idx];
                const std::size_t block = xn.value.shape[1] * hw;
                if (xn.requires_grad) {
                    T* dst = xn.grad.data.data() + n * block;
                    for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                }
                src += block;
            }
        }
    };
    return push(std::move(node));
}

template <typename T>
NodeId Graph<T>::fully_connected(NodeId x_id, NodeId w_id, NodeId b_id) {
    check_id(x_id, "fully_connected");
    check_id(w_id, "fully_connected");
    check_id(b_id, "fully_connected");
    const Tensor<T>& x = value(x_id);
    const Tensor<T>& w = value(w_id);
    const Tensor<T>& b = value(b_id);
    if (x.rank() != 2 || w.rank() != 2) {
        throw std::invalid_argument("fully_connected: need 2-d input and weights, got input " +
                                    shape_str(x.shape) + ", weights " + shape_str(w.shape));
    }
    const std::size_t batch = x.shape[0], feats = x.shape[1], outs = w.shape[0];
    if (w.shape[1] != feats) {
        throw std::invalid_argument("fully_connected: weight columns do not match input features "
                                    "(input " +
                                    shape_str(x.shape) + ", weights " + shape_str(w.shape) + ")");
    }
    if (b.shape != Shape{outs}) {
        throw std::invalid_argument("fully_connected: bias shape " + shape_str(b.shape) +
                                    " does not match weight rows " + std::to_string(outs));
    }

    Tensor<T> out({batch, outs});
    for (std::size_t n = 0; n < batch; ++n) {
        const T* xrow = x.data.data() + n * feats;
        T* orow = out.data.data() + n * outs;
        for (std::size_t m = 0; m < outs; ++m) {
            const T* wrow = w.data.data() + m * feats;
            T acc = b.data[m];
            for (std::size_t c = 0; c < feats; ++c) acc += xrow[c] * wrow[c];
            orow[m] = acc;
        }
    }

    Node node;
    node.kind = OpKind::FullyConnected;
    node.inputs = {x_id.index, w_id.index, b_id.index};
    node.value = std::move(out);
    node.requires_grad = any_requires(node.inputs);
    node.backprop = [batch, feats, outs](Graph& g, const Node& self) {
        Node& xn = g.nodes_[self.inputs[0]];
        Node& wn = g.nodes_[self.inputs[1]];
        Node& bn = g.nodes_[self.inputs[2]];
        for (std::size_t n = 0; n < batch; ++n) {
            const T* grow = self.grad.data.data() + n * outs;
            for (std::size_t m = 0; m < outs; ++m) {
                const T gv = grow[m];
                if (gv == T(0)) continue;
                if (bn.requires_grad) bn.grad.data[m] += gv;
                if (xn.requires_grad) {
                    T* dxrow = xn.grad.data.data() + n * feats;
                    const T* wrow = wn.value.data.data() + m * feats;
                    for (std::size_t c = 0; c < feats; ++c) dxrow[c] += gv * wrow[c];
                }
                if (wn.requires_grad) {
                    T* dwrow = wn.grad.data.data() + m * feats;
                    const T* xrow = xn.value.data.data() + n * feats;
                    for (std::size_t c = 0; c < feats; ++c) dwrow[c] += gv * xrow[c];
                }
            }
        }
    };
    return push(std::move(node));
}

template <typename T>
NodeId Graph<T>::mse_loss(NodeId pred_id, NodeId target_id) {
    check_id(pred_id, "mse_loss");
    check_id(target_id, "mse_loss");
    const Tensor<T>& p = value(pred_id);
    const Tensor<T>& t = value(target_id);
    if (p.shape != t.shape) {
        throw std::invalid_argument("mse_loss: prediction " + shape_str(p.shape) +
                                    " and target " + shape_str(t.shape) + " differ");
    }
    if (p.rank() != 2 || p.shape[1] != 1 || p.shape[0] == 0) {
        throw std::invalid_argument("mse_loss: need a nonempty Nx1 batch, got " +
                                    shape_str(p.shape));
    }
    const std::size_t n = p.shape[0];
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T r = p.data[i] - t.data[i];
        acc += r * r;
    }
    Node node;
    node.kind = OpKind::MseLoss;
    node.inputs = {pred_id.index, target_id.index};
    node.value = Tensor<T>::scalar(acc / static_cast<T>(n));
    node.requires_grad = any_requires(node.inputs);
    node.backprop = [n](Graph& g, const Node& self) {
        Node& pn = g.nodes_[self.inputs[0]];
        Node& tn = g.nodes_[self.inputs[1]];
        const T go = self.grad.data[0];
        const T scale = T(2) / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const T r = pn.value.data[i] - tn.value.data[i];
            if (pn.requires_grad) pn.grad.data[i] += go * scale * r;
            if (tn.requires_grad) tn.grad.data[i] -= go * scale * r;
        }
    };
    return push(std::move(node));
}

template <typename T>
NodeId Graph<T>::r2_objective_loss(NodeId pred_id, NodeId target_id) {
    check_id(pred_id, "r2_objective_loss");
    check_id(target_id, "r2_objective_loss");
    const Tensor<T>& p = value(pred_id);
    const Tensor<T>& t = value(target_id);
    if (p.shape != t.shape) {
        throw std::invalid_argument("r2_objective_loss: prediction " + shape_str(p.shape) +
                                    " and target " + shape_str(t.shape) + " differ");
    }
    if (p.rank() != 2 || p.shape[1] != 1 || p.shape[0] < 2) {
        throw std::invalid_argument("r2_objective_loss: need an Nx1 batch with N >= 2, got " +
                                    shape_str(p.shape));
    }
    const std::size_t n = p.shape[0];
    bool all_equal = true;
    for (std::size_t i = 1; i < n && all_equal; ++i) all_equal = t.data[i] == t.data[0];
    T mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += t.data[i];
    mean /= static_cast<T>(n);
    T ss_tot = 0, ss_res = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T d = t.data[i] - mean;
        ss_tot += d * d;
        const T r = p.data[i] - t.data[i];
        ss_res += r * r;
    }
    if (all_equal || ss_tot == T(0)) {
        throw std::invalid_argument(
            "r2_objective_loss: targets in the batch are all equal (zero total sum of squares)");
    }

    Node node;
    node.kind = OpKind::R2ObjectiveLoss;
    node.inputs = {pred_id.index, target_id.index};
    node.value = Tensor<T>::scalar(ss_res / ss_tot);
    node.requires_grad = any_requires(node.inputs);
    node.backprop = [n, mean, ss_tot, ss_res](Graph& g, const Node& self) {
        Node& pn = g.nodes_[self.inputs[0]];
        Node& tn = g.nodes_[self.inputs[1]];
        const T go = self.grad.data[0];
        for (std::size_t i = 0; i < n; ++i) {
            const T r = pn.value.data[i] - tn.value.data[i];
            if (pn.requires_grad) pn.grad.data[i] += go * T(2) * r / ss_tot;
            if (tn.requires_grad) {
                const T d = tn.value.data[i] - mean;
                tn.grad.data[i] +=
                    go * (T(-2) * r * ss_tot - ss_res * T(2) * d) / (ss_tot * ss_tot);
            }
        }
    };
    return push(std::move(node));
}

template <typename T>
NodeId Graph<T>::scale(NodeId x_id, T factor) {
    check_id(x_id, "scale");
    const Tensor<T>& x = value(x_id);
    Tensor<T> out;
    out.shape = x.shape;
    out.data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = factor * x.data[i];

    Node node;
    node.kind = OpKind::Scale;
    node.inputs = {x_id.index};
    node.value = std::move(out);
    node.requires_grad = any_requires(node.inputs);
    node.backprop = [factor](Graph& g, const Node& self) {
        Node& xn = g.nodes_[self.inputs[0]];
        if (!xn.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.data.size(); ++i)
            xn.grad.data[i] += factor * self.grad.data[i];
    };
    return push(std::move(node));
}

template <typename T>
void Graph<T>::backward(NodeId root) {
    check_id(root, "backward");
    if (!nodes_[root.index].value.is_scalar()) {
        throw std::invalid_argument("backward: root must be a scalar, got " +
                                    shape_str(nodes_[root.index].value.shape));
    }
    for (Node& n : nodes_) n.grad = Tensor<T>(n.value.shape);
    nodes_[root.index].grad.data[0] = T(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        const Node& n = nodes_[i];
        if (n.backprop && n.requires_grad) n.backprop(*this, n);
    }
}

template <typename T>
Tensor<T> finite_diff_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& point,
                               T epsilon) {
    if (!(epsilon > T(0))) {
        throw std::invalid_argument("finite_diff_gradient: epsilon must be positive");
    }
    Tensor<T> x = point;
    Tensor<T> grad(point.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const T saved = x.data[i];
        x.data[i] = saved + epsilon;
        const T hi = f(x);
        x.data[i] = saved - epsilon;
        const T lo = f(x);
        x.data[i] = saved;
        grad.data[i] = (hi - lo) / (T(2) * epsilon);
    }
    return grad;
}

template <typename T>
GradCheckReport check_gradients(const std::vector<Tensor<T>>& points,
                                const std::function<NodeId(Graph<T>&, const std::vector<NodeId>&)>& build_loss,
                                T epsilon) {
    Graph<T> g;
    std::vector<NodeId> leaves;
    leaves.reserve(points.size());
    for (const Tensor<T>& p : points) leaves.push_back(g.input(p, true));
    const NodeId loss = build_loss(g, leaves);
    g.backward(loss);

    GradCheckReport report;
    std::size_t flat_base = 0;
    for (std::size_t pi = 0; pi < points.size(); ++pi) {
        const auto eval_at = [&](const Tensor<T>& candidate) -> T {
            Graph<T> fg;
            std::vector<NodeId> ids;
            ids.reserve(points.size());
            for (std::size_t j = 0; j < points.size(); ++j)
                ids.push_back(fg.input(j == pi ? candidate : points[j], false));
            return fg.value(build_loss(fg, ids)).data[0];
        };
        const Tensor<T> fd =
            finite_diff_gradient<T>(std::function<T(const Tensor<T>&)>(eval_at), points[pi], epsilon);
        const Tensor<T>& an = g.grad(leaves[pi]);
        for (std::size_t i = 0; i < fd.data.size(); ++i) {
            const double a = static_cast<double>(an.data[i]);
            const double b = static_cast<double>(fd.data[i]);
            const double abs_err = std::abs(a - b);
            const double rel_err = abs_err / std::max(1e-8, std::abs(a) + std::abs(b));
            if (abs_err > report.max_abs_error) report.max_abs_error = abs_err;
            if (rel_err > report.max_rel_error) {
                report.max_rel_error = rel_err;
                report.worst_parameter_index = flat_base + i;
            }
        }
        flat_base += fd.data.size();
    }
    return report;
}

template class Graph<float>;
template class Graph<double>;
template Tensor<float> finite_diff_gradient<float>(const std::function<float(const Tensor<float>&)>&,
                                                   const Tensor<float>&, float);
template Tensor<double> finite_diff_gradient<double>(
    const std::function<double(const Tensor<double>&)>&, const Tensor<double>&, double);
template GradCheckReport check_gradients<float>(
    const std::vector<Tensor<float>>&,
    const std::function<NodeId(Graph<float>&, const std::vector<NodeId>&)>&, float);
template GradCheckReport check_gradients<double>(
    const std::vector<Tensor<double>>&,
    const std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)>&, double);

}  // namespace cxrage
