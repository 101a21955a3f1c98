#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cxrage {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += 'x';
        s += std::to_string(shape[i]);
    }
    return s.empty() ? "<empty>" : s;
}

// Dense row-major n-dimensional array. The data length always equals the
// product of the shape dimensions; constructors enforce it.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}

    Tensor(Shape s, std::vector<T> d);

    static Tensor full(Shape s, T value) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = value;
        return t;
    }

    static Tensor scalar(T value) { return full({1}, value); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape[i]; }
    bool is_scalar() const { return data.size() == 1; }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // NCHW element access for 4-d tensors.
    T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.reserve(data.size());
        for (const T& v : data) out.data.push_back(static_cast<U>(v));
        return out;
    }
};

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape)) {
        throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
}

}  // namespace cxrage
