#ifndef TILEDEPTH_TENSOR_HPP
#define TILEDEPTH_TENSOR_HPP

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tiledepth {

// Dense row-major tensor, up to 4 dims. Feature maps are [C,H,W],
// depth maps [H,W], conv weights [Cout,Cin,Kh,Kw].
template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape_) : shape(std::move(shape_)) {
        v.assign(static_cast<size_t>(numel()), T(0));
    }
    Tensor(std::initializer_list<int> shape_) : Tensor(std::vector<int>(shape_)) {}

    std::vector<int> shape;
    std::vector<T> v;

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(shape.size()); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

    // [H,W]
    T& at(int y, int x) { return v[static_cast<size_t>(y) * dim(1) + x]; }
    const T& at(int y, int x) const { return v[static_cast<size_t>(y) * dim(1) + x]; }
    // [C,H,W]
    T& at(int c, int y, int x) {
        return v[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
    }
    const T& at(int c, int y, int x) const {
        return v[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
    }
    // [N,C,H,W] (conv weights)
    T& at(int n, int c, int y, int x) {
        return v[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }
    const T& at(int n, int c, int y, int x) const {
        return v[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::string r = "(";
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) r += ",";
            r += std::to_string(s[i]);
        }
        return r + ")";
    }
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

}  // namespace tiledepth

#endif
