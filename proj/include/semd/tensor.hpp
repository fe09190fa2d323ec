#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace semd {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_str(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

/// Dense row-major N-d array. Value semantics throughout; f32 for training,
/// f64 for gradient verification.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw std::invalid_argument("data size " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
    const T& at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

    /// Same data, new shape; element count must agree.
    Tensor reshaped(Shape new_shape) const {
        if (shape_numel(new_shape) != numel())
            throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " +
                                        shape_str(new_shape) + " changes element count");
        Tensor out;
        out.shape_ = std::move(new_shape);
        out.data_ = data_;
        return out;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out = Tensor<U>(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    std::size_t offset(std::initializer_list<int> idx) const {
        if (idx.size() != shape_.size())
            throw std::invalid_argument("index rank mismatch for shape " + shape_str(shape_));
        std::size_t off = 0;
        std::size_t axis = 0;
        for (int i : idx) {
            off = off * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
            ++axis;
        }
        return off;
    }

    Shape shape_;
    std::vector<T> data_;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
void require_finite(const Tensor<T>& t, const std::string& where) {
    if (!t.all_finite())
        throw std::runtime_error("non-finite values in " + where);
}

/// splitmix64; used to derive independent child seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// mt19937_64 wrapper with pinned uniform/normal mappings so streams are
/// reproducible independent of the standard library's distribution code.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    double uniform() {  // [0,1)
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {  // Box-Muller, spare discarded
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    /// integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int(0)");
        std::uint64_t bound = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x = gen_();
        while (x >= bound) x = gen_();
        return x % n;
    }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = static_cast<std::uint64_t>(std::distance(first, last));
        for (std::uint64_t i = n; i > 1; --i)
            std::swap(first[i - 1], first[uniform_int(i)]);
    }

private:
    std::mt19937_64 gen_;
};

/// Glorot-uniform fill: limit = sqrt(6 / (fan_in + fan_out)).
template <typename T>
void glorot_uniform(Tensor<T>& t, int fan_in, int fan_out, Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<T>(rng.uniform(-limit, limit));
}

}  // namespace semd
