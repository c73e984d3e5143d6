#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace clipvos {

// Dense row-major double tensor. Feature maps use channel-last [T, h, w, C];
// token matrices are [rows, cols]. Double precision throughout so finite
// differences against analytic gradients are meaningful.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
    Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(numel_of(shape), fill) {}
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if ((std::int64_t)data.size() != numel_of(shape))
            throw std::invalid_argument("tensor: data size does not match shape");
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, double v) { return Tensor(std::move(s), v); }
    static Tensor ones(std::vector<int> s) { return full(std::move(s), 1.0); }
    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    std::int64_t numel() const { return (std::int64_t)data.size(); }
    int ndim() const { return (int)shape.size(); }
    int dim(int i) const { return shape.at((size_t)i); }

    double& operator[](std::int64_t i) { return data[(size_t)i]; }
    double operator[](std::int64_t i) const { return data[(size_t)i]; }

    // 2-d [R, C]
    double& at(int r, int c) { return data[(size_t)r * shape[1] + c]; }
    double at(int r, int c) const { return data[(size_t)r * shape[1] + c]; }
    // 3-d [A, B, C]
    double& at(int a, int b, int c) {
        return data[((size_t)a * shape[1] + b) * shape[2] + c];
    }
    double at(int a, int b, int c) const {
        return data[((size_t)a * shape[1] + b) * shape[2] + c];
    }
    // 4-d [T, h, w, C]
    double& at(int t, int y, int x, int c) {
        return data[(((size_t)t * shape[1] + y) * shape[2] + x) * shape[3] + c];
    }
    double at(int t, int y, int x, int c) const {
        return data[(((size_t)t * shape[1] + y) * shape[2] + x) * shape[3] + c];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor reshaped(std::vector<int> s) const {
        if (numel_of(s) != numel()) throw std::invalid_argument("reshape: element count mismatch");
        Tensor out(std::move(s), data);
        return out;
    }

    void add_(const Tensor& o) {
        assert(same_shape(o));
        for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    }
    void scale_(double c) {
        for (double& v : data) v *= c;
    }
    void fill_(double c) {
        for (double& v : data) v = c;
    }

    double sum() const { return std::accumulate(data.begin(), data.end(), 0.0); }
    double abs_max() const {
        double m = 0.0;
        for (double v : data) m = std::max(m, std::fabs(v));
        return m;
    }
    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }
};

// Deterministic RNG wrapper. Gaussian via hand-rolled Box-Muller so the stream
// is identical across standard libraries (std::normal_distribution is not).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t raw() { return gen_(); }

    // uniform in [0, 1)
    double uniform() {
        return (double)(gen_() >> 11) * (1.0 / 9007199254740992.0);
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
        std::uint64_t span = (std::uint64_t)(hi - lo) + 1;
        return lo + (int)(gen_() % span);
    }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return u * m;
    }
    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    bool bernoulli(double p) { return uniform() < p; }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace clipvos
