#include "hdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hdiff/errors.hpp"

namespace hdiff {

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
        if (d <= 0) throw ConfigError("tensor dimension must be positive");
        n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, 0.0);
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = rng.normal();
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::initializer_list<double> vals) {
    Tensor t(std::move(shape));
    if (vals.size() != t.size()) throw ConfigError("initializer size does not match shape");
    std::copy(vals.begin(), vals.end(), t.data_.begin());
    return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::sum() const {
    double s = 0.0;
    for (double x : data_) s += x;
    return s;
}

double Tensor::mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

double Tensor::min() const {
    double m = std::numeric_limits<double>::infinity();
    for (double x : data_) m = std::min(m, x);
    return m;
}

double Tensor::max() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : data_) m = std::max(m, x);
    return m;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::fabs(x));
    return m;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ConfigError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace hdiff
