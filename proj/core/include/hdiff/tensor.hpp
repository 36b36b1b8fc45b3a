#ifndef HDIFF_TENSOR_HPP
#define HDIFF_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "hdiff/rng.hpp"

namespace hdiff {

// Dense row-major tensor of doubles, up to rank 4. Rank conventions used in
// this project:
//   (b, c, h, w)  slice stacks and feature maps, b = slice index
//   (nx, ny, nz)  volumes, x fastest in memory (NIfTI order)
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v);
    static Tensor randn(std::vector<int> shape, Rng& rng);
    static Tensor from(std::vector<int> shape, std::initializer_list<double> vals);

    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int a, int b) { return data_[static_cast<std::size_t>(a) * shape_[1] + b]; }
    double at(int a, int b) const { return data_[static_cast<std::size_t>(a) * shape_[1] + b]; }
    double& at(int a, int b, int c) {
        return data_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    double at(int a, int b, int c) const {
        return data_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    double& at(int a, int b, int c, int d) {
        return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    double at(int a, int b, int c, int d) const {
        return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    // volume accessor: (i, j, k) with i fastest
    double& vox(int i, int j, int k) {
        return data_[static_cast<std::size_t>(i) + static_cast<std::size_t>(shape_[0]) * (j + static_cast<std::size_t>(shape_[1]) * k)];
    }
    double vox(int i, int j, int k) const {
        return data_[static_cast<std::size_t>(i) + static_cast<std::size_t>(shape_[0]) * (j + static_cast<std::size_t>(shape_[1]) * k)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(double v);
    double sum() const;
    double mean() const;
    double min() const;
    double max() const;
    double max_abs() const;
    bool all_finite() const;

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace hdiff

#endif
