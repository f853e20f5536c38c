#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace authnet {

// Dense row-major f64 tensor. Shape is dynamic; data lives in one flat vector.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor full(std::vector<std::size_t> shape, double value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    // Same data, new shape; element counts must match.
    Tensor reshaped(std::vector<std::size_t> shape) const;

    // Throws NumericError naming `what` if any element is NaN/Inf.
    void check_finite(const std::string& what) const;

    void fill(double value);

    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

// Element-wise helpers used all over; shapes must match exactly.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);

double max_abs(const Tensor& a);       // L-inf norm
double max_abs_diff(const Tensor& a, const Tensor& b);

} // namespace authnet
