#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "camef/common.hpp"

namespace camef {

/// Dense row-major tensor of doubles. Rank is usually 1 or 2; shape extents
/// are always positive and their product equals data.size().
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_size(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str());
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D accessors (rows x cols, row-major).
    std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void require_finite(const std::string& where) const {
        if (!all_finite()) throw NumericError("non-finite value in " + where);
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            os << shape_[i] << (i + 1 < shape_.size() ? "," : "");
        os << ")";
        return os.str();
    }

    static Tensor randn(std::vector<std::size_t> shape, std::mt19937_64& rng, double stddev) {
        Tensor t(std::move(shape));
        std::normal_distribution<double> dist(0.0, stddev);
        for (double& v : t.data_) v = dist(rng);
        return t;
    }

private:
    static std::size_t checked_size(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) {
            if (e == 0) throw ShapeError("zero extent in tensor shape");
            n *= e;
        }
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

}  // namespace camef
