#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gps {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles with an optional gradient buffer.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor vector(std::initializer_list<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const noexcept { return data_.size(); }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double at(std::size_t row, std::size_t col) const { return data_[row * shape_.at(1) + col]; }
    double item() const;

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

    bool has_grad() const noexcept { return has_grad_flag_; }
    std::span<const double> grad() const noexcept { return grad_; }
    std::span<double> grad() noexcept { return grad_; }
    void set_grad(std::vector<double> g);
    void clear_grad() noexcept {
        grad_.clear();
        has_grad_flag_ = false;
    }

    // Same data under a new shape with equal element count.
    Tensor reshaped(Shape shape) const;

    // Bitwise equality of shape and data (grad ignored).
    bool bitwise_equal(const Tensor& other) const noexcept;

  private:
    Shape shape_;
    std::vector<double> data_;
    bool requires_grad_ = false;
    bool has_grad_flag_ = false;
    std::vector<double> grad_;
};

}  // namespace gps
