#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stpformer/errors.hpp"

namespace stpformer {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major tensor of doubles. All compute in this codebase is 64-bit;
// 32-bit floats only appear in on-disk dataset files.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v);
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_[axis]; }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // rank-checked indexing for small-scale code and tests
    double& at(std::size_t i);
    double& at(std::size_t i, std::size_t j);
    double& at(std::size_t i, std::size_t j, std::size_t k);
    double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l);
    double at(std::size_t i) const { return const_cast<Tensor*>(this)->at(i); }
    double at(std::size_t i, std::size_t j) const { return const_cast<Tensor*>(this)->at(i, j); }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return const_cast<Tensor*>(this)->at(i, j, k);
    }
    double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return const_cast<Tensor*>(this)->at(i, j, k, l);
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

namespace ops {

// --- structure ---------------------------------------------------------

// Same element order, new extents; element counts must agree.
Tensor reshape(const Tensor& x, Shape shape);

// axes[i] names the input axis that becomes output axis i.
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
std::vector<std::size_t> inverse_axes(const std::vector<std::size_t>& axes);

// swap the last two axes (rank >= 2)
Tensor transpose_last(const Tensor& x);

Tensor concat_last(const Tensor& a, const Tensor& b);
// undo concat_last: first gets n_first trailing entries per position
std::pair<Tensor, Tensor> split_last(const Tensor& x, std::size_t n_first);

// table is (rows, d); gathers the given rows into (idx.size(), d)
Tensor take_rows(const Tensor& table, const std::vector<std::size_t>& idx);

// Expand extents of 1 up to the target shape (equal rank). No implicit rank
// promotion anywhere in this library: callers reshape first.
Tensor broadcast_to(const Tensor& x, const Shape& target);
// Sum over the axes broadcast_to would have expanded; adjoint of the above.
Tensor reduce_to_shape(const Tensor& g, const Shape& target);

// --- elementwise (equal rank, extents equal or 1) ----------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_t(const Tensor& x);
Tensor abs_t(const Tensor& x);

// --- contractions and reductions ---------------------------------------

// (batch..., p, q) x (batch..., q, r) -> (batch..., p, r); equal rank,
// batch extents equal or 1.
Tensor matmul(const Tensor& a, const Tensor& b);

// numerically stable softmax along the last axis
Tensor softmax_last(const Tensor& x);

Tensor mean_axis(const Tensor& x, std::size_t axis); // drops the axis
Tensor sum_all(const Tensor& x);                     // -> shape {1}
Tensor mean_all(const Tensor& x);                    // -> shape {1}

// 1x1 channel mix: x is (c_in, n, m), w is (c_out, c_in), b is (c_out).
Tensor channel_project(const Tensor& x, const Tensor& w, const Tensor& b);

// --- checks --------------------------------------------------------------

bool all_finite(const Tensor& x);
double max_abs_diff(const Tensor& a, const Tensor& b);

} // namespace ops
} // namespace stpformer
