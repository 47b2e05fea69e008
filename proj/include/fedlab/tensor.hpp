#pragma once

// Dense row-major tensor value. Rank 0..4, payload shared and treated as
// immutable once wrapped. All entries must be finite; NaN/Inf is rejected at
// construction so a divergence is caught at the op that produced it.

#include "fedlab/common.hpp"

#include <memory>
#include <numeric>
#include <string>
#include <vector>

namespace fedlab {

using Shape = std::vector<Index>;

inline Index shape_size(const Shape& s) {
    Index n = 1;
    for (Index d : s) {
        require(d > 0, "tensor: all dims must be positive");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

class Tensor {
public:
    Tensor() : shape_{}, data_(std::make_shared<Vec>(Vec::Zero(1))) {}

    Tensor(Vec values, Shape shape)
        : shape_(std::move(shape)), data_(std::make_shared<Vec>(std::move(values))) {
        require(data_->size() == shape_size(shape_),
                "tensor: payload size " + std::to_string(data_->size()) +
                    " does not match shape " + shape_str(shape_));
        require(data_->allFinite(), "tensor: non-finite value rejected");
    }

    static Tensor zeros(Shape shape) {
        Index n = shape_size(shape);
        return Tensor(Vec::Zero(n), std::move(shape));
    }

    static Tensor full(Shape shape, Scalar v) {
        Index n = shape_size(shape);
        return Tensor(Vec::Constant(n, v), std::move(shape));
    }

    static Tensor scalar(Scalar v) { return Tensor(Vec::Constant(1, v), Shape{}); }

    const Shape& shape() const { return shape_; }
    Index size() const { return data_->size(); }
    Index rank() const { return Index(shape_.size()); }
    Index dim(std::size_t i) const { return shape_.at(i); }

    const Vec& values() const { return *data_; }
    Scalar operator[](Index i) const { return (*data_)[i]; }
    Scalar item() const {
        require(size() == 1, "tensor: item() on non-scalar " + shape_str(shape_));
        return (*data_)[0];
    }

    Tensor reshaped(Shape shape) const {
        require(shape_size(shape) == size(), "tensor: reshape size mismatch");
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

private:
    Shape shape_;
    std::shared_ptr<const Vec> data_;
};

} // namespace fedlab
