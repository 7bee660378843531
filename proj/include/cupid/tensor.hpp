#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cupid/common.hpp"

namespace cupid {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// ----------------------------- tensor -----------------------------
// Dense row-major real tensor. Copying a Tensor copies the handle, not the
// buffer; ops always allocate fresh outputs. Gradients live next to the data
// and are populated by Tape::backward.

struct TensorImpl {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;      // empty until needed
    bool requires_grad = false;  // leaf parameter flag
    bool grad_path = false;      // set while an op output on the active tape

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), real(0));
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, real value);
    static Tensor from(Shape shape, std::vector<real> values);
    static Tensor scalar(real value);

    bool valid() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
    int64_t extent(int64_t axis) const { return impl_->shape[static_cast<size_t>(axis)]; }

    const real* data() const { return impl_->data.data(); }
    real* data() { return impl_->data.data(); }
    const std::vector<real>& values() const { return impl_->data; }
    std::vector<real>& values() { return impl_->data; }

    bool has_grad() const { return !impl_->grad.empty(); }
    const std::vector<real>& grad() const { return impl_->grad; }
    std::vector<real>& grad() { return impl_->grad; }
    void zero_grad() {
        if (impl_) impl_->grad.assign(impl_->data.size(), real(0));
    }

    real item() const;

    Tensor& set_requires_grad(bool v = true) {
        impl_->requires_grad = v;
        if (v) impl_->ensure_grad();
        return *this;
    }
    bool requires_grad() const { return impl_->requires_grad; }

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

private:
    friend Tensor make_tensor(Shape shape);
    std::shared_ptr<TensorImpl> impl_;
};

Tensor make_tensor(Shape shape);

// ----------------------------- tape -----------------------------
// Ordered record of the primitives executed while the tape was active.
// Construction appends in forward order, so a reverse sweep visits every node
// after all of its consumers. One tape per training step, one thread.

class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Replays adjoints from a scalar loss. Leaf gradients accumulate across
    // repeated calls; intermediate gradients are reset each call.
    void backward(const Tensor& loss);

    size_t size() const { return ops_.size(); }

    static Tape* active();
    static void record(std::shared_ptr<TensorImpl> out, std::function<void()> fn);

private:
    struct Op {
        std::shared_ptr<TensorImpl> out;
        std::function<void()> fn;
    };
    std::vector<Op> ops_;
    Tape* prev_ = nullptr;
};

// Convenience wrapper; requires an active tape.
void backward(const Tensor& loss);

// ----------------------------- primitive operations -----------------------------
// Binary elementwise ops broadcast the right operand when its shape is a
// suffix of the left one (bias rows, positional tables, per-sample weights).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, real s);
Tensor mul_scalar(const Tensor& a, real s);

Tensor abs(const Tensor& a);   // d/dx at 0 := 0
Tensor gelu(const Tensor& a);  // tanh form

// (..., k) x (k, n) with leading dims folded into rows, or batched 3D x 3D
// with matching leading extent.
Tensor matmul(const Tensor& a, const Tensor& b);

// (B, T, h*dh) <-> (B*h, T, dh) head layout moves, single-pass index maps.
Tensor split_heads(const Tensor& x, int64_t heads);
Tensor merge_heads(const Tensor& x, int64_t heads);

Tensor transpose(const Tensor& a);                        // swap last two axes
Tensor permute(const Tensor& a, const std::vector<int64_t>& axes);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, int64_t axis, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int64_t axis);

// max-subtracted for stability; NaN inputs propagate to NaN outputs
Tensor softmax(const Tensor& a, int64_t axis);
Tensor layer_norm(const Tensor& a, real eps = real(1e-5));  // last axis, no affine

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, int64_t axis);
Tensor mean_axis(const Tensor& a, int64_t axis);

// table (N x d), idx flattened (B*K) -> (B, K, d)
Tensor gather_rows(const Tensor& table, const std::vector<int32_t>& idx, int64_t b, int64_t k);
// x (B x N x d), idx (B*K) -> (B, K, d)
Tensor gather_rows_batched(const Tensor& x, const std::vector<int32_t>& idx, int64_t k);
// base (B x N x d) with rows[idx] replaced by rows (B x K x d); idx unique per sample
Tensor scatter_rows(const Tensor& base, const std::vector<int32_t>& idx, const Tensor& rows);
// x (shape) -> (b, shape...)
Tensor expand_leading(const Tensor& x, int64_t b);

// logits (B x C), labels in [0, C) -> scalar mean cross-entropy.
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int32_t>& labels);

bool all_finite(const Tensor& t);
bool all_finite_grad(const Tensor& t);

}  // namespace cupid
