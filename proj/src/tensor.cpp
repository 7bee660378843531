#include "cupid/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "cupid/gemm.hpp"

namespace cupid {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ")";
    return os.str();
}

namespace {

std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

void check_shape(const Shape& s) {
    for (int64_t e : s)
        if (e <= 0) throw shape_error("non-positive extent in shape " + shape_str(s));
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
    throw shape_error(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                      shape_str(b));
}

// b broadcasts over a when b.shape is a suffix of a.shape
bool suffix_broadcast_ok(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    const size_t off = a.size() - b.size();
    for (size_t i = 0; i < b.size(); ++i)
        if (a[off + i] != b[i]) return false;
    return true;
}

struct AxisSplit {
    int64_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, int64_t axis) {
    if (axis < 0 || axis >= static_cast<int64_t>(s.size()))
        throw shape_error("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit sp{1, s[static_cast<size_t>(axis)], 1};
    for (int64_t i = 0; i < axis; ++i) sp.outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

}  // namespace

Tensor make_tensor(Shape shape) {
    check_shape(shape);
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data.resize(static_cast<size_t>(shape_numel(t.impl_->shape)));
    return t;
}

Tensor Tensor::zeros(Shape shape) { return make_tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, real value) {
    Tensor t = make_tensor(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<real> values) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw shape_error("value count " + std::to_string(values.size()) +
                          " does not match shape " + shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    return t;
}

Tensor Tensor::scalar(real value) { return from({1}, {value}); }

real Tensor::item() const {
    if (numel() != 1) throw contract_error("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

// ----------------------------- tape -----------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() {
    for (auto& op : ops_) op.out->grad_path = false;
    g_active_tape = prev_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<TensorImpl> out, std::function<void()> fn) {
    g_active_tape->ops_.push_back({std::move(out), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw contract_error("backward() needs a scalar loss, got shape " +
                             shape_str(loss.shape()));
    if (!loss.impl()->grad_path && !loss.impl()->requires_grad)
        throw contract_error("backward() on a tensor that is not on this tape");
    // Intermediates restart from zero each pass; leaves keep accumulating.
    for (auto& op : ops_) {
        if (!op.out->requires_grad) op.out->grad.assign(op.out->data.size(), real(0));
    }
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += real(1);
    for (size_t i = ops_.size(); i-- > 0;) ops_[i].fn();
}

void backward(const Tensor& loss) {
    if (!Tape::active()) throw contract_error("backward() without an active tape");
    Tape::active()->backward(loss);
}

namespace {

bool wants(std::initializer_list<const Tensor*> ins) {
    if (!Tape::active()) return false;
    for (const Tensor* t : ins)
        if (t->impl()->requires_grad || t->impl()->grad_path) return true;
    return false;
}

bool needs_grad(const std::shared_ptr<TensorImpl>& t) {
    return t->requires_grad || t->grad_path;
}

}  // namespace

// ----------------------------- elementwise binary -----------------------------

namespace {

enum class BinKind { add, sub, mul, divide };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
    if (!suffix_broadcast_ok(a.shape(), b.shape())) mismatch(name, a.shape(), b.shape());
    const int64_t na = a.numel();
    const int64_t nb = b.numel();
    const int64_t reps = na / nb;  // b tiles over the leading dimensions
    Tensor out = make_tensor(a.shape());
    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    for (int64_t r = 0; r < reps; ++r) {
        const real* ar = pa + r * nb;
        real* or_ = po + r * nb;
        switch (kind) {
            case BinKind::add:
                for (int64_t i = 0; i < nb; ++i) or_[i] = ar[i] + pb[i];
                break;
            case BinKind::sub:
                for (int64_t i = 0; i < nb; ++i) or_[i] = ar[i] - pb[i];
                break;
            case BinKind::mul:
                for (int64_t i = 0; i < nb; ++i) or_[i] = ar[i] * pb[i];
                break;
            case BinKind::divide:
                for (int64_t i = 0; i < nb; ++i) or_[i] = ar[i] / pb[i];
                break;
        }
    }
    if (wants({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        const bool ga = needs_grad(ai), gb = needs_grad(bi);
        oi->grad_path = true;
        Tape::record(oi, [ai, bi, oi, ga, gb, kind, nb, reps] {
            const real* g = oi->grad.data();
            if (ga) {
                ai->ensure_grad();
                real* da = ai->grad.data();
                const real* pb2 = bi->data.data();
                for (int64_t r = 0; r < reps; ++r) {
                    const real* gr = g + r * nb;
                    real* dar = da + r * nb;
                    switch (kind) {
                        case BinKind::add:
                        case BinKind::sub:
                            for (int64_t i = 0; i < nb; ++i) dar[i] += gr[i];
                            break;
                        case BinKind::mul:
                            for (int64_t i = 0; i < nb; ++i) dar[i] += gr[i] * pb2[i];
                            break;
                        case BinKind::divide:
                            for (int64_t i = 0; i < nb; ++i) dar[i] += gr[i] / pb2[i];
                            break;
                    }
                }
            }
            if (gb) {
                bi->ensure_grad();
                real* db = bi->grad.data();
                const real* pa2 = ai->data.data();
                const real* pb2 = bi->data.data();
                for (int64_t r = 0; r < reps; ++r) {
                    const real* gr = g + r * nb;
                    const real* ar = pa2 + r * nb;
                    switch (kind) {
                        case BinKind::add:
                            for (int64_t i = 0; i < nb; ++i) db[i] += gr[i];
                            break;
                        case BinKind::sub:
                            for (int64_t i = 0; i < nb; ++i) db[i] -= gr[i];
                            break;
                        case BinKind::mul:
                            for (int64_t i = 0; i < nb; ++i) db[i] += gr[i] * ar[i];
                            break;
                        case BinKind::divide:
                            for (int64_t i = 0; i < nb; ++i) db[i] -= gr[i] * ar[i] / (pb2[i] * pb2[i]);
                            break;
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::divide, "div"); }

Tensor add_scalar(const Tensor& a, real s) {
    Tensor out = make_tensor(a.shape());
    const real* pa = a.data();
    real* po = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + s;
    if (wants({&a})) {
        auto ai = a.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [ai, oi, n] {
            ai->ensure_grad();
            const real* g = oi->grad.data();
            real* da = ai->grad.data();
            for (int64_t i = 0; i < n; ++i) da[i] += g[i];
        });
    }
    return out;
}

Tensor mul_scalar(const Tensor& a, real s) {
    Tensor out = make_tensor(a.shape());
    const real* pa = a.data();
    real* po = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    if (wants({&a})) {
        auto ai = a.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [ai, oi, n, s] {
            ai->ensure_grad();
            const real* g = oi->grad.data();
            real* da = ai->grad.data();
            for (int64_t i = 0; i < n; ++i) da[i] += g[i] * s;
        });
    }
    return out;
}

// ----------------------------- elementwise unary -----------------------------

Tensor abs(const Tensor& a) {
    Tensor out = make_tensor(a.shape());
    const real* pa = a.data();
    real* po = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = std::fabs(pa[i]);
    if (wants({&a})) {
        auto ai = a.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [ai, oi, n] {
            ai->ensure_grad();
            const real* g = oi->grad.data();
            const real* x = ai->data.data();
            real* da = ai->grad.data();
            // subgradient 0 at the kink
            for (int64_t i = 0; i < n; ++i)
                da[i] += x[i] > 0 ? g[i] : (x[i] < 0 ? -g[i] : real(0));
        });
    }
    return out;
}

// tanh-form gelu; the derivative reuses the forward tanh, so backward costs
// no extra transcendental
Tensor gelu(const Tensor& a) {
    constexpr real kC = real(0.79788456080286535588);  // sqrt(2/pi)
    constexpr real kA = real(0.044715);
    Tensor out = make_tensor(a.shape());
    const real* pa = a.data();
    real* po = out.data();
    const int64_t n = a.numel();
    const bool taped = wants({&a});
    std::vector<real> deriv;
    if (taped) deriv.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const real x = pa[i];
        const real u = kC * (x + kA * x * x * x);
        const real t = std::tanh(u);
        po[i] = real(0.5) * x * (real(1) + t);
        if (taped) {
            const real du = kC * (real(1) + real(3) * kA * x * x);
            deriv[static_cast<size_t>(i)] =
                real(0.5) * (real(1) + t) + real(0.5) * x * (real(1) - t * t) * du;
        }
    }
    if (taped) {
        auto ai = a.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [ai, oi, n, d = std::move(deriv)] {
            ai->ensure_grad();
            const real* g = oi->grad.data();
            real* da = ai->grad.data();
            for (int64_t i = 0; i < n; ++i) da[i] += g[i] * d[static_cast<size_t>(i)];
        });
    }
    return out;
}

// ----------------------------- matmul -----------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    int64_t batch = 1, m, k, n;
    Shape so;
    if (sb.size() == 2 && sa.size() >= 2) {
        // leading dims of a fold into rows
        k = sa.back();
        m = a.numel() / k;
        n = sb[1];
        if (sb[0] != k) mismatch("matmul", sa, sb);
        so = Shape(sa.begin(), sa.end() - 1);
        so.push_back(n);
    } else if (sa.size() == 3 && sb.size() == 3) {
        batch = sa[0]; m = sa[1]; k = sa[2]; n = sb[2];
        if (sb[0] != batch || sb[1] != k) mismatch("matmul", sa, sb);
        so = Shape{batch, m, n};
    } else {
        mismatch("matmul", sa, sb);
    }
    Tensor out = make_tensor(so);

    const real* pa = a.data();
    const real* pb = b.data();
    real* po = out.data();
    for (int64_t s = 0; s < batch; ++s)
        gemm_nn(m, n, k, pa + s * m * k, k, pb + s * k * n, n, po + s * m * n, n, false);

    if (wants({&a, &b})) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        const bool ga = needs_grad(ai), gb = needs_grad(bi);
        oi->grad_path = true;
        Tape::record(oi, [ai, bi, oi, ga, gb, batch, m, k, n] {
            const real* g = oi->grad.data();
            if (ga) {
                ai->ensure_grad();
                // dA += dC * B^T
                std::vector<real> bt(static_cast<size_t>(n * k));
                for (int64_t s = 0; s < batch; ++s) {
                    transpose_copy(k, n, bi->data.data() + s * k * n, n, bt.data(), k);
                    gemm_nn(m, k, n, g + s * m * n, n, bt.data(), k,
                            ai->grad.data() + s * m * k, k, true);
                }
            }
            if (gb) {
                bi->ensure_grad();
                // dB += A^T * dC
                std::vector<real> at(static_cast<size_t>(k * m));
                for (int64_t s = 0; s < batch; ++s) {
                    transpose_copy(m, k, ai->data.data() + s * m * k, k, at.data(), m);
                    gemm_nn(k, n, m, at.data(), m, g + s * m * n, n,
                            bi->grad.data() + s * k * n, n, true);
                }
            }
        });
    }
    return out;
}

// ----------------------------- layout ops -----------------------------

Tensor transpose(const Tensor& a) {
    const Shape& s = a.shape();
    if (s.size() < 2) throw shape_error("transpose needs rank >= 2, got " + shape_str(s));
    std::vector<int64_t> axes(s.size());
    for (size_t i = 0; i < s.size(); ++i) axes[i] = static_cast<int64_t>(i);
    std::swap(axes[s.size() - 1], axes[s.size() - 2]);
    return permute(a, axes);
}

namespace {

// dst = permute(src, axes); dst dim d corresponds to src dim axes[d].
// Odometer walk over dst, contiguous run copy when the last axis is kept.
void permute_into(const real* src, const Shape& src_shape, const std::vector<int64_t>& axes,
                  real* dst, bool accumulate) {
    const size_t r = src_shape.size();
    const auto src_strides = strides_of(src_shape);
    Shape dst_shape(r);
    std::vector<int64_t> step(r);
    for (size_t d = 0; d < r; ++d) {
        dst_shape[d] = src_shape[static_cast<size_t>(axes[d])];
        step[d] = src_strides[static_cast<size_t>(axes[d])];
    }
    const int64_t total = shape_numel(dst_shape);
    if (total == 0) return;

    const bool run_copy = axes[r - 1] == static_cast<int64_t>(r - 1);
    const int64_t run = run_copy ? dst_shape[r - 1] : 1;
    const size_t iter_dims = run_copy ? r - 1 : r;

    std::vector<int64_t> counter(iter_dims, 0);
    int64_t src_off = 0;
    for (int64_t o = 0; o < total; o += run) {
        if (run_copy) {
            if (accumulate)
                for (int64_t j = 0; j < run; ++j) dst[o + j] += src[src_off + j];
            else
                std::memcpy(dst + o, src + src_off, static_cast<size_t>(run) * sizeof(real));
        } else {
            if (accumulate)
                dst[o] += src[src_off];
            else
                dst[o] = src[src_off];
        }
        // odometer increment, least-significant iterated dim last
        for (size_t d = iter_dims; d-- > 0;) {
            src_off += step[d];
            if (++counter[d] < dst_shape[d]) break;
            src_off -= step[d] * dst_shape[d];
            counter[d] = 0;
        }
    }
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<int64_t>& axes) {
    const Shape& s = a.shape();
    if (axes.size() != s.size())
        throw shape_error("permute axes rank " + std::to_string(axes.size()) +
                          " does not match tensor " + shape_str(s));
    std::vector<bool> seen(s.size(), false);
    Shape so(s.size());
    for (size_t d = 0; d < axes.size(); ++d) {
        const int64_t ax = axes[d];
        if (ax < 0 || ax >= static_cast<int64_t>(s.size()) || seen[static_cast<size_t>(ax)])
            throw shape_error("invalid permutation for " + shape_str(s));
        seen[static_cast<size_t>(ax)] = true;
        so[d] = s[static_cast<size_t>(ax)];
    }
    Tensor out = make_tensor(so);
    permute_into(a.data(), s, axes, out.data(), false);
    if (wants({&a})) {
        auto ai = a.impl(), oi = out.impl();
        std::vector<int64_t> inv(axes.size());
        for (size_t d = 0; d < axes.size(); ++d) inv[static_cast<size_t>(axes[d])] = static_cast<int64_t>(d);
        oi->grad_path = true;
        Tape::record(oi, [ai, oi, inv, so] {
            ai->ensure_grad();
            permute_into(oi->grad.data(), so, inv, ai->grad.data(), true);
        });
    }
    return out;
}

namespace {

// (B, T, h*dh) -> (B*h, T, dh) when splitting, inverse when merging
void heads_map(const real* src, real* dst, int64_t b, int64_t t, int64_t heads, int64_t dh,
               bool splitting, bool accumulate) {
    const int64_t d = heads * dh;
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t hi = 0; hi < heads; ++hi) {
            for (int64_t ti = 0; ti < t; ++ti) {
                const int64_t flat = ((bi * heads + hi) * t + ti) * dh;
                const int64_t packed = (bi * t + ti) * d + hi * dh;
                const real* s = splitting ? src + packed : src + flat;
                real* o = splitting ? dst + flat : dst + packed;
                if (accumulate)
                    for (int64_t c = 0; c < dh; ++c) o[c] += s[c];
                else
                    std::memcpy(o, s, static_cast<size_t>(dh) * sizeof(real));
            }
        }
    }
}

}  // namespace

Tensor split_heads(const Tensor& x, int64_t heads) {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[2] % heads != 0)
        throw shape_error("split_heads: need (B, T, h*dh), got " + shape_str(s) + " with " +
                          std::to_string(heads) + " heads");
    const int64_t b = s[0], t = s[1], dh = s[2] / heads;
    Tensor out = make_tensor({b * heads, t, dh});
    heads_map(x.data(), out.data(), b, t, heads, dh, true, false);
    if (wants({&x})) {
        auto xi = x.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [xi, oi, b, t, heads, dh] {
            xi->ensure_grad();
            heads_map(oi->grad.data(), xi->grad.data(), b, t, heads, dh, false, true);
        });
    }
    return out;
}

Tensor merge_heads(const Tensor& x, int64_t heads) {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[0] % heads != 0)
        throw shape_error("merge_heads: need (B*h, T, dh), got " + shape_str(s) + " with " +
                          std::to_string(heads) + " heads");
    const int64_t b = s[0] / heads, t = s[1], dh = s[2];
    Tensor out = make_tensor({b, t, heads * dh});
    heads_map(x.data(), out.data(), b, t, heads, dh, false, false);
    if (wants({&x})) {
        auto xi = x.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [xi, oi, b, t, heads, dh] {
            xi->ensure_grad();
            heads_map(oi->grad.data(), xi->grad.data(), b, t, heads, dh, true, true);
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
    check_shape(shape);
    if (shape_numel(shape) != a.numel())
        throw shape_error("reshape from " + shape_str(a.shape()) + " to " + shape_str(shape) +
                          " changes element count");
    Tensor out = make_tensor(shape);
    std::memcpy(out.data(), a.data(), static_cast<size_t>(a.numel()) * sizeof(real));
    if (wants({&a})) {
        auto ai = a.impl(), oi = out.impl();
        const int64_t n = a.numel();
        oi->grad_path = true;
        Tape::record(oi, [ai, oi, n] {
            ai->ensure_grad();
            const real* g = oi->grad.data();
            real* da = ai->grad.data();
            for (int64_t i = 0; i < n; ++i) da[i] += g[i];
        });
    }
    return out;
}

Tensor slice(const Tensor& a, int64_t axis, int64_t start, int64_t len) {
    const Shape& s = a.shape();
    const AxisSplit sp = split_axis(s, axis);
    if (start < 0 || len <= 0 || start + len > sp.len)
        throw shape_error("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                          ") out of range for axis " + std::to_string(axis) + " of " + shape_str(s));
    Shape so = s;
    so[static_cast<size_t>(axis)] = len;
    Tensor out = make_tensor(so);
    const real* pa = a.data();
    real* po = out.data();
    for (int64_t o = 0; o < sp.outer; ++o)
        std::memcpy(po + o * len * sp.inner, pa + (o * sp.len + start) * sp.inner,
                    static_cast<size_t>(len * sp.inner) * sizeof(real));
    if (wants({&a})) {
        auto ai = a.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [ai, oi, sp, start, len] {
            ai->ensure_grad();
            const real* g = oi->grad.data();
            real* da = ai->grad.data();
            for (int64_t o = 0; o < sp.outer; ++o) {
                real* dst = da + (o * sp.len + start) * sp.inner;
                const real* src = g + o * len * sp.inner;
                for (int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
    if (parts.empty()) throw shape_error("concat of zero tensors");
    const Shape& s0 = parts[0].shape();
    int64_t total = 0;
    for (const Tensor& p : parts) {
        const Shape& sp = p.shape();
        if (sp.size() != s0.size()) mismatch("concat", s0, sp);
        for (size_t d = 0; d < s0.size(); ++d)
            if (static_cast<int64_t>(d) != axis && sp[d] != s0[d]) mismatch("concat", s0, sp);
        total += sp[static_cast<size_t>(axis)];
    }
    Shape so = s0;
    so[static_cast<size_t>(axis)] = total;
    Tensor out = make_tensor(so);
    const AxisSplit sp_out = split_axis(so, axis);
    real* po = out.data();

    int64_t written = 0;
    bool taped = false;
    for (const Tensor& p : parts)
        if (wants({&p})) taped = true;

    struct PartInfo {
        std::shared_ptr<TensorImpl> impl;
        int64_t offset, len;
        bool grad;
    };
    std::vector<PartInfo> infos;

    for (const Tensor& p : parts) {
        const int64_t len = p.extent(axis);
        const real* pp = p.data();
        for (int64_t o = 0; o < sp_out.outer; ++o)
            std::memcpy(po + (o * total + written) * sp_out.inner, pp + o * len * sp_out.inner,
                        static_cast<size_t>(len * sp_out.inner) * sizeof(real));
        if (taped) infos.push_back({p.impl(), written, len, needs_grad(p.impl())});
        written += len;
    }
    if (taped) {
        auto oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [oi, infos, sp_out, total] {
            const real* g = oi->grad.data();
            for (const PartInfo& pi : infos) {
                if (!pi.grad) continue;
                pi.impl->ensure_grad();
                real* da = pi.impl->grad.data();
                for (int64_t o = 0; o < sp_out.outer; ++o) {
                    const real* src = g + (o * total + pi.offset) * sp_out.inner;
                    real* dst = da + o * pi.len * sp_out.inner;
                    for (int64_t i = 0; i < pi.len * sp_out.inner; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

// ----------------------------- softmax / layer norm -----------------------------

Tensor softmax(const Tensor& a, int64_t axis) {
    const Shape& s = a.shape();
    const AxisSplit sp = split_axis(s, axis);
    Tensor out = make_tensor(s);
    const real* pa = a.data();
    real* po = out.data();
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t in = 0; in < sp.inner; ++in) {
            const int64_t base = o * sp.len * sp.inner + in;
            real mx = pa[base];
            for (int64_t j = 1; j < sp.len; ++j)
                mx = std::max(mx, pa[base + j * sp.inner]);
            real denom = real(0);
            for (int64_t j = 0; j < sp.len; ++j) {
                const real e = std::exp(pa[base + j * sp.inner] - mx);
                po[base + j * sp.inner] = e;
                denom += e;
            }
            const real inv = real(1) / denom;
            for (int64_t j = 0; j < sp.len; ++j) po[base + j * sp.inner] *= inv;
        }
    }
    if (wants({&a})) {
        auto ai = a.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [ai, oi, sp] {
            ai->ensure_grad();
            const real* g = oi->grad.data();
            const real* y = oi->data.data();
            real* da = ai->grad.data();
            for (int64_t o = 0; o < sp.outer; ++o) {
                for (int64_t in = 0; in < sp.inner; ++in) {
                    const int64_t base = o * sp.len * sp.inner + in;
                    real dot = real(0);
                    for (int64_t j = 0; j < sp.len; ++j)
                        dot += g[base + j * sp.inner] * y[base + j * sp.inner];
                    for (int64_t j = 0; j < sp.len; ++j) {
                        const int64_t ix = base + j * sp.inner;
                        da[ix] += y[ix] * (g[ix] - dot);
                    }
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& a, real eps) {
    const Shape& s = a.shape();
    if (s.empty()) throw shape_error("layer_norm on rank-0 tensor");
    const int64_t len = s.back();
    const int64_t rows = a.numel() / len;
    Tensor out = make_tensor(s);
    const real* pa = a.data();
    real* po = out.data();
    const bool taped = wants({&a});
    std::vector<real> inv_std;
    if (taped) inv_std.resize(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const real* x = pa + r * len;
        real* y = po + r * len;
        real mu = real(0);
        for (int64_t j = 0; j < len; ++j) mu += x[j];
        mu /= real(len);
        real var = real(0);
        for (int64_t j = 0; j < len; ++j) {
            const real d = x[j] - mu;
            var += d * d;
        }
        var /= real(len);
        const real inv = real(1) / std::sqrt(var + eps);
        for (int64_t j = 0; j < len; ++j) y[j] = (x[j] - mu) * inv;
        if (taped) inv_std[static_cast<size_t>(r)] = inv;
    }
    if (taped) {
        auto ai = a.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [ai, oi, rows, len, inv = std::move(inv_std)] {
            ai->ensure_grad();
            const real* g = oi->grad.data();
            const real* y = oi->data.data();
            real* da = ai->grad.data();
            for (int64_t r = 0; r < rows; ++r) {
                const real* gr = g + r * len;
                const real* yr = y + r * len;
                real m1 = real(0), m2 = real(0);
                for (int64_t j = 0; j < len; ++j) {
                    m1 += gr[j];
                    m2 += gr[j] * yr[j];
                }
                m1 /= real(len);
                m2 /= real(len);
                const real is = inv[static_cast<size_t>(r)];
                real* dr = da + r * len;
                for (int64_t j = 0; j < len; ++j) dr[j] += is * (gr[j] - m1 - yr[j] * m2);
            }
        });
    }
    return out;
}

// ----------------------------- reductions -----------------------------

Tensor sum(const Tensor& a) {
    real acc = real(0);
    const real* pa = a.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) acc += pa[i];
    Tensor out = Tensor::from({1}, {acc});
    if (wants({&a})) {
        auto ai = a.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [ai, oi, n] {
            ai->ensure_grad();
            const real g = oi->grad[0];
            real* da = ai->grad.data();
            for (int64_t i = 0; i < n; ++i) da[i] += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& a) {
    const int64_t n = a.numel();
    real acc = real(0);
    const real* pa = a.data();
    for (int64_t i = 0; i < n; ++i) acc += pa[i];
    Tensor out = Tensor::from({1}, {acc / real(n)});
    if (wants({&a})) {
        auto ai = a.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [ai, oi, n] {
            ai->ensure_grad();
            const real g = oi->grad[0] / real(n);
            real* da = ai->grad.data();
            for (int64_t i = 0; i < n; ++i) da[i] += g;
        });
    }
    return out;
}

namespace {

Tensor reduce_axis(const Tensor& a, int64_t axis, bool take_mean) {
    const Shape& s = a.shape();
    const AxisSplit sp = split_axis(s, axis);
    Shape so;
    for (size_t d = 0; d < s.size(); ++d)
        if (static_cast<int64_t>(d) != axis) so.push_back(s[d]);
    if (so.empty()) so.push_back(1);
    Tensor out = make_tensor(so);
    const real* pa = a.data();
    real* po = out.data();
    const real scale = take_mean ? real(1) / real(sp.len) : real(1);
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t in = 0; in < sp.inner; ++in) {
            real acc = real(0);
            const int64_t base = o * sp.len * sp.inner + in;
            for (int64_t j = 0; j < sp.len; ++j) acc += pa[base + j * sp.inner];
            po[o * sp.inner + in] = acc * scale;
        }
    }
    if (wants({&a})) {
        auto ai = a.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [ai, oi, sp, scale] {
            ai->ensure_grad();
            const real* g = oi->grad.data();
            real* da = ai->grad.data();
            for (int64_t o = 0; o < sp.outer; ++o) {
                for (int64_t in = 0; in < sp.inner; ++in) {
                    const real gv = g[o * sp.inner + in] * scale;
                    const int64_t base = o * sp.len * sp.inner + in;
                    for (int64_t j = 0; j < sp.len; ++j) da[base + j * sp.inner] += gv;
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor sum_axis(const Tensor& a, int64_t axis) { return reduce_axis(a, axis, false); }
Tensor mean_axis(const Tensor& a, int64_t axis) { return reduce_axis(a, axis, true); }

// ----------------------------- gather / scatter -----------------------------

namespace {

void check_indices(const std::vector<int32_t>& idx, int64_t limit, const char* op) {
    for (int32_t v : idx)
        if (v < 0 || v >= limit)
            throw shape_error(std::string(op) + ": index " + std::to_string(v) +
                              " out of range [0, " + std::to_string(limit) + ")");
}

}  // namespace

Tensor gather_rows(const Tensor& table, const std::vector<int32_t>& idx, int64_t b, int64_t k) {
    const Shape& s = table.shape();
    if (s.size() != 2) throw shape_error("gather_rows: table must be rank 2, got " + shape_str(s));
    if (static_cast<int64_t>(idx.size()) != b * k)
        throw shape_error("gather_rows: index count mismatch");
    check_indices(idx, s[0], "gather_rows");
    const int64_t d = s[1];
    Tensor out = make_tensor({b, k, d});
    const real* pt = table.data();
    real* po = out.data();
    for (size_t r = 0; r < idx.size(); ++r)
        std::memcpy(po + static_cast<int64_t>(r) * d, pt + int64_t(idx[r]) * d,
                    static_cast<size_t>(d) * sizeof(real));
    if (wants({&table})) {
        auto ti = table.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [ti, oi, idx, d] {
            ti->ensure_grad();
            const real* g = oi->grad.data();
            real* dt = ti->grad.data();
            for (size_t r = 0; r < idx.size(); ++r) {
                real* dst = dt + int64_t(idx[r]) * d;
                const real* src = g + static_cast<int64_t>(r) * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor gather_rows_batched(const Tensor& x, const std::vector<int32_t>& idx, int64_t k) {
    const Shape& s = x.shape();
    if (s.size() != 3) throw shape_error("gather_rows_batched: need rank 3, got " + shape_str(s));
    const int64_t b = s[0], n = s[1], d = s[2];
    if (static_cast<int64_t>(idx.size()) != b * k)
        throw shape_error("gather_rows_batched: index count mismatch");
    check_indices(idx, n, "gather_rows_batched");
    Tensor out = make_tensor({b, k, d});
    const real* px = x.data();
    real* po = out.data();
    for (int64_t s_i = 0; s_i < b; ++s_i)
        for (int64_t r = 0; r < k; ++r)
            std::memcpy(po + (s_i * k + r) * d,
                        px + (s_i * n + idx[static_cast<size_t>(s_i * k + r)]) * d,
                        static_cast<size_t>(d) * sizeof(real));
    if (wants({&x})) {
        auto xi = x.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [xi, oi, idx, b, n, k, d] {
            xi->ensure_grad();
            const real* g = oi->grad.data();
            real* dx = xi->grad.data();
            for (int64_t s_i = 0; s_i < b; ++s_i) {
                for (int64_t r = 0; r < k; ++r) {
                    real* dst = dx + (s_i * n + idx[static_cast<size_t>(s_i * k + r)]) * d;
                    const real* src = g + (s_i * k + r) * d;
                    for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                }
            }
        });
    }
    return out;
}

Tensor scatter_rows(const Tensor& base, const std::vector<int32_t>& idx, const Tensor& rows) {
    const Shape& sb = base.shape();
    const Shape& sr = rows.shape();
    if (sb.size() != 3 || sr.size() != 3 || sb[0] != sr[0] || sb[2] != sr[2])
        mismatch("scatter_rows", sb, sr);
    const int64_t b = sb[0], n = sb[1], d = sb[2], k = sr[1];
    if (static_cast<int64_t>(idx.size()) != b * k)
        throw shape_error("scatter_rows: index count mismatch");
    check_indices(idx, n, "scatter_rows");
    // duplicate target positions within one sample are a caller bug
    std::vector<uint8_t> seen(static_cast<size_t>(n));
    for (int64_t s_i = 0; s_i < b; ++s_i) {
        std::fill(seen.begin(), seen.end(), 0);
        for (int64_t r = 0; r < k; ++r) {
            const int32_t p = idx[static_cast<size_t>(s_i * k + r)];
            if (seen[static_cast<size_t>(p)])
                throw contract_error("scatter_rows: position collision at row " + std::to_string(p));
            seen[static_cast<size_t>(p)] = 1;
        }
    }
    Tensor out = make_tensor(sb);
    std::memcpy(out.data(), base.data(), static_cast<size_t>(base.numel()) * sizeof(real));
    real* po = out.data();
    const real* pr = rows.data();
    for (int64_t s_i = 0; s_i < b; ++s_i)
        for (int64_t r = 0; r < k; ++r)
            std::memcpy(po + (s_i * n + idx[static_cast<size_t>(s_i * k + r)]) * d,
                        pr + (s_i * k + r) * d, static_cast<size_t>(d) * sizeof(real));
    if (wants({&base, &rows})) {
        auto bi = base.impl(), ri = rows.impl(), oi = out.impl();
        const bool gb = needs_grad(bi), gr = needs_grad(ri);
        oi->grad_path = true;
        Tape::record(oi, [bi, ri, oi, gb, gr, idx, b, n, k, d] {
            const real* g = oi->grad.data();
            if (gr) {
                ri->ensure_grad();
                real* dr = ri->grad.data();
                for (int64_t s_i = 0; s_i < b; ++s_i)
                    for (int64_t r = 0; r < k; ++r) {
                        const real* src = g + (s_i * n + idx[static_cast<size_t>(s_i * k + r)]) * d;
                        real* dst = dr + (s_i * k + r) * d;
                        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
            }
            if (gb) {
                bi->ensure_grad();
                real* db = bi->grad.data();
                std::vector<uint8_t> replaced(static_cast<size_t>(n));
                for (int64_t s_i = 0; s_i < b; ++s_i) {
                    std::fill(replaced.begin(), replaced.end(), 0);
                    for (int64_t r = 0; r < k; ++r)
                        replaced[static_cast<size_t>(idx[static_cast<size_t>(s_i * k + r)])] = 1;
                    for (int64_t row = 0; row < n; ++row) {
                        if (replaced[static_cast<size_t>(row)]) continue;
                        const real* src = g + (s_i * n + row) * d;
                        real* dst = db + (s_i * n + row) * d;
                        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor expand_leading(const Tensor& x, int64_t b) {
    if (b <= 0) throw shape_error("expand_leading: non-positive batch " + std::to_string(b));
    Shape so;
    so.push_back(b);
    for (int64_t e : x.shape()) so.push_back(e);
    Tensor out = make_tensor(so);
    const int64_t n = x.numel();
    const real* px = x.data();
    real* po = out.data();
    for (int64_t s_i = 0; s_i < b; ++s_i)
        std::memcpy(po + s_i * n, px, static_cast<size_t>(n) * sizeof(real));
    if (wants({&x})) {
        auto xi = x.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [xi, oi, b, n] {
            xi->ensure_grad();
            const real* g = oi->grad.data();
            real* dx = xi->grad.data();
            for (int64_t s_i = 0; s_i < b; ++s_i)
                for (int64_t i = 0; i < n; ++i) dx[i] += g[s_i * n + i];
        });
    }
    return out;
}

// ----------------------------- losses -----------------------------

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int32_t>& labels) {
    const Shape& s = logits.shape();
    if (s.size() != 2) throw shape_error("cross_entropy_logits: need rank 2, got " + shape_str(s));
    const int64_t b = s[0], c = s[1];
    if (static_cast<int64_t>(labels.size()) != b)
        throw shape_error("cross_entropy_logits: label count mismatch");
    check_indices(labels, c, "cross_entropy_logits");
    const real* pz = logits.data();
    std::vector<real> probs(static_cast<size_t>(b * c));
    real loss = real(0);
    for (int64_t i = 0; i < b; ++i) {
        const real* z = pz + i * c;
        real mx = z[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
        real denom = real(0);
        for (int64_t j = 0; j < c; ++j) {
            const real e = std::exp(z[j] - mx);
            probs[static_cast<size_t>(i * c + j)] = e;
            denom += e;
        }
        const real inv = real(1) / denom;
        for (int64_t j = 0; j < c; ++j) probs[static_cast<size_t>(i * c + j)] *= inv;
        loss -= std::log(probs[static_cast<size_t>(i * c + labels[static_cast<size_t>(i)])]);
    }
    loss /= real(b);
    Tensor out = Tensor::from({1}, {loss});
    if (wants({&logits})) {
        auto zi = logits.impl(), oi = out.impl();
        oi->grad_path = true;
        Tape::record(oi, [zi, oi, labels, b, c, p = std::move(probs)] {
            zi->ensure_grad();
            const real g = oi->grad[0] / real(b);
            real* dz = zi->grad.data();
            for (int64_t i = 0; i < b; ++i) {
                for (int64_t j = 0; j < c; ++j) {
                    real v = p[static_cast<size_t>(i * c + j)];
                    if (j == labels[static_cast<size_t>(i)]) v -= real(1);
                    dz[i * c + j] += g * v;
                }
            }
        });
    }
    return out;
}

bool all_finite(const Tensor& t) {
    for (real v : t.values())
        if (!std::isfinite(v)) return false;
    return true;
}

bool all_finite_grad(const Tensor& t) {
    for (real v : t.grad())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace cupid
