#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "avmae/errors.hpp"

namespace avmae {

using Shape = std::vector<size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

// Dense fp64 row-major tensor. Copies are shallow handles onto shared
// storage; ops return fresh tensors. The gradient buffer lives next to the
// values and is allocated lazily on first accumulation.
class Tensor {
public:
    struct Storage {
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;  // empty until touched
        bool requires_grad = false;
        uint64_t id = 0;
    };

    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return make(std::move(shape), 0.0);
    }
    static Tensor full(Shape shape, double v) {
        return make(std::move(shape), v);
    }
    static Tensor from_vector(Shape shape, std::vector<double> values) {
        if (values.size() != shape_numel(shape)) {
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        }
        Tensor t;
        t.s_ = std::make_shared<Storage>();
        t.s_->shape = std::move(shape);
        t.s_->values = std::move(values);
        t.s_->id = next_id();
        return t;
    }

    bool defined() const { return static_cast<bool>(s_); }
    const Shape& shape() const { return s_->shape; }
    size_t rank() const { return s_->shape.size(); }
    size_t size() const { return s_->values.size(); }
    uint64_t id() const { return s_->id; }

    size_t rows() const {
        require_rank2("rows()");
        return s_->shape[0];
    }
    size_t cols() const {
        require_rank2("cols()");
        return s_->shape[1];
    }

    // Tensor is a handle with pointer semantics: a const Tensor still
    // exposes mutable views of the shared storage, like shared_ptr does.
    std::vector<double>& data() const { return s_->values; }

    double& at(size_t i) const { return s_->values[i]; }
    double& at(size_t i, size_t j) const { return s_->values[i * cols() + j]; }

    // Value of a scalar (single-element) tensor.
    double value() const {
        if (size() != 1) {
            throw ContractError("value() requires a scalar tensor, got shape " +
                                shape_str(s_->shape));
        }
        return s_->values[0];
    }

    bool requires_grad() const { return s_->requires_grad; }
    const Tensor& set_requires_grad(bool rg) const {
        s_->requires_grad = rg;
        return *this;
    }

    bool has_grad() const { return !s_->grad.empty(); }
    std::vector<double>& grad() const {
        ensure_grad();
        return s_->grad;
    }
    void zero_grad() const {
        if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
    }
    void ensure_grad() const {
        if (s_->grad.empty()) s_->grad.assign(s_->values.size(), 0.0);
    }

    // Deep copy of values only (fresh leaf; grad state not copied).
    Tensor clone() const {
        Tensor t = from_vector(s_->shape, s_->values);
        return t;
    }

    std::shared_ptr<Storage> storage() const { return s_; }

private:
    static Tensor make(Shape shape, double fill) {
        Tensor t;
        t.s_ = std::make_shared<Storage>();
        t.s_->values.assign(shape_numel(shape), fill);
        t.s_->shape = std::move(shape);
        t.s_->id = next_id();
        return t;
    }
    static uint64_t next_id() {
        static thread_local uint64_t counter = 0;
        return ++counter;
    }
    void require_rank2(const char* what) const {
        if (s_->shape.size() != 2) {
            throw ShapeError(std::string(what) + " requires a rank-2 tensor, got " +
                             shape_str(s_->shape));
        }
    }

    std::shared_ptr<Storage> s_;
};

// Reverse-mode tape. Operations append themselves in execution order, so the
// entry list is topologically ordered by construction: every entry's inputs
// were created (and any producing entries recorded) before it. Single writer;
// one active tape per thread, activated RAII-style.
class Tape {
public:
    struct Entry {
        uint64_t out_id;
        std::vector<uint64_t> in_ids;
        std::function<void()> backprop;
    };

    Tape() {
        if (active_) throw ContractError("a tape is already active on this thread");
        active_ = this;
    }
    ~Tape() { active_ = nullptr; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(uint64_t out_id, std::vector<uint64_t> in_ids,
                std::function<void()> backprop) {
        entries_.push_back({out_id, std::move(in_ids), std::move(backprop)});
    }

    bool empty() const { return entries_.empty(); }
    size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }

    void run_backward() {
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            it->backprop();
        }
    }

private:
    static inline thread_local Tape* active_ = nullptr;
    std::vector<Entry> entries_;
};

namespace detail {

inline bool grad_pending(const Tensor& out) {
    // Skip backprop through branches whose output never received gradient.
    return out.has_grad();
}

inline void record_op(const Tensor& out, std::initializer_list<Tensor> ins,
                      std::function<void()> backprop) {
    Tape* tape = Tape::active();
    if (!tape) return;
    bool any = false;
    for (const Tensor& t : ins) any = any || t.requires_grad();
    if (!any) return;
    out.set_requires_grad(true);
    std::vector<uint64_t> in_ids;
    in_ids.reserve(ins.size());
    for (const Tensor& t : ins) in_ids.push_back(t.id());
    tape->record(out.id(), std::move(in_ids), std::move(backprop));
}

inline void record_op(const Tensor& out, const std::vector<Tensor>& ins,
                      std::function<void()> backprop) {
    Tape* tape = Tape::active();
    if (!tape) return;
    bool any = false;
    for (const Tensor& t : ins) any = any || t.requires_grad();
    if (!any) return;
    out.set_requires_grad(true);
    std::vector<uint64_t> in_ids;
    in_ids.reserve(ins.size());
    for (const Tensor& t : ins) in_ids.push_back(t.id());
    tape->record(out.id(), std::move(in_ids), std::move(backprop));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

inline void check_finite(const Tensor& t, const char* op) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite input value");
        }
    }
}

inline void check_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_str(t.shape()));
    }
}

// C[m x n] (+)= A[m x k] * B[k x n]
inline void mm_nn(const double* a, const double* b, double* c, size_t m, size_t k,
                  size_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] (+)= A[m x k] * B[n x k]^T
inline void mm_nt(const double* a, const double* b, double* c, size_t m, size_t k,
                  size_t n, bool accumulate) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

// C[k x n] (+)= A[m x k]^T * B[m x n]
inline void mm_tn(const double* a, const double* b, double* c, size_t m, size_t k,
                  size_t n, bool accumulate) {
    if (!accumulate) std::fill(c, c + k * n, 0.0);
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix product ops.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_rank2(a, "matmul");
    detail::check_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    const size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c = Tensor::zeros({m, n});
    detail::mm_nn(a.data().data(), b.data().data(), c.data().data(), m, k, n, false);
    detail::record_op(c, {a, b}, [a, b, c]() mutable {
        if (!detail::grad_pending(c)) return;
        const size_t m = a.rows(), k = a.cols(), n = b.cols();
        const double* dc = c.grad().data();
        if (a.requires_grad()) {
            detail::mm_nt(dc, b.data().data(), a.grad().data(), m, n, k, true);
        }
        if (b.requires_grad()) {
            detail::mm_tn(a.data().data(), dc, b.grad().data(), m, k, n, true);
        }
    });
    return c;
}

// a [m x k] times b[n x k] transposed -> [m x n]
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::check_rank2(a, "matmul_nt");
    detail::check_rank2(b, "matmul_nt");
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
    }
    const size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor c = Tensor::zeros({m, n});
    detail::mm_nt(a.data().data(), b.data().data(), c.data().data(), m, k, n, false);
    detail::record_op(c, {a, b}, [a, b, c]() mutable {
        if (!detail::grad_pending(c)) return;
        const size_t m = a.rows(), k = a.cols(), n = b.rows();
        const double* dc = c.grad().data();
        if (a.requires_grad()) {
            detail::mm_nn(dc, b.data().data(), a.grad().data(), m, n, k, true);
        }
        if (b.requires_grad()) {
            detail::mm_tn(dc, a.data().data(), b.grad().data(), m, n, k, true);
        }
    });
    return c;
}

// ---------------------------------------------------------------------------
// Elementwise suite.
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    detail::check_finite(a, "add");
    detail::check_finite(b, "add");
    Tensor c = Tensor::zeros(a.shape());
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) c.at(i) = a.at(i) + b.at(i);
    detail::record_op(c, {a, b}, [a, b, c]() mutable {
        if (!detail::grad_pending(c)) return;
        const auto& dc = c.grad();
        if (a.requires_grad()) {
            auto& da = a.grad();
            for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
        }
        if (b.requires_grad()) {
            auto& db = b.grad();
            for (size_t i = 0; i < dc.size(); ++i) db[i] += dc[i];
        }
    });
    return c;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    detail::check_finite(a, "sub");
    detail::check_finite(b, "sub");
    Tensor c = Tensor::zeros(a.shape());
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) c.at(i) = a.at(i) - b.at(i);
    detail::record_op(c, {a, b}, [a, b, c]() mutable {
        if (!detail::grad_pending(c)) return;
        const auto& dc = c.grad();
        if (a.requires_grad()) {
            auto& da = a.grad();
            for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
        }
        if (b.requires_grad()) {
            auto& db = b.grad();
            for (size_t i = 0; i < dc.size(); ++i) db[i] -= dc[i];
        }
    });
    return c;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    detail::check_finite(a, "mul");
    detail::check_finite(b, "mul");
    Tensor c = Tensor::zeros(a.shape());
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) c.at(i) = a.at(i) * b.at(i);
    detail::record_op(c, {a, b}, [a, b, c]() mutable {
        if (!detail::grad_pending(c)) return;
        const auto& dc = c.grad();
        if (a.requires_grad()) {
            auto& da = a.grad();
            for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * b.at(i);
        }
        if (b.requires_grad()) {
            auto& db = b.grad();
            for (size_t i = 0; i < dc.size(); ++i) db[i] += dc[i] * a.at(i);
        }
    });
    return c;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor c = Tensor::zeros(a.shape());
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) c.at(i) = a.at(i) * s;
    detail::record_op(c, {a}, [a, c, s]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!a.requires_grad()) return;
        const auto& dc = c.grad();
        auto& da = a.grad();
        for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * s;
    });
    return c;
}

// x [L x d] plus a length-d vector broadcast over rows.
inline Tensor add_rowvector(const Tensor& x, const Tensor& v) {
    detail::check_rank2(x, "add_rowvector");
    if (v.rank() != 1 || v.size() != x.cols()) {
        throw ShapeError("add_rowvector: vector shape " + shape_str(v.shape()) +
                         " does not match columns of " + shape_str(x.shape()));
    }
    Tensor c = Tensor::zeros(x.shape());
    const size_t L = x.rows(), d = x.cols();
    for (size_t i = 0; i < L; ++i)
        for (size_t j = 0; j < d; ++j) c.at(i, j) = x.at(i, j) + v.at(j);
    detail::record_op(c, {x, v}, [x, v, c]() mutable {
        if (!detail::grad_pending(c)) return;
        const size_t L = x.rows(), d = x.cols();
        const auto& dc = c.grad();
        if (x.requires_grad()) {
            auto& dx = x.grad();
            for (size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i];
        }
        if (v.requires_grad()) {
            auto& dv = v.grad();
            for (size_t i = 0; i < L; ++i)
                for (size_t j = 0; j < d; ++j) dv[j] += dc[i * d + j];
        }
    });
    return c;
}

inline Tensor mul_rowvector(const Tensor& x, const Tensor& v) {
    detail::check_rank2(x, "mul_rowvector");
    if (v.rank() != 1 || v.size() != x.cols()) {
        throw ShapeError("mul_rowvector: vector shape " + shape_str(v.shape()) +
                         " does not match columns of " + shape_str(x.shape()));
    }
    Tensor c = Tensor::zeros(x.shape());
    const size_t L = x.rows(), d = x.cols();
    for (size_t i = 0; i < L; ++i)
        for (size_t j = 0; j < d; ++j) c.at(i, j) = x.at(i, j) * v.at(j);
    detail::record_op(c, {x, v}, [x, v, c]() mutable {
        if (!detail::grad_pending(c)) return;
        const size_t L = x.rows(), d = x.cols();
        const auto& dc = c.grad();
        if (x.requires_grad()) {
            auto& dx = x.grad();
            for (size_t i = 0; i < L; ++i)
                for (size_t j = 0; j < d; ++j) dx[i * d + j] += dc[i * d + j] * v.at(j);
        }
        if (v.requires_grad()) {
            auto& dv = v.grad();
            for (size_t i = 0; i < L; ++i)
                for (size_t j = 0; j < d; ++j) dv[j] += dc[i * d + j] * x.at(i, j);
        }
    });
    return c;
}

inline Tensor gelu(const Tensor& x) {
    detail::check_finite(x, "gelu");
    Tensor c = Tensor::zeros(x.shape());
    const size_t n = x.size();
    constexpr double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
    for (size_t i = 0; i < n; ++i) {
        const double v = x.at(i);
        c.at(i) = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    detail::record_op(c, {x}, [x, c]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!x.requires_grad()) return;
        constexpr double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        const auto& dc = c.grad();
        auto& dx = x.grad();
        for (size_t i = 0; i < dc.size(); ++i) {
            const double v = x.at(i);
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            dx[i] += dc[i] * (cdf + v * pdf);
        }
    });
    return c;
}

// Row-wise normalization to zero mean / unit variance (no affine part).
inline Tensor layernorm(const Tensor& x, double eps) {
    detail::check_rank2(x, "layernorm");
    detail::check_finite(x, "layernorm");
    if (!(eps > 0.0)) throw NumericError("layernorm: eps must be > 0");
    const size_t L = x.rows(), d = x.cols();
    Tensor c = Tensor::zeros(x.shape());
    std::vector<double> inv_std(L);
    for (size_t i = 0; i < L; ++i) {
        double mean = 0.0;
        for (size_t j = 0; j < d; ++j) mean += x.at(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double dv = x.at(i, j) - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[i] = istd;
        for (size_t j = 0; j < d; ++j) c.at(i, j) = (x.at(i, j) - mean) * istd;
    }
    detail::record_op(c, {x}, [x, c, inv_std = std::move(inv_std)]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!x.requires_grad()) return;
        const size_t L = x.rows(), d = x.cols();
        const auto& dc = c.grad();
        auto& dx = x.grad();
        for (size_t i = 0; i < L; ++i) {
            double mean_dy = 0.0, mean_dyy = 0.0;
            for (size_t j = 0; j < d; ++j) {
                const double dy = dc[i * d + j];
                mean_dy += dy;
                mean_dyy += dy * c.at(i, j);
            }
            mean_dy /= static_cast<double>(d);
            mean_dyy /= static_cast<double>(d);
            for (size_t j = 0; j < d; ++j) {
                const double dy = dc[i * d + j];
                dx[i * d + j] += inv_std[i] * (dy - mean_dy - c.at(i, j) * mean_dyy);
            }
        }
    });
    return c;
}

// Softmax along an axis of a rank-2 tensor (axis 1 = rows, the default;
// axis 0 = columns). Max-subtracted for stability.
inline Tensor softmax(const Tensor& x, int axis = 1) {
    detail::check_rank2(x, "softmax");
    detail::check_finite(x, "softmax");
    if (axis == -1) axis = 1;
    if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
    const size_t L = x.rows(), d = x.cols();
    const size_t outer = (axis == 1) ? L : d;
    const size_t inner = (axis == 1) ? d : L;
    const size_t ostride = (axis == 1) ? d : 1;
    const size_t istride = (axis == 1) ? 1 : d;
    Tensor c = Tensor::zeros(x.shape());
    for (size_t i = 0; i < outer; ++i) {
        const double* xr = x.data().data() + i * ostride;
        double* cr = c.data().data() + i * ostride;
        double mx = xr[0];
        for (size_t j = 1; j < inner; ++j) mx = std::max(mx, xr[j * istride]);
        double sum = 0.0;
        for (size_t j = 0; j < inner; ++j) {
            const double e = std::exp(xr[j * istride] - mx);
            cr[j * istride] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (size_t j = 0; j < inner; ++j) cr[j * istride] *= inv;
    }
    detail::record_op(c, {x}, [x, c, outer, inner, ostride, istride]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!x.requires_grad()) return;
        const auto& dc = c.grad();
        auto& dx = x.grad();
        for (size_t i = 0; i < outer; ++i) {
            double dot = 0.0;
            for (size_t j = 0; j < inner; ++j) {
                const size_t k = i * ostride + j * istride;
                dot += dc[k] * c.at(k);
            }
            for (size_t j = 0; j < inner; ++j) {
                const size_t k = i * ostride + j * istride;
                dx[k] += c.at(k) * (dc[k] - dot);
            }
        }
    });
    return c;
}

inline Tensor log(const Tensor& x) {
    Tensor c = Tensor::zeros(x.shape());
    const size_t n = x.size();
    for (size_t i = 0; i < n; ++i) {
        const double v = x.at(i);
        if (!(v > 0.0)) throw NumericError("log: non-positive input");
        c.at(i) = std::log(v);
    }
    detail::record_op(c, {x}, [x, c]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!x.requires_grad()) return;
        const auto& dc = c.grad();
        auto& dx = x.grad();
        for (size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i] / x.at(i);
    });
    return c;
}

// ---------------------------------------------------------------------------
// Shape / selection ops.
// ---------------------------------------------------------------------------

inline Tensor transpose(const Tensor& x) {
    detail::check_rank2(x, "transpose");
    const size_t L = x.rows(), d = x.cols();
    Tensor c = Tensor::zeros({d, L});
    for (size_t i = 0; i < L; ++i)
        for (size_t j = 0; j < d; ++j) c.at(j, i) = x.at(i, j);
    detail::record_op(c, {x}, [x, c]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!x.requires_grad()) return;
        const size_t L = x.rows(), d = x.cols();
        const auto& dc = c.grad();
        auto& dx = x.grad();
        for (size_t i = 0; i < L; ++i)
            for (size_t j = 0; j < d; ++j) dx[i * d + j] += dc[j * L + i];
    });
    return c;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    Tensor c = Tensor::from_vector(std::move(shape), x.data());
    detail::record_op(c, {x}, [x, c]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!x.requires_grad()) return;
        const auto& dc = c.grad();
        auto& dx = x.grad();
        for (size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i];
    });
    return c;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const size_t d = parts[0].cols();
    size_t total = 0;
    for (const Tensor& p : parts) {
        detail::check_rank2(p, "concat_rows");
        if (p.cols() != d) {
            throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()) +
                             " vs expected cols " + std::to_string(d));
        }
        total += p.rows();
    }
    Tensor c = Tensor::zeros({total, d});
    size_t row = 0;
    for (const Tensor& p : parts) {
        std::copy(p.data().begin(), p.data().end(), c.data().begin() + row * d);
        row += p.rows();
    }
    detail::record_op(c, parts, [parts, c, d]() mutable {
        if (!detail::grad_pending(c)) return;
        const auto& dc = c.grad();
        size_t row = 0;
        for (const Tensor& p : parts) {
            if (p.requires_grad()) {
                auto& dp = p.grad();
                const size_t n = p.size();
                for (size_t i = 0; i < n; ++i) dp[i] += dc[row * d + i];
            }
            row += p.rows();
        }
    });
    return c;
}

inline Tensor slice_rows(const Tensor& x, size_t start, size_t len) {
    detail::check_rank2(x, "slice_rows");
    if (start + len > x.rows()) {
        throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") exceeds rows of " +
                         shape_str(x.shape()));
    }
    const size_t d = x.cols();
    Tensor c = Tensor::zeros({len, d});
    std::copy(x.data().begin() + start * d, x.data().begin() + (start + len) * d,
              c.data().begin());
    detail::record_op(c, {x}, [x, c, start, d]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!x.requires_grad()) return;
        const auto& dc = c.grad();
        auto& dx = x.grad();
        for (size_t i = 0; i < dc.size(); ++i) dx[start * d + i] += dc[i];
    });
    return c;
}

inline Tensor slice_cols(const Tensor& x, size_t start, size_t len) {
    detail::check_rank2(x, "slice_cols");
    if (start + len > x.cols()) {
        throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") exceeds cols of " +
                         shape_str(x.shape()));
    }
    const size_t L = x.rows(), d = x.cols();
    Tensor c = Tensor::zeros({L, len});
    for (size_t i = 0; i < L; ++i)
        for (size_t j = 0; j < len; ++j) c.at(i, j) = x.at(i, start + j);
    detail::record_op(c, {x}, [x, c, start, len]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!x.requires_grad()) return;
        const size_t L = x.rows(), d = x.cols();
        const auto& dc = c.grad();
        auto& dx = x.grad();
        for (size_t i = 0; i < L; ++i)
            for (size_t j = 0; j < len; ++j) dx[i * d + start + j] += dc[i * len + j];
    });
    return c;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const size_t L = parts[0].rows();
    size_t total = 0;
    for (const Tensor& p : parts) {
        detail::check_rank2(p, "concat_cols");
        if (p.rows() != L) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
        }
        total += p.cols();
    }
    Tensor c = Tensor::zeros({L, total});
    size_t col = 0;
    for (const Tensor& p : parts) {
        const size_t pc = p.cols();
        for (size_t i = 0; i < L; ++i)
            for (size_t j = 0; j < pc; ++j) c.at(i, col + j) = p.at(i, j);
        col += pc;
    }
    detail::record_op(c, parts, [parts, c, L, total]() mutable {
        if (!detail::grad_pending(c)) return;
        const auto& dc = c.grad();
        size_t col = 0;
        for (const Tensor& p : parts) {
            const size_t pc = p.cols();
            if (p.requires_grad()) {
                auto& dp = p.grad();
                for (size_t i = 0; i < L; ++i)
                    for (size_t j = 0; j < pc; ++j) dp[i * pc + j] += dc[i * total + col + j];
            }
            col += pc;
        }
    });
    return c;
}

// Rows of x selected by index; duplicates allowed (backward scatter-adds).
inline Tensor gather_rows(const Tensor& x, const std::vector<size_t>& idx) {
    detail::check_rank2(x, "gather_rows");
    const size_t L = x.rows(), d = x.cols();
    for (size_t i : idx) {
        if (i >= L) {
            throw PlanError("gather_rows: index " + std::to_string(i) +
                            " out of range for " + shape_str(x.shape()));
        }
    }
    Tensor c = Tensor::zeros({idx.size(), d});
    for (size_t r = 0; r < idx.size(); ++r) {
        std::copy(x.data().begin() + idx[r] * d, x.data().begin() + (idx[r] + 1) * d,
                  c.data().begin() + r * d);
    }
    detail::record_op(c, {x}, [x, c, idx, d]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!x.requires_grad()) return;
        const auto& dc = c.grad();
        auto& dx = x.grad();
        for (size_t r = 0; r < idx.size(); ++r)
            for (size_t j = 0; j < d; ++j) dx[idx[r] * d + j] += dc[r * d + j];
    });
    return c;
}

// Entries x[rows[i], cols[i]] as a length-n vector.
inline Tensor pick(const Tensor& x, const std::vector<size_t>& rows,
                   const std::vector<size_t>& cols) {
    detail::check_rank2(x, "pick");
    if (rows.size() != cols.size()) throw ShapeError("pick: index lists differ in length");
    const size_t R = x.rows(), C = x.cols();
    Tensor c = Tensor::zeros({rows.size()});
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= R || cols[i] >= C) throw ShapeError("pick: index out of range");
        c.at(i) = x.at(rows[i], cols[i]);
    }
    detail::record_op(c, {x}, [x, c, rows, cols]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!x.requires_grad()) return;
        const size_t C = x.cols();
        const auto& dc = c.grad();
        auto& dx = x.grad();
        for (size_t i = 0; i < rows.size(); ++i) dx[rows[i] * C + cols[i]] += dc[i];
    });
    return c;
}

// ---------------------------------------------------------------------------
// Reductions and norms.
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
    Tensor c = Tensor::zeros({1});
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    c.at(0) = acc;
    detail::record_op(c, {x}, [x, c]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!x.requires_grad()) return;
        const double g = c.grad()[0];
        auto& dx = x.grad();
        for (size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    });
    return c;
}

inline Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// Sequence-mean: [L x d] -> [1 x d].
inline Tensor mean_rows(const Tensor& x) {
    detail::check_rank2(x, "mean_rows");
    const size_t L = x.rows(), d = x.cols();
    Tensor c = Tensor::zeros({1, d});
    for (size_t i = 0; i < L; ++i)
        for (size_t j = 0; j < d; ++j) c.at(0, j) += x.at(i, j);
    const double inv = 1.0 / static_cast<double>(L);
    for (size_t j = 0; j < d; ++j) c.at(0, j) *= inv;
    detail::record_op(c, {x}, [x, c, inv]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!x.requires_grad()) return;
        const size_t L = x.rows(), d = x.cols();
        const auto& dc = c.grad();
        auto& dx = x.grad();
        for (size_t i = 0; i < L; ++i)
            for (size_t j = 0; j < d; ++j) dx[i * d + j] += dc[j] * inv;
    });
    return c;
}

// Rows scaled to unit L2 norm. A zero-norm row is a numeric error.
inline Tensor l2_normalize_rows(const Tensor& x) {
    detail::check_rank2(x, "l2_normalize_rows");
    const size_t L = x.rows(), d = x.cols();
    Tensor c = Tensor::zeros(x.shape());
    std::vector<double> inv_norm(L);
    for (size_t i = 0; i < L; ++i) {
        double sq = 0.0;
        for (size_t j = 0; j < d; ++j) sq += x.at(i, j) * x.at(i, j);
        if (!(sq > 0.0)) {
            throw NumericError("l2_normalize_rows: zero-norm row " + std::to_string(i));
        }
        inv_norm[i] = 1.0 / std::sqrt(sq);
        for (size_t j = 0; j < d; ++j) c.at(i, j) = x.at(i, j) * inv_norm[i];
    }
    detail::record_op(c, {x}, [x, c, inv_norm = std::move(inv_norm)]() mutable {
        if (!detail::grad_pending(c)) return;
        if (!x.requires_grad()) return;
        const size_t L = x.rows(), d = x.cols();
        const auto& dc = c.grad();
        auto& dx = x.grad();
        for (size_t i = 0; i < L; ++i) {
            double dot = 0.0;
            for (size_t j = 0; j < d; ++j) dot += dc[i * d + j] * c.at(i, j);
            for (size_t j = 0; j < d; ++j)
                dx[i * d + j] += inv_norm[i] * (dc[i * d + j] - c.at(i, j) * dot);
        }
    });
    return c;
}

// ---------------------------------------------------------------------------
// Backward driver.
// ---------------------------------------------------------------------------

// Seeds d(loss)/d(loss) = 1 and runs the active tape in reverse, accumulating
// into .grad() of every tensor with requires_grad on the path.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_str(loss.shape()));
    }
    Tape* tape = Tape::active();
    if (!tape || tape->empty()) {
        throw ContractError("backward: no recorded operations on the active tape");
    }
    loss.grad()[0] += 1.0;
    tape->run_backward();
}

}  // namespace avmae
