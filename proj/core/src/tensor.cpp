#include "omni/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "omni/rng.hpp"

namespace omni {

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

static int64_t shape_numel(const std::vector<int64_t> & shape) {
    if (shape.empty()) throw ShapeError("tensor: empty shape is not allowed");
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("tensor: non-positive dimension in shape");
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int64_t> shape, Dtype dt, bool requires_grad) {
    Tensor t;
    int64_t n = shape_numel(shape);
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->value.assign(static_cast<size_t>(n), 0.0);
    t.impl_->requires_grad = requires_grad;
    t.impl_->dtype = dt;
    return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double v, Dtype dt, bool requires_grad) {
    Tensor t = zeros(std::move(shape), dt, requires_grad);
    double vv = dt == Dtype::f32 ? static_cast<double>(static_cast<float>(v)) : v;
    std::fill(t.impl_->value.begin(), t.impl_->value.end(), vv);
    return t;
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data, Dtype dt, bool requires_grad) {
    int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(data.size())) {
        throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                         " does not match shape product " + std::to_string(n));
    }
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->value = std::move(data);
    t.impl_->requires_grad = requires_grad;
    t.impl_->dtype = dt;
    if (dt == Dtype::f32) {
        for (double & v : t.impl_->value) v = static_cast<double>(static_cast<float>(v));
    }
    return t;
}

Tensor Tensor::scalar(double v, Dtype dt, bool requires_grad) {
    return from_data({1}, {v}, dt, requires_grad);
}

int64_t Tensor::cols() const { return impl_->shape.back(); }
int64_t Tensor::rows() const { return numel() / cols(); }

void Tensor::set_requires_grad(bool rg) { impl_->requires_grad = rg; }

std::vector<double> & Tensor::grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("tensor: item() on non-scalar " + shape_str());
    return impl_->value[0];
}

Tensor Tensor::clone() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>(*impl_);
    t.impl_->grad.clear();
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < impl_->shape.size(); ++i) {
        if (i) os << ",";
        os << impl_->shape[i];
    }
    os << "]";
    return os.str();
}

void fill_normal(Tensor & t, double stddev, uint64_t seed) {
    Rng rng(seed);
    bool f32 = t.dtype() == Dtype::f32;
    for (double & v : t.data()) {
        double x = rng.normal() * stddev;
        v = f32 ? static_cast<double>(static_cast<float>(x)) : x;
    }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

static thread_local std::vector<Tape *> g_tape_stack;
static thread_local int g_no_grad_depth = 0;

Tape::Tape() { g_tape_stack.push_back(this); }

Tape::~Tape() {
    auto it = std::find(g_tape_stack.rbegin(), g_tape_stack.rend(), this);
    if (it != g_tape_stack.rend()) g_tape_stack.erase(std::next(it).base());
}

Tape * Tape::active() {
    return g_tape_stack.empty() ? nullptr : g_tape_stack.back();
}

void Tape::record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor & scalar_loss) {
    if (consumed_) throw NumericError("tape: backward called twice on one tape");
    if (scalar_loss.numel() != 1) {
        throw ShapeError("tape: backward requires a scalar loss, got " + scalar_loss.shape_str());
    }
    if (!scalar_loss.requires_grad()) {
        throw NumericError("tape: loss does not require grad (no parameters reachable?)");
    }
    scalar_loss.impl()->grad.assign(1, 1.0);
    // Reverse tape order visits each recorded node exactly once.
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
    consumed_ = true;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool NoGradGuard::active() { return g_no_grad_depth > 0; }

static bool recording() { return Tape::active() != nullptr && !NoGradGuard::active(); }

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

static void ensure_grad(const std::shared_ptr<TensorImpl> & t) {
    if (t->grad.empty()) t->grad.assign(t->value.size(), 0.0);
}

static void check_finite(const char * prim, const Tensor & t) {
    // branch-free screen: v * 0 is NaN exactly when v is NaN or infinite;
    // four independent accumulators keep the scan off the FP-add chain
    const std::vector<double> & d = t.data();
    size_t n4 = d.size() & ~size_t(3);
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    size_t i = 0;
    for (; i < n4; i += 4) {
        a0 += d[i] * 0.0;
        a1 += d[i + 1] * 0.0;
        a2 += d[i + 2] * 0.0;
        a3 += d[i + 3] * 0.0;
    }
    for (; i < d.size(); ++i) a0 += d[i] * 0.0;
    if (!((a0 + a1) + (a2 + a3) == 0.0)) {
        throw NumericError(std::string(prim) + ": non-finite input value");
    }
}

static void check_same_dtype(const char * prim, const Tensor & a, const Tensor & b) {
    if (a.dtype() != b.dtype()) {
        throw ShapeError(std::string(prim) + ": dtype mismatch " + dtype_name(a.dtype()) +
                         " vs " + dtype_name(b.dtype()));
    }
}

static void round_if_f32(Tensor & t) {
    if (t.dtype() != Dtype::f32) return;
    for (double & v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

bool all_finite(const Tensor & x) {
    for (double v : x.data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

int64_t argmax_row(const Tensor & x, int64_t row) {
    int64_t c = x.cols();
    const double * p = x.data().data() + row * c;
    int64_t best = 0;
    for (int64_t j = 1; j < c; ++j) {
        if (p[j] > p[best]) best = j;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Matmul kernels (accumulating, row-major)
// ---------------------------------------------------------------------------

// Kernels accumulate with a fixed 4-way k-unrolled order, so any output
// element sees the same summation grouping no matter how rows are chunked
// (keeps cached and full-sequence decoding bit-identical). Zero row groups
// are skipped: masked cross-entropy rows backpropagate entire zero rows.

// C[M,N] += A[M,K] * B[K,N]
static void mm_acc(const double * __restrict A, const double * __restrict B, double * __restrict C,
                   int64_t M, int64_t K, int64_t N) {
    int64_t K4 = K & ~int64_t(3);
    for (int64_t i = 0; i < M; ++i) {
        const double * a = A + i * K;
        double * c = C + i * N;
        int64_t k = 0;
        for (; k < K4; k += 4) {
            double a0 = a[k], a1 = a[k + 1], a2 = a[k + 2], a3 = a[k + 3];
            if (a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0) continue;
            const double * b0 = B + k * N;
            const double * b1 = b0 + N;
            const double * b2 = b1 + N;
            const double * b3 = b2 + N;
            for (int64_t j = 0; j < N; ++j) {
                c[j] += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
            }
        }
        for (; k < K; ++k) {
            double av = a[k];
            if (av == 0.0) continue;
            const double * b = B + k * N;
            for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
// Transposes B into a scratch once (amortized over M rows) and streams with
// the same grouped order as mm_acc, so dot-product shapes vectorize instead
// of running four scalar gather chains.
static void mm_nt_acc(const double * __restrict A, const double * __restrict B, double * __restrict C,
                      int64_t M, int64_t K, int64_t N) {
    static thread_local std::vector<double> scratch;
    scratch.resize(static_cast<size_t>(K * N));
    for (int64_t j = 0; j < N; ++j) {
        const double * b = B + j * K;
        for (int64_t k = 0; k < K; ++k) scratch[static_cast<size_t>(k * N + j)] = b[k];
    }
    mm_acc(A, scratch.data(), C, M, K, N);
}

// C[K,N] += A[M,K]^T * B[M,N]
static void mm_tn_acc(const double * __restrict A, const double * __restrict B, double * __restrict C,
                      int64_t M, int64_t K, int64_t N) {
    int64_t M4 = M & ~int64_t(3);
    int64_t m = 0;
    for (; m < M4; m += 4) {
        const double * a0 = A + m * K;
        const double * a1 = a0 + K;
        const double * a2 = a1 + K;
        const double * a3 = a2 + K;
        const double * b0 = B + m * N;
        const double * b1 = b0 + N;
        const double * b2 = b1 + N;
        const double * b3 = b2 + N;
        for (int64_t k = 0; k < K; ++k) {
            double v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            if (v0 == 0.0 && v1 == 0.0 && v2 == 0.0 && v3 == 0.0) continue;
            double * c = C + k * N;
            for (int64_t j = 0; j < N; ++j) {
                c[j] += (v0 * b0[j] + v1 * b1[j]) + (v2 * b2[j] + v3 * b3[j]);
            }
        }
    }
    for (; m < M; ++m) {
        const double * a = A + m * K;
        const double * b = B + m * N;
        for (int64_t k = 0; k < K; ++k) {
            double av = a[k];
            if (av == 0.0) continue;
            double * c = C + k * N;
            for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor & a, const Tensor & b) {
    check_finite("matmul", a);
    check_finite("matmul", b);
    check_same_dtype("matmul", a, b);
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: shape mismatch " + a.shape_str() + " x " + b.shape_str());
    }
    int64_t M = a.rows(), K = a.cols(), N = b.cols();
    Tensor out = Tensor::zeros({M, N}, a.dtype());
    mm_acc(a.data().data(), b.data().data(), out.data().data(), M, K, N);
    round_if_f32(out);
    if ((a.requires_grad() || b.requires_grad()) && recording()) {
        out.set_requires_grad(true);
        auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([ai, bi, oi, M, K, N]() {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ensure_grad(ai);
                mm_nt_acc(oi->grad.data(), bi->value.data(), ai->grad.data(), M, N, K);
            }
            if (bi->requires_grad) {
                ensure_grad(bi);
                mm_tn_acc(ai->value.data(), oi->grad.data(), bi->grad.data(), M, K, N);
            }
        });
    }
    return out;
}

Tensor matmul_nt(const Tensor & a, const Tensor & b) {
    check_finite("matmul_nt", a);
    check_finite("matmul_nt", b);
    check_same_dtype("matmul_nt", a, b);
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: shape mismatch " + a.shape_str() + " x " + b.shape_str() + "^T");
    }
    int64_t M = a.rows(), K = a.cols(), N = b.rows();
    Tensor out = Tensor::zeros({M, N}, a.dtype());
    mm_nt_acc(a.data().data(), b.data().data(), out.data().data(), M, K, N);
    round_if_f32(out);
    if ((a.requires_grad() || b.requires_grad()) && recording()) {
        out.set_requires_grad(true);
        auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([ai, bi, oi, M, K, N]() {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ensure_grad(ai);
                mm_acc(oi->grad.data(), bi->value.data(), ai->grad.data(), M, N, K);
            }
            if (bi->requires_grad) {
                ensure_grad(bi);
                mm_tn_acc(oi->grad.data(), ai->value.data(), bi->grad.data(), M, N, K);
            }
        });
    }
    return out;
}

static void check_same_shape(const char * prim, const Tensor & a, const Tensor & b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(prim) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

template <typename FwdFn, typename BwdA, typename BwdB>
static Tensor binary_elementwise(const char * prim, const Tensor & a, const Tensor & b,
                                 FwdFn fwd, BwdA bwd_a, BwdB bwd_b) {
    check_finite(prim, a);
    check_finite(prim, b);
    check_same_dtype(prim, a, b);
    check_same_shape(prim, a, b);
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    int64_t n = a.numel();
    const double * pa = a.data().data();
    const double * pb = b.data().data();
    double * po = out.data().data();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    round_if_f32(out);
    if ((a.requires_grad() || b.requires_grad()) && recording()) {
        out.set_requires_grad(true);
        auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([ai, bi, oi, n, bwd_a, bwd_b]() {
            if (oi->grad.empty()) return;
            const double * g = oi->grad.data();
            if (ai->requires_grad) {
                ensure_grad(ai);
                for (int64_t i = 0; i < n; ++i) {
                    ai->grad[static_cast<size_t>(i)] += bwd_a(g[i], ai->value[static_cast<size_t>(i)], bi->value[static_cast<size_t>(i)]);
                }
            }
            if (bi->requires_grad) {
                ensure_grad(bi);
                for (int64_t i = 0; i < n; ++i) {
                    bi->grad[static_cast<size_t>(i)] += bwd_b(g[i], ai->value[static_cast<size_t>(i)], bi->value[static_cast<size_t>(i)]);
                }
            }
        });
    }
    return out;
}

Tensor add(const Tensor & a, const Tensor & b) {
    return binary_elementwise("add", a, b,
        [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; },
        [](double g, double, double) { return g; });
}

Tensor sub(const Tensor & a, const Tensor & b) {
    return binary_elementwise("sub", a, b,
        [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; },
        [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor & a, const Tensor & b) {
    return binary_elementwise("mul", a, b,
        [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor & a, double s) {
    check_finite("scale", a);
    if (!std::isfinite(s)) throw NumericError("scale: non-finite scalar");
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[static_cast<size_t>(i)] = a.data()[static_cast<size_t>(i)] * s;
    round_if_f32(out);
    if (a.requires_grad() && recording()) {
        out.set_requires_grad(true);
        auto ai = a.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([ai, oi, n, s]() {
            if (oi->grad.empty()) return;
            ensure_grad(ai);
            for (int64_t i = 0; i < n; ++i) ai->grad[static_cast<size_t>(i)] += oi->grad[static_cast<size_t>(i)] * s;
        });
    }
    return out;
}

Tensor scale_by(const Tensor & a, const Tensor & s) {
    check_finite("scale_by", a);
    check_finite("scale_by", s);
    check_same_dtype("scale_by", a, s);
    if (s.numel() != 1) {
        throw ShapeError("scale_by: scale must be a scalar tensor, got " + s.shape_str());
    }
    double sv = s.data()[0];
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[static_cast<size_t>(i)] = a.data()[static_cast<size_t>(i)] * sv;
    round_if_f32(out);
    if ((a.requires_grad() || s.requires_grad()) && recording()) {
        out.set_requires_grad(true);
        auto ai = a.impl_ptr(), si = s.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([ai, si, oi, n, sv]() {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ensure_grad(ai);
                for (int64_t i = 0; i < n; ++i) ai->grad[static_cast<size_t>(i)] += oi->grad[static_cast<size_t>(i)] * sv;
            }
            if (si->requires_grad) {
                ensure_grad(si);
                double acc = 0.0;
                for (int64_t i = 0; i < n; ++i) acc += oi->grad[static_cast<size_t>(i)] * ai->value[static_cast<size_t>(i)];
                si->grad[0] += acc;
            }
        });
    }
    return out;
}

Tensor add_bias(const Tensor & x, const Tensor & b) {
    check_finite("add_bias", x);
    check_finite("add_bias", b);
    check_same_dtype("add_bias", x, b);
    int64_t R = x.rows(), C = x.cols();
    if (b.numel() != C) {
        throw ShapeError("add_bias: bias shape " + b.shape_str() + " does not match columns of " + x.shape_str());
    }
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    for (int64_t r = 0; r < R; ++r) {
        for (int64_t c = 0; c < C; ++c) {
            out.data()[static_cast<size_t>(r * C + c)] = x.data()[static_cast<size_t>(r * C + c)] + b.data()[static_cast<size_t>(c)];
        }
    }
    round_if_f32(out);
    if ((x.requires_grad() || b.requires_grad()) && recording()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([xi, bi, oi, R, C]() {
            if (oi->grad.empty()) return;
            if (xi->requires_grad) {
                ensure_grad(xi);
                for (size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                ensure_grad(bi);
                for (int64_t r = 0; r < R; ++r) {
                    for (int64_t c = 0; c < C; ++c) bi->grad[static_cast<size_t>(c)] += oi->grad[static_cast<size_t>(r * C + c)];
                }
            }
        });
    }
    return out;
}

Tensor embedding(const Tensor & table, const std::vector<int64_t> & ids) {
    check_finite("embedding", table);
    int64_t V = table.rows(), C = table.cols();
    int64_t L = static_cast<int64_t>(ids.size());
    if (L == 0) throw ShapeError("embedding: empty id list");
    for (int64_t i = 0; i < L; ++i) {
        if (ids[static_cast<size_t>(i)] < 0 || ids[static_cast<size_t>(i)] >= V) {
            throw DataError("embedding: id " + std::to_string(ids[static_cast<size_t>(i)]) +
                            " out of range [0," + std::to_string(V) + ") at position " + std::to_string(i));
        }
    }
    Tensor out = Tensor::zeros({L, C}, table.dtype());
    for (int64_t i = 0; i < L; ++i) {
        std::memcpy(out.data().data() + i * C, table.data().data() + ids[static_cast<size_t>(i)] * C,
                    static_cast<size_t>(C) * sizeof(double));
    }
    if (table.requires_grad() && recording()) {
        out.set_requires_grad(true);
        auto ti = table.impl_ptr(), oi = out.impl_ptr();
        std::vector<int64_t> ids_copy = ids;
        Tape::active()->record([ti, oi, ids_copy, C]() {
            if (oi->grad.empty()) return;
            ensure_grad(ti);
            for (size_t i = 0; i < ids_copy.size(); ++i) {
                double * dst = ti->grad.data() + ids_copy[i] * C;
                const double * src = oi->grad.data() + static_cast<int64_t>(i) * C;
                for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
            }
        });
    }
    return out;
}

Tensor softmax_rows(const Tensor & x) {
    check_finite("softmax", x);
    int64_t R = x.rows(), C = x.cols();
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    for (int64_t r = 0; r < R; ++r) {
        const double * in = x.data().data() + r * C;
        double * o = out.data().data() + r * C;
        double mx = in[0];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, in[c]);
        double sum = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            o[c] = std::exp(in[c] - mx);
            sum += o[c];
        }
        for (int64_t c = 0; c < C; ++c) o[c] /= sum;
    }
    round_if_f32(out);
    if (x.requires_grad() && recording()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([xi, oi, R, C]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi);
            for (int64_t r = 0; r < R; ++r) {
                const double * p = oi->value.data() + r * C;
                const double * g = oi->grad.data() + r * C;
                double dot = 0.0;
                for (int64_t c = 0; c < C; ++c) dot += p[c] * g[c];
                double * dx = xi->grad.data() + r * C;
                for (int64_t c = 0; c < C; ++c) dx[c] += p[c] * (g[c] - dot);
            }
        });
    }
    return out;
}

Tensor rmsnorm(const Tensor & x, const Tensor & gain, double eps) {
    check_finite("rmsnorm", x);
    check_finite("rmsnorm", gain);
    check_same_dtype("rmsnorm", x, gain);
    int64_t R = x.rows(), C = x.cols();
    if (gain.numel() != C) {
        throw ShapeError("rmsnorm: gain shape " + gain.shape_str() + " does not match columns of " + x.shape_str());
    }
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    std::vector<double> inv_rms(static_cast<size_t>(R));
    for (int64_t r = 0; r < R; ++r) {
        const double * in = x.data().data() + r * C;
        double ms = 0.0;
        for (int64_t c = 0; c < C; ++c) ms += in[c] * in[c];
        ms = ms / static_cast<double>(C) + eps;
        double inv = 1.0 / std::sqrt(ms);
        inv_rms[static_cast<size_t>(r)] = inv;
        double * o = out.data().data() + r * C;
        for (int64_t c = 0; c < C; ++c) o[c] = in[c] * inv * gain.data()[static_cast<size_t>(c)];
    }
    round_if_f32(out);
    if ((x.requires_grad() || gain.requires_grad()) && recording()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr(), gi = gain.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([xi, gi, oi, R, C, inv_rms]() {
            if (oi->grad.empty()) return;
            for (int64_t r = 0; r < R; ++r) {
                const double * in = xi->value.data() + r * C;
                const double * g = oi->grad.data() + r * C;
                double inv = inv_rms[static_cast<size_t>(r)];
                if (gi->requires_grad) {
                    ensure_grad(gi);
                    for (int64_t c = 0; c < C; ++c) gi->grad[static_cast<size_t>(c)] += g[c] * in[c] * inv;
                }
                if (xi->requires_grad) {
                    ensure_grad(xi);
                    // d/dx of x*inv_rms(x)*gain, inv_rms = (mean(x^2)+eps)^-1/2
                    double dot = 0.0;
                    for (int64_t c = 0; c < C; ++c) dot += g[c] * gi->value[static_cast<size_t>(c)] * in[c];
                    double k = dot * inv * inv * inv / static_cast<double>(C);
                    double * dx = xi->grad.data() + r * C;
                    for (int64_t c = 0; c < C; ++c) {
                        dx[c] += g[c] * gi->value[static_cast<size_t>(c)] * inv - in[c] * k;
                    }
                }
            }
        });
    }
    return out;
}

Tensor layernorm(const Tensor & x, const Tensor & gain, const Tensor & bias, double eps) {
    check_finite("layernorm", x);
    check_finite("layernorm", gain);
    check_finite("layernorm", bias);
    check_same_dtype("layernorm", x, gain);
    check_same_dtype("layernorm", x, bias);
    int64_t R = x.rows(), C = x.cols();
    if (gain.numel() != C || bias.numel() != C) {
        throw ShapeError("layernorm: gain/bias shape does not match columns of " + x.shape_str());
    }
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    std::vector<double> inv_std(static_cast<size_t>(R)), means(static_cast<size_t>(R));
    for (int64_t r = 0; r < R; ++r) {
        const double * in = x.data().data() + r * C;
        double mu = 0.0;
        for (int64_t c = 0; c < C; ++c) mu += in[c];
        mu /= static_cast<double>(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) var += (in[c] - mu) * (in[c] - mu);
        var /= static_cast<double>(C);
        double inv = 1.0 / std::sqrt(var + eps);
        means[static_cast<size_t>(r)] = mu;
        inv_std[static_cast<size_t>(r)] = inv;
        double * o = out.data().data() + r * C;
        for (int64_t c = 0; c < C; ++c) {
            o[c] = (in[c] - mu) * inv * gain.data()[static_cast<size_t>(c)] + bias.data()[static_cast<size_t>(c)];
        }
    }
    round_if_f32(out);
    if ((x.requires_grad() || gain.requires_grad() || bias.requires_grad()) && recording()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr(), gi = gain.impl_ptr(), bi = bias.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([xi, gi, bi, oi, R, C, inv_std, means]() {
            if (oi->grad.empty()) return;
            for (int64_t r = 0; r < R; ++r) {
                const double * in = xi->value.data() + r * C;
                const double * g = oi->grad.data() + r * C;
                double mu = means[static_cast<size_t>(r)];
                double inv = inv_std[static_cast<size_t>(r)];
                if (bi->requires_grad) {
                    ensure_grad(bi);
                    for (int64_t c = 0; c < C; ++c) bi->grad[static_cast<size_t>(c)] += g[c];
                }
                if (gi->requires_grad) {
                    ensure_grad(gi);
                    for (int64_t c = 0; c < C; ++c) {
                        gi->grad[static_cast<size_t>(c)] += g[c] * (in[c] - mu) * inv;
                    }
                }
                if (xi->requires_grad) {
                    ensure_grad(xi);
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (int64_t c = 0; c < C; ++c) {
                        double xhat = (in[c] - mu) * inv;
                        double dxhat = g[c] * gi->value[static_cast<size_t>(c)];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                    }
                    mean_dxhat /= static_cast<double>(C);
                    mean_dxhat_xhat /= static_cast<double>(C);
                    double * dx = xi->grad.data() + r * C;
                    for (int64_t c = 0; c < C; ++c) {
                        double xhat = (in[c] - mu) * inv;
                        double dxhat = g[c] * gi->value[static_cast<size_t>(c)];
                        dx[c] += inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
            }
        });
    }
    return out;
}

template <typename FwdFn, typename DerivFn>
static Tensor unary_elementwise(const char * prim, const Tensor & x, FwdFn fwd, DerivFn deriv) {
    check_finite(prim, x);
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[static_cast<size_t>(i)] = fwd(x.data()[static_cast<size_t>(i)]);
    round_if_f32(out);
    if (x.requires_grad() && recording()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([xi, oi, n, deriv]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi);
            for (int64_t i = 0; i < n; ++i) {
                xi->grad[static_cast<size_t>(i)] += oi->grad[static_cast<size_t>(i)] * deriv(xi->value[static_cast<size_t>(i)]);
            }
        });
    }
    return out;
}

static constexpr double kInvSqrt2   = 0.7071067811865475;
static constexpr double kInvSqrt2Pi = 0.3989422804014327;

Tensor gelu(const Tensor & x) {
    return unary_elementwise("gelu", x,
        [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
        [](double v) {
            double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            return phi + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
        });
}

Tensor silu(const Tensor & x) {
    return unary_elementwise("silu", x,
        [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v) {
            double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
        });
}

Tensor sum(const Tensor & x) {
    check_finite("sum", x);
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor out = Tensor::scalar(acc, x.dtype());
    round_if_f32(out);
    if (x.requires_grad() && recording()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([xi, oi]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi);
            double g = oi->grad[0];
            for (double & d : xi->grad) d += g;
        });
    }
    return out;
}

Tensor rope(const Tensor & x, int64_t batch, int64_t seq,
            int64_t num_heads, int64_t pos_offset, double theta) {
    check_finite("rope", x);
    int64_t R = x.rows(), C = x.cols();
    if (R != batch * seq) {
        throw ShapeError("rope: rows of " + x.shape_str() + " do not equal batch*seq " +
                         std::to_string(batch * seq));
    }
    if (C % num_heads != 0) {
        throw ShapeError("rope: columns of " + x.shape_str() + " not divisible by heads " +
                         std::to_string(num_heads));
    }
    int64_t dh = C / num_heads;
    if (dh % 2 != 0) throw ShapeError("rope: head dim " + std::to_string(dh) + " must be even");
    int64_t half = dh / 2;
    std::vector<double> inv_freq(static_cast<size_t>(half));
    for (int64_t i = 0; i < half; ++i) {
        inv_freq[static_cast<size_t>(i)] = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
    }
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    auto rotate = [&](const double * in, double * o, double sign) {
        for (int64_t r = 0; r < R; ++r) {
            int64_t t = r % seq;
            double pos = static_cast<double>(pos_offset + t);
            for (int64_t h = 0; h < num_heads; ++h) {
                const double * src = in + r * C + h * dh;
                double * dst = o + r * C + h * dh;
                for (int64_t i = 0; i < half; ++i) {
                    double ang = pos * inv_freq[static_cast<size_t>(i)];
                    double c = std::cos(ang), s = sign * std::sin(ang);
                    double x1 = src[i], x2 = src[i + half];
                    dst[i] += x1 * c - x2 * s;
                    dst[i + half] += x1 * s + x2 * c;
                }
            }
        }
    };
    rotate(x.data().data(), out.data().data(), 1.0);
    round_if_f32(out);
    if (x.requires_grad() && recording()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([xi, oi, R, C, seq, num_heads, dh, half, pos_offset, inv_freq]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi);
            // backward is rotation by the negative angle
            for (int64_t r = 0; r < R; ++r) {
                int64_t t = r % seq;
                double pos = static_cast<double>(pos_offset + t);
                for (int64_t h = 0; h < num_heads; ++h) {
                    const double * g = oi->grad.data() + r * C + h * dh;
                    double * dx = xi->grad.data() + r * C + h * dh;
                    for (int64_t i = 0; i < half; ++i) {
                        double ang = pos * inv_freq[static_cast<size_t>(i)];
                        double c = std::cos(ang), s = std::sin(ang);
                        dx[i] += g[i] * c + g[i + half] * s;
                        dx[i + half] += -g[i] * s + g[i + half] * c;
                    }
                }
            }
        });
    }
    return out;
}

Tensor causal_attention(const Tensor & q, const Tensor & k, const Tensor & v,
                        int64_t batch, int64_t q_len, int64_t kv_len,
                        int64_t num_q_heads, int64_t num_kv_heads) {
    check_finite("attention", q);
    check_finite("attention", k);
    check_finite("attention", v);
    check_same_dtype("attention", q, k);
    check_same_dtype("attention", q, v);
    if (num_q_heads % num_kv_heads != 0) {
        throw ShapeError("attention: query heads " + std::to_string(num_q_heads) +
                         " not divisible by kv heads " + std::to_string(num_kv_heads));
    }
    if (q.cols() % num_q_heads != 0) {
        throw ShapeError("attention: q shape " + q.shape_str() + " not divisible by heads");
    }
    int64_t dh = q.cols() / num_q_heads;
    if (k.cols() != num_kv_heads * dh || v.cols() != num_kv_heads * dh) {
        throw ShapeError("attention: kv shape " + k.shape_str() + " inconsistent with q " + q.shape_str());
    }
    if (q.rows() != batch * q_len || k.rows() != batch * kv_len || v.rows() != batch * kv_len) {
        throw ShapeError("attention: row counts q=" + q.shape_str() + " kv=" + k.shape_str() +
                         " do not match batch/seq");
    }
    if (kv_len < q_len) {
        throw ShapeError("attention: kv_len " + std::to_string(kv_len) +
                         " shorter than q_len " + std::to_string(q_len));
    }
    int64_t offset = kv_len - q_len;
    int64_t group = num_q_heads / num_kv_heads;
    int64_t qC = q.cols(), kC = k.cols();
    double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor out = Tensor::zeros({batch * q_len, qC}, q.dtype());
    // probability rows saved for backward; future positions stay exactly 0
    auto probs = std::make_shared<std::vector<double>>(
        static_cast<size_t>(batch * num_q_heads * q_len * kv_len), 0.0);

    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t h = 0; h < num_q_heads; ++h) {
            int64_t kvh = h / group;
            for (int64_t i = 0; i < q_len; ++i) {
                const double * qrow = q.data().data() + (b * q_len + i) * qC + h * dh;
                int64_t allowed = std::min(kv_len, i + offset + 1);
                double * prow = probs->data() +
                    (((b * num_q_heads + h) * q_len + i) * kv_len);
                double mx = -1e300;
                for (int64_t j = 0; j < allowed; ++j) {
                    const double * krow = k.data().data() + (b * kv_len + j) * kC + kvh * dh;
                    double s = 0.0;
                    for (int64_t d = 0; d < dh; ++d) s += qrow[d] * krow[d];
                    s *= sc;
                    prow[j] = s;
                    mx = std::max(mx, s);
                }
                double denom = 0.0;
                for (int64_t j = 0; j < allowed; ++j) {
                    prow[j] = std::exp(prow[j] - mx);
                    denom += prow[j];
                }
                double * orow = out.data().data() + (b * q_len + i) * qC + h * dh;
                for (int64_t j = 0; j < allowed; ++j) {
                    prow[j] /= denom;
                    const double * vrow = v.data().data() + (b * kv_len + j) * kC + kvh * dh;
                    for (int64_t d = 0; d < dh; ++d) orow[d] += prow[j] * vrow[d];
                }
            }
        }
    }
    round_if_f32(out);
    if ((q.requires_grad() || k.requires_grad() || v.requires_grad()) && recording()) {
        out.set_requires_grad(true);
        auto qi = q.impl_ptr(), ki = k.impl_ptr(), vi = v.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([qi, ki, vi, oi, probs, batch, q_len, kv_len,
                                num_q_heads, group, dh, qC, kC, offset, sc]() {
            if (oi->grad.empty()) return;
            if (qi->requires_grad) ensure_grad(qi);
            if (ki->requires_grad) ensure_grad(ki);
            if (vi->requires_grad) ensure_grad(vi);
            std::vector<double> dp(static_cast<size_t>(kv_len));
            for (int64_t b = 0; b < batch; ++b) {
                for (int64_t h = 0; h < num_q_heads; ++h) {
                    int64_t kvh = h / group;
                    for (int64_t i = 0; i < q_len; ++i) {
                        int64_t allowed = std::min(kv_len, i + offset + 1);
                        const double * prow = probs->data() +
                            (((b * num_q_heads + h) * q_len + i) * kv_len);
                        const double * grow = oi->grad.data() + (b * q_len + i) * qC + h * dh;
                        const double * qrow = qi->value.data() + (b * q_len + i) * qC + h * dh;
                        double dot = 0.0;
                        for (int64_t j = 0; j < allowed; ++j) {
                            const double * vrow = vi->value.data() + (b * kv_len + j) * kC + kvh * dh;
                            double s = 0.0;
                            for (int64_t d = 0; d < dh; ++d) s += grow[d] * vrow[d];
                            dp[static_cast<size_t>(j)] = s;
                            dot += s * prow[j];
                        }
                        for (int64_t j = 0; j < allowed; ++j) {
                            double ds = prow[j] * (dp[static_cast<size_t>(j)] - dot);
                            const double * krow = ki->value.data() + (b * kv_len + j) * kC + kvh * dh;
                            if (qi->requires_grad) {
                                double * dq = qi->grad.data() + (b * q_len + i) * qC + h * dh;
                                for (int64_t d = 0; d < dh; ++d) dq[d] += sc * ds * krow[d];
                            }
                            if (ki->requires_grad) {
                                double * dk = ki->grad.data() + (b * kv_len + j) * kC + kvh * dh;
                                for (int64_t d = 0; d < dh; ++d) dk[d] += sc * ds * qrow[d];
                            }
                            if (vi->requires_grad) {
                                double * dv = vi->grad.data() + (b * kv_len + j) * kC + kvh * dh;
                                for (int64_t d = 0; d < dh; ++d) dv[d] += prow[j] * grow[d];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

CrossEntropyResult cross_entropy(const Tensor & logits, const std::vector<int64_t> & labels,
                                 int64_t ignore_index) {
    check_finite("cross_entropy", logits);
    if (ignore_index >= 0) {
        throw DataError("cross_entropy: ignore_index must be a reserved negative value");
    }
    int64_t R = logits.rows(), V = logits.cols();
    if (static_cast<int64_t>(labels.size()) != R) {
        throw ShapeError("cross_entropy: label count " + std::to_string(labels.size()) +
                         " does not match logit rows " + logits.shape_str());
    }
    int64_t count = 0;
    double total = 0.0;
    for (int64_t r = 0; r < R; ++r) {
        int64_t l = labels[static_cast<size_t>(r)];
        if (l == ignore_index) continue;
        if (l < 0 || l >= V) {
            throw DataError("cross_entropy: label " + std::to_string(l) + " out of range [0," +
                            std::to_string(V) + ") at row " + std::to_string(r));
        }
        const double * row = logits.data().data() + r * V;
        double mx = row[0];
        for (int64_t c = 1; c < V; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int64_t c = 0; c < V; ++c) sum += std::exp(row[c] - mx);
        total += (mx + std::log(sum)) - row[l];
        ++count;
    }
    double mean = count > 0 ? total / static_cast<double>(count) : 0.0;
    Tensor out = Tensor::scalar(mean, logits.dtype());
    round_if_f32(out);
    if (logits.requires_grad() && recording() && count > 0) {
        out.set_requires_grad(true);
        auto li = logits.impl_ptr(), oi = out.impl_ptr();
        std::vector<int64_t> labels_copy = labels;
        Tape::active()->record([li, oi, labels_copy, ignore_index, R, V, count]() {
            if (oi->grad.empty()) return;
            ensure_grad(li);
            double g = oi->grad[0] / static_cast<double>(count);
            for (int64_t r = 0; r < R; ++r) {
                int64_t l = labels_copy[static_cast<size_t>(r)];
                if (l == ignore_index) continue;  // exactly zero gradient at ignored rows
                const double * row = li->value.data() + r * V;
                double * drow = li->grad.data() + r * V;
                double mx = row[0];
                for (int64_t c = 1; c < V; ++c) mx = std::max(mx, row[c]);
                double sum = 0.0;
                for (int64_t c = 0; c < V; ++c) sum += std::exp(row[c] - mx);
                for (int64_t c = 0; c < V; ++c) {
                    double p = std::exp(row[c] - mx) / sum;
                    drow[c] += g * (p - (c == l ? 1.0 : 0.0));
                }
            }
        });
    }
    return {out, count};
}

Tensor slice_rows(const Tensor & x, int64_t start, int64_t len) {
    check_finite("slice_rows", x);
    int64_t R = x.rows(), C = x.cols();
    if (start < 0 || len <= 0 || start + len > R) {
        throw ShapeError("slice_rows: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " + x.shape_str());
    }
    Tensor out = Tensor::zeros({len, C}, x.dtype());
    std::memcpy(out.data().data(), x.data().data() + start * C,
                static_cast<size_t>(len * C) * sizeof(double));
    if (x.requires_grad() && recording()) {
        out.set_requires_grad(true);
        auto xi = x.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([xi, oi, start, len, C]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi);
            for (int64_t i = 0; i < len * C; ++i) {
                xi->grad[static_cast<size_t>(start * C + i)] += oi->grad[static_cast<size_t>(i)];
            }
        });
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor> & xs) {
    if (xs.empty()) throw ShapeError("concat_rows: empty input list");
    int64_t C = xs[0].cols(), R = 0;
    for (const Tensor & t : xs) {
        check_finite("concat_rows", t);
        if (t.cols() != C) {
            throw ShapeError("concat_rows: column mismatch " + xs[0].shape_str() + " vs " + t.shape_str());
        }
        check_same_dtype("concat_rows", xs[0], t);
        R += t.rows();
    }
    Tensor out = Tensor::zeros({R, C}, xs[0].dtype());
    int64_t row = 0;
    bool needs = false;
    std::vector<std::pair<std::shared_ptr<TensorImpl>, int64_t>> parts;
    for (const Tensor & t : xs) {
        std::memcpy(out.data().data() + row * C, t.data().data(),
                    static_cast<size_t>(t.numel()) * sizeof(double));
        parts.emplace_back(t.impl_ptr(), row);
        row += t.rows();
        needs = needs || t.requires_grad();
    }
    if (needs && recording()) {
        out.set_requires_grad(true);
        auto oi = out.impl_ptr();
        Tape::active()->record([oi, parts, C]() {
            if (oi->grad.empty()) return;
            for (const auto & [pi, at] : parts) {
                if (!pi->requires_grad) continue;
                ensure_grad(pi);
                for (size_t i = 0; i < pi->value.size(); ++i) {
                    pi->grad[i] += oi->grad[static_cast<size_t>(at * C) + i];
                }
            }
        });
    }
    return out;
}

Tensor inject_rows(const Tensor & base, int64_t start, const Tensor & rows) {
    check_finite("inject_rows", base);
    check_finite("inject_rows", rows);
    check_same_dtype("inject_rows", base, rows);
    int64_t R = base.rows(), C = base.cols(), L = rows.rows();
    if (rows.cols() != C) {
        throw ShapeError("inject_rows: column mismatch " + base.shape_str() + " vs " + rows.shape_str());
    }
    if (start < 0 || start + L > R) {
        throw ShapeError("inject_rows: span [" + std::to_string(start) + "," +
                         std::to_string(start + L) + ") out of bounds for " + base.shape_str());
    }
    Tensor out = base.clone();
    std::memcpy(out.data().data() + start * C, rows.data().data(),
                static_cast<size_t>(L * C) * sizeof(double));
    if ((base.requires_grad() || rows.requires_grad()) && recording()) {
        out.set_requires_grad(true);
        auto bi = base.impl_ptr(), ri = rows.impl_ptr(), oi = out.impl_ptr();
        Tape::active()->record([bi, ri, oi, start, L, C]() {
            if (oi->grad.empty()) return;
            if (ri->requires_grad) {
                ensure_grad(ri);
                for (int64_t i = 0; i < L * C; ++i) {
                    ri->grad[static_cast<size_t>(i)] += oi->grad[static_cast<size_t>(start * C + i)];
                }
            }
            if (bi->requires_grad) {
                ensure_grad(bi);
                for (int64_t r = 0; r < static_cast<int64_t>(oi->grad.size()) / C; ++r) {
                    if (r >= start && r < start + L) continue;  // replaced rows route to `rows`
                    for (int64_t c = 0; c < C; ++c) {
                        bi->grad[static_cast<size_t>(r * C + c)] += oi->grad[static_cast<size_t>(r * C + c)];
                    }
                }
            }
        });
    }
    return out;
}

Tensor Tensor::reshaped(std::vector<int64_t> new_shape) const {
    int64_t n = shape_numel(new_shape);
    if (n != numel()) {
        throw ShapeError("reshape: element count mismatch " + shape_str());
    }
    Tensor out = Tensor::from_data(std::move(new_shape), impl_->value, impl_->dtype);
    if (requires_grad() && recording()) {
        out.set_requires_grad(true);
        auto xi = impl_, oi = out.impl_ptr();
        Tape::active()->record([xi, oi]() {
            if (oi->grad.empty()) return;
            ensure_grad(xi);
            for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

} // namespace omni
