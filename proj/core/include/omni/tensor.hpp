#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "omni/errors.hpp"

namespace omni {

// Storage precision. Values are held in double either way; f32 rounds the
// result of every primitive (and every optimizer update) through float, so
// 32-bit runs are bit-deterministic while 64-bit runs are exact enough for
// finite-difference checks.
enum class Dtype { f32, f64 };

inline const char * dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

struct TensorImpl {
    std::vector<int64_t> shape;
    std::vector<double>  value;
    std::vector<double>  grad;          // allocated on first accumulation
    bool                 requires_grad = false;
    Dtype                dtype         = Dtype::f64;
};

// Value handle with shared storage. Copies alias; use clone() for a deep copy.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape, Dtype dt = Dtype::f64, bool requires_grad = false);
    static Tensor full(std::vector<int64_t> shape, double v, Dtype dt = Dtype::f64, bool requires_grad = false);
    static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data,
                            Dtype dt = Dtype::f64, bool requires_grad = false);
    static Tensor scalar(double v, Dtype dt = Dtype::f64, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int64_t> & shape() const { return impl_->shape; }
    int64_t ndim() const { return static_cast<int64_t>(impl_->shape.size()); }
    int64_t dim(int64_t i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(impl_->value.size()); }
    // 2D accessors: rows = product of leading dims, cols = last dim.
    int64_t rows() const;
    int64_t cols() const;

    Dtype dtype() const { return impl_->dtype; }
    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg);

    std::vector<double> & data() { return impl_->value; }
    const std::vector<double> & data() const { return impl_->value; }

    // Gradient accumulator; allocated (zero) on first access.
    std::vector<double> & grad();
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad();

    double item() const;
    double at(int64_t r, int64_t c) const { return impl_->value[static_cast<size_t>(r * cols() + c)]; }

    Tensor clone() const;
    // Same storage viewed under a new shape (numel must match).
    Tensor reshaped(std::vector<int64_t> new_shape) const;

    std::string shape_str() const;

    TensorImpl * impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl> & impl_ptr() const { return impl_; }

  private:
    std::shared_ptr<TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Computation tape (reverse-mode)
// ---------------------------------------------------------------------------

// Ordered record of primitive applications. Primitives executed while a tape
// is active (and not suppressed by NoGradGuard) push one backward closure
// each; backward() replays them once in reverse order and then clears.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape &) = delete;
    Tape & operator=(const Tape &) = delete;

    void record(std::function<void()> backward_fn);
    // Seeds d(loss)/d(loss) = 1, sweeps the tape in reverse, clears it.
    void backward(const Tensor & scalar_loss);
    size_t node_count() const { return nodes_.size(); }

    static Tape * active();

  private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

// Suppresses recording for its lifetime (inference / finite differences).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard & operator=(const NoGradGuard &) = delete;
    static bool active();
};

// ---------------------------------------------------------------------------
// Primitives. Forward values are exact; backward contributes analytic
// gradients to every requires_grad input. All primitives validate shapes
// (ShapeError naming the primitive and both shapes) and reject non-finite
// inputs (NumericError).
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor & a, const Tensor & b);      // [M,K]x[K,N]
Tensor matmul_nt(const Tensor & a, const Tensor & b);   // [M,K]x[N,K]^T -> [M,N]
Tensor add(const Tensor & a, const Tensor & b);
Tensor sub(const Tensor & a, const Tensor & b);
Tensor mul(const Tensor & a, const Tensor & b);
Tensor scale(const Tensor & a, double s);
Tensor scale_by(const Tensor & a, const Tensor & s);    // s: scalar tensor (learned scale)
Tensor add_bias(const Tensor & x, const Tensor & b);    // b broadcast over rows
Tensor embedding(const Tensor & table, const std::vector<int64_t> & ids);
Tensor softmax_rows(const Tensor & x);
Tensor rmsnorm(const Tensor & x, const Tensor & gain, double eps);
Tensor layernorm(const Tensor & x, const Tensor & gain, const Tensor & bias, double eps);
Tensor gelu(const Tensor & x);                          // exact erf form
Tensor silu(const Tensor & x);
Tensor sum(const Tensor & x);                           // -> scalar

// Rotary position application over [batch*seq, heads*head_dim]; position of
// row (b, t) is pos_offset + t. head_dim must be even (half-split rotation).
Tensor rope(const Tensor & x, int64_t batch, int64_t seq,
            int64_t num_heads, int64_t pos_offset, double theta);

// Fused causal masked attention with grouped-query head sharing.
// q: [batch*q_len, nq*dh], k/v: [batch*kv_len, nkv*dh]; nq % nkv == 0.
// Query i attends kv positions j <= i + (kv_len - q_len); kv_len >= q_len.
// Scores are scaled by 1/sqrt(dh); future positions get exactly zero weight.
Tensor causal_attention(const Tensor & q, const Tensor & k, const Tensor & v,
                        int64_t batch, int64_t q_len, int64_t kv_len,
                        int64_t num_q_heads, int64_t num_kv_heads);

// Mean cross-entropy over rows whose label != ignore_index. A batch with
// zero labeled rows yields loss exactly 0 (degenerate, reported via labeled).
// Ignored rows receive exactly zero logit gradient.
struct CrossEntropyResult {
    Tensor  loss;     // scalar
    int64_t labeled;  // number of rows that carried a label
};
inline constexpr int64_t kIgnoreIndex = -100;
CrossEntropyResult cross_entropy(const Tensor & logits, const std::vector<int64_t> & labels,
                                 int64_t ignore_index = kIgnoreIndex);

// Row manipulation (differentiable plumbing for sequence assembly).
Tensor slice_rows(const Tensor & x, int64_t start, int64_t len);
Tensor concat_rows(const std::vector<Tensor> & xs);
// Rows [start, start+rows.rows()) of base replaced by `rows`; all other rows
// bit-identical to base.
Tensor inject_rows(const Tensor & base, int64_t start, const Tensor & rows);

// Forward-only helpers (no tape interaction).
int64_t argmax_row(const Tensor & x, int64_t row);
bool    all_finite(const Tensor & x);

// Fill with seeded values (leaf initialization, not taped).
void fill_normal(Tensor & t, double stddev, uint64_t seed);

} // namespace omni
