#pragma once

// Dense row-major tensors with tape-free reverse-mode autodiff.
//
// A tensor is a shared handle: copying a BasicTensor aliases storage, clone()
// produces an independent leaf. Ops record a GraphNode on their result when
// gradients are enabled and any input requires grad; backward() walks the
// nodes reachable from a scalar loss once, in reverse topological order, and
// then releases them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "peft_forge/rng.hpp"

namespace peft_forge {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Precision { single, double_ };

template <typename T>
constexpr Precision precision_of() {
    return sizeof(T) == 4 ? Precision::single : Precision::double_;
}

template <typename T>
struct TensorImpl;

template <typename T>
struct GraphNode {
    const char* op = "";
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
    // Receives the op's output (whose grad is final when called).
    std::function<void(TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty means no buffer
    bool requires_grad = false;
    bool backward_done = false;
    std::shared_ptr<GraphNode<T>> node;  // null for leaves

    bool is_leaf() const noexcept { return node == nullptr; }
    /// Grad buffer for accumulation, allocated on first use. Only valid when
    /// requires_grad is set.
    std::span<T> grad_buffer();
};

/// True while gradient recording is enabled on the calling thread.
bool grad_enabled() noexcept;

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() noexcept;
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

    static BasicTensor zeros(const Shape& shape);
    static BasicTensor full(const Shape& shape, T value);
    static BasicTensor gaussian(const Shape& shape, double mean, double stddev, std::uint64_t seed);
    static BasicTensor gaussian(const Shape& shape, double mean, double stddev, Rng& rng);
    static BasicTensor from_data(const Shape& shape, std::vector<T> data);
    static BasicTensor scalar(T value) { return from_data({1}, {value}); }

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const T> data() const;
    /// Direct write access. Only meaningful on leaves (parameters, inputs).
    std::span<T> mutable_data();
    T item() const;
    T at(std::size_t flat) const { return data()[flat]; }

    bool requires_grad() const;
    /// Marks a leaf as trainable. Enabling allocates a zeroed grad buffer;
    /// disabling drops it.
    BasicTensor& set_requires_grad(bool value);
    bool has_grad() const;
    std::span<const T> grad() const;
    std::span<T> mutable_grad();
    void zero_grad();

    /// Reverse-mode sweep from this scalar. Returns the number of graph nodes
    /// visited. Throws on a non-scalar tensor or a second call on the same
    /// loss without a new forward pass.
    std::size_t backward();

    /// Independent leaf holding a copy of the data (no grad, not trainable).
    BasicTensor clone() const;

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(numel());
        const auto src = data();
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = static_cast<U>(src[i]);
        }
        return BasicTensor<U>::from_data(shape(), std::move(out));
    }

    const std::shared_ptr<TensorImpl<T>>& impl() const noexcept { return impl_; }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// ---------------------------------------------------------------- ops
// Shapes are validated eagerly; violations throw UsageError (shape
// problems) or NumericError (domain problems such as log of 0).

template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, const Shape& shape);

// Equal-shape or scalar ([1]) broadcasting only.
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, double factor);

template <typename T> BasicTensor<T> exp(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> log(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> silu(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> tanh(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> softmax_lastdim(const BasicTensor<T>& a);
/// x * (mean(x^2) + eps)^(-1/2) along the last dimension.
template <typename T> BasicTensor<T> rsqrt_meansq(const BasicTensor<T>& a, double eps);

/// x[n, d] scaled (resp. shifted) column-wise by v[d].
template <typename T> BasicTensor<T> mul_rowvec(const BasicTensor<T>& x, const BasicTensor<T>& v);
template <typename T> BasicTensor<T> add_rowvec(const BasicTensor<T>& x, const BasicTensor<T>& v);

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);

/// Rows of weight[vocab, d] selected by ids.
template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& weight, std::span<const int> ids);
/// Rows of x[n, d] selected by index.
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::size_t> rows);
template <typename T>
BasicTensor<T> concat_rows(std::span<const BasicTensor<T>> parts);
template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t count);
template <typename T>
BasicTensor<T> concat_cols(std::span<const BasicTensor<T>> parts);

/// Inverted dropout; identity when p == 0.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Rng& rng);

/// Rotary embedding on x[n, d] split into heads of size d/n_heads. Row i is
/// rotated by positions[i].
template <typename T>
BasicTensor<T> rotary(const BasicTensor<T>& x, std::span<const int> positions, std::size_t n_heads,
                      double base = 10000.0);

/// Multi-head scaled dot-product attention over right-padded batches.
///
/// q, k, v are [batch * seq, d]. Query row t of sequence b attends to
/// prefix rows (prefix_k/prefix_v [p, d], shared across the batch, visible to
/// every query) and to keys 0..t of its own sequence.
template <typename T>
BasicTensor<T> causal_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                const BasicTensor<T>& v, std::size_t batch, std::size_t seq,
                                std::size_t n_heads, const BasicTensor<T>* prefix_k = nullptr,
                                const BasicTensor<T>* prefix_v = nullptr);

/// tanh(gate) * softmax(q kp^T / sqrt(d_head)) vp per head, every query
/// seeing all prompt rows.
template <typename T>
BasicTensor<T> gated_prompt_attention(const BasicTensor<T>& q, const BasicTensor<T>& prompt_k,
                                      const BasicTensor<T>& prompt_v, const BasicTensor<T>& gate,
                                      std::size_t n_heads);

inline constexpr int kIgnoreIndex = -1;

/// Mean over rows with target != kIgnoreIndex of -log softmax(logits)[target].
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets);

/// Mean over all elements of the sigmoid binary cross-entropy.
template <typename T>
BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, std::span<const T> labels);

// ---------------------------------------------------------------- checks

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    // Coordinate with the largest error.
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Relative error used by the gradient checker:
/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is ~0 from amplifying finite-difference rounding noise.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central-difference check of d f(x) / dx for scalar-valued f.
double grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& x, double eps);

/// Central-difference check of a closure over a set of leaf parameters.
/// `samples` coordinates are drawn uniformly across all parameters (all of
/// them when samples == 0).
GradCheckReport grad_check_params(const std::function<TensorD()>& loss_fn,
                                  std::span<TensorD> params, double eps, std::size_t samples,
                                  std::uint64_t seed);

}  // namespace peft_forge
