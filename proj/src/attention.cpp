#include <algorithm>
#include <cmath>
#include <limits>

#include "tensor_detail.hpp"

namespace peft_forge {

using detail::input_data;
using detail::input_grad;
using detail::make_result;
using detail::require;

namespace {

struct RotaryTable {
    std::vector<double> cos;
    std::vector<double> sin;
};

RotaryTable rotary_table(std::span<const int> positions, std::size_t head_dim, double base) {
    const std::size_t half = head_dim / 2;
    RotaryTable table{std::vector<double>(positions.size() * half),
                      std::vector<double>(positions.size() * half)};
    for (std::size_t r = 0; r < positions.size(); ++r) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq =
                std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
            const double angle = static_cast<double>(positions[r]) * freq;
            table.cos[r * half + i] = std::cos(angle);
            table.sin[r * half + i] = std::sin(angle);
        }
    }
    return table;
}

// Rotates interleaved pairs (2i, 2i+1) of every head; sign = -1 inverts.
template <typename T>
void apply_rotation(const T* src, T* dst, std::size_t rows, std::size_t d, std::size_t head_dim,
                    const RotaryTable& table, double sign, bool accumulate) {
    const std::size_t half = head_dim / 2;
    const std::size_t heads = d / head_dim;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < half; ++i) {
                const T c = static_cast<T>(table.cos[r * half + i]);
                const T s = static_cast<T>(sign * table.sin[r * half + i]);
                const std::size_t at = r * d + h * head_dim + 2 * i;
                const T x0 = src[at];
                const T x1 = src[at + 1];
                const T y0 = x0 * c - x1 * s;
                const T y1 = x0 * s + x1 * c;
                if (accumulate) {
                    dst[at] += y0;
                    dst[at + 1] += y1;
                } else {
                    dst[at] = y0;
                    dst[at + 1] = y1;
                }
            }
        }
    }
}

template <typename T>
T dot_n(const T* a, const T* b, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

template <typename T>
void axpy_n(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

}  // namespace

template <typename T>
BasicTensor<T> rotary(const BasicTensor<T>& x, std::span<const int> positions, std::size_t n_heads,
                      double base) {
    require(x.rank() == 2, "rotary", "expected [n, d]");
    const std::size_t rows = x.dim(0);
    const std::size_t d = x.dim(1);
    require(n_heads >= 1 && d % n_heads == 0, "rotary", "d not divisible by head count");
    const std::size_t head_dim = d / n_heads;
    require(head_dim % 2 == 0, "rotary", "head dimension must be even");
    require(positions.size() == rows, "rotary", "one position per row required");
    auto table = std::make_shared<RotaryTable>(rotary_table(positions, head_dim, base));
    std::vector<T> out(x.numel());
    apply_rotation(x.data().data(), out.data(), rows, d, head_dim, *table, 1.0, false);
    return make_result<T>(x.shape(), std::move(out), {&x}, "rotary",
                          [table, rows, d, head_dim](TensorImpl<T>& o) {
                              auto gx = input_grad(o, 0);
                              apply_rotation(o.grad.data(), gx.data(), rows, d, head_dim, *table,
                                             -1.0, true);
                          });
}

template <typename T>
BasicTensor<T> causal_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                const BasicTensor<T>& v, std::size_t batch, std::size_t seq,
                                std::size_t n_heads, const BasicTensor<T>* prefix_k,
                                const BasicTensor<T>* prefix_v) {
    require(q.rank() == 2 && q.shape() == k.shape() && q.shape() == v.shape(), "attention",
            "q, k, v must share a [batch*seq, d] shape");
    require(q.dim(0) == batch * seq, "attention", "row count is not batch * seq");
    const std::size_t d = q.dim(1);
    require(n_heads >= 1 && d % n_heads == 0, "attention", "d not divisible by head count");
    const bool has_prefix = prefix_k != nullptr && prefix_k->defined();
    require(has_prefix == (prefix_v != nullptr && prefix_v->defined()), "attention",
            "prefix keys and values must be given together");
    std::size_t plen = 0;
    if (has_prefix) {
        require(prefix_k->rank() == 2 && prefix_k->dim(1) == d &&
                    prefix_k->shape() == prefix_v->shape(),
                "attention", "prefix rows must be [p, d]");
        plen = prefix_k->dim(0);
    }
    const std::size_t hd = d / n_heads;
    const std::size_t span = plen + seq;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

    const T* qd = q.data().data();
    const T* kd = k.data().data();
    const T* vd = v.data().data();
    const T* pk = has_prefix ? prefix_k->data().data() : nullptr;
    const T* pv = has_prefix ? prefix_v->data().data() : nullptr;

    // probs[b][h][t][j]: j < plen indexes prefix rows, j >= plen sequence rows.
    auto probs = std::make_shared<std::vector<T>>(batch * n_heads * seq * span, T(0));
    std::vector<T> out(batch * seq * d, T(0));
    std::vector<T> scores(span);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t t = 0; t < seq; ++t) {
                const T* qrow = qd + (b * seq + t) * d + h * hd;
                const std::size_t visible = plen + t + 1;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < visible; ++j) {
                    const T* krow = j < plen ? pk + j * d + h * hd
                                             : kd + (b * seq + (j - plen)) * d + h * hd;
                    scores[j] = dot_n(qrow, krow, hd) * inv_sqrt;
                    mx = std::max(mx, scores[j]);
                }
                T total = 0;
                for (std::size_t j = 0; j < visible; ++j) {
                    scores[j] = std::exp(scores[j] - mx);
                    total += scores[j];
                }
                T* prow = probs->data() + ((b * n_heads + h) * seq + t) * span;
                T* orow = out.data() + (b * seq + t) * d + h * hd;
                for (std::size_t j = 0; j < visible; ++j) {
                    prow[j] = scores[j] / total;
                    const T* vrow = j < plen ? pv + j * d + h * hd
                                             : vd + (b * seq + (j - plen)) * d + h * hd;
                    axpy_n(prow[j], vrow, orow, hd);
                }
            }
        }
    }

    return make_result<T>(
        q.shape(), std::move(out), {&q, &k, &v, prefix_k, prefix_v}, "causal_attention",
        [probs, batch, seq, n_heads, d, hd, plen, span, inv_sqrt](TensorImpl<T>& o) {
            auto gq = input_grad(o, 0);
            auto gk = input_grad(o, 1);
            auto gv = input_grad(o, 2);
            std::span<T> gpk;
            std::span<T> gpv;
            const T* pk = nullptr;
            const T* pv = nullptr;
            if (plen > 0) {
                gpk = input_grad(o, 3);
                gpv = input_grad(o, 4);
                pk = input_data(o, 3).data();
                pv = input_data(o, 4).data();
            }
            const T* qd = input_data(o, 0).data();
            const T* kd = input_data(o, 1).data();
            const T* vd = input_data(o, 2).data();
            std::vector<T> dp(span);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    for (std::size_t t = 0; t < seq; ++t) {
                        const std::size_t visible = plen + t + 1;
                        const T* prow = probs->data() + ((b * n_heads + h) * seq + t) * span;
                        const T* g = o.grad.data() + (b * seq + t) * d + h * hd;
                        const std::size_t qat = (b * seq + t) * d + h * hd;
                        T weighted = 0;
                        for (std::size_t j = 0; j < visible; ++j) {
                            const bool pre = j < plen;
                            const std::size_t at =
                                pre ? j * d + h * hd : (b * seq + (j - plen)) * d + h * hd;
                            const T* vrow = pre ? pv + at : vd + at;
                            dp[j] = dot_n(g, vrow, hd);
                            weighted += prow[j] * dp[j];
                            T* gvrow = pre ? (gpv.empty() ? nullptr : gpv.data() + at)
                                           : (gv.empty() ? nullptr : gv.data() + at);
                            if (gvrow != nullptr) {
                                axpy_n(prow[j], g, gvrow, hd);
                            }
                        }
                        for (std::size_t j = 0; j < visible; ++j) {
                            const T ds = prow[j] * (dp[j] - weighted) * inv_sqrt;
                            const bool pre = j < plen;
                            const std::size_t at =
                                pre ? j * d + h * hd : (b * seq + (j - plen)) * d + h * hd;
                            if (!gq.empty()) {
                                axpy_n(ds, pre ? pk + at : kd + at, gq.data() + qat, hd);
                            }
                            T* gkrow = pre ? (gpk.empty() ? nullptr : gpk.data() + at)
                                           : (gk.empty() ? nullptr : gk.data() + at);
                            if (gkrow != nullptr) {
                                axpy_n(ds, qd + qat, gkrow, hd);
                            }
                        }
                    }
                }
            }
        });
}

template <typename T>
BasicTensor<T> gated_prompt_attention(const BasicTensor<T>& q, const BasicTensor<T>& prompt_k,
                                      const BasicTensor<T>& prompt_v, const BasicTensor<T>& gate,
                                      std::size_t n_heads) {
    require(q.rank() == 2 && prompt_k.rank() == 2 && prompt_k.shape() == prompt_v.shape(),
            "gated_prompt_attention", "expected q [n, d] and prompt rows [l, d]");
    const std::size_t n = q.dim(0);
    const std::size_t d = q.dim(1);
    require(prompt_k.dim(1) == d, "gated_prompt_attention", "prompt width differs from q");
    require(gate.numel() == 1, "gated_prompt_attention", "gate must be a scalar");
    require(n_heads >= 1 && d % n_heads == 0, "gated_prompt_attention",
            "d not divisible by head count");
    const std::size_t len = prompt_k.dim(0);
    const std::size_t hd = d / n_heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    const T g = std::tanh(gate.data()[0]);

    const T* qd = q.data().data();
    const T* kd = prompt_k.data().data();
    const T* vd = prompt_v.data().data();
    auto probs = std::make_shared<std::vector<T>>(n * n_heads * len);
    auto ungated = std::make_shared<std::vector<T>>(n * d, T(0));
    std::vector<T> scores(len);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            const T* qrow = qd + i * d + h * hd;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < len; ++j) {
                scores[j] = dot_n(qrow, kd + j * d + h * hd, hd) * inv_sqrt;
                mx = std::max(mx, scores[j]);
            }
            T total = 0;
            for (std::size_t j = 0; j < len; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                total += scores[j];
            }
            T* prow = probs->data() + (i * n_heads + h) * len;
            T* urow = ungated->data() + i * d + h * hd;
            for (std::size_t j = 0; j < len; ++j) {
                prow[j] = scores[j] / total;
                axpy_n(prow[j], vd + j * d + h * hd, urow, hd);
            }
        }
    }
    std::vector<T> out(n * d);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = g * (*ungated)[i];
    }

    return make_result<T>(
        q.shape(), std::move(out), {&q, &prompt_k, &prompt_v, &gate}, "gated_prompt_attention",
        [probs, ungated, n, d, n_heads, hd, len, inv_sqrt, g](TensorImpl<T>& o) {
            auto gq = input_grad(o, 0);
            auto gk = input_grad(o, 1);
            auto gv = input_grad(o, 2);
            auto ggate = input_grad(o, 3);
            const T* qd = input_data(o, 0).data();
            const T* kd = input_data(o, 1).data();
            const T* vd = input_data(o, 2).data();
            if (!ggate.empty()) {
                ggate[0] += (T(1) - g * g) * dot_n(o.grad.data(), ungated->data(), n * d);
            }
            std::vector<T> du(hd);
            std::vector<T> dp(len);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    const T* prow = probs->data() + (i * n_heads + h) * len;
                    const T* grow = o.grad.data() + i * d + h * hd;
                    for (std::size_t e = 0; e < hd; ++e) {
                        du[e] = g * grow[e];
                    }
                    T weighted = 0;
                    for (std::size_t j = 0; j < len; ++j) {
                        dp[j] = dot_n(du.data(), vd + j * d + h * hd, hd);
                        weighted += prow[j] * dp[j];
                        if (!gv.empty()) {
                            axpy_n(prow[j], du.data(), gv.data() + j * d + h * hd, hd);
                        }
                    }
                    for (std::size_t j = 0; j < len; ++j) {
                        const T ds = prow[j] * (dp[j] - weighted) * inv_sqrt;
                        if (!gq.empty()) {
                            axpy_n(ds, kd + j * d + h * hd, gq.data() + i * d + h * hd, hd);
                        }
                        if (!gk.empty()) {
                            axpy_n(ds, qd + i * d + h * hd, gk.data() + j * d + h * hd, hd);
                        }
                    }
                }
            }
        });
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets) {
    require(logits.rank() >= 2, "cross_entropy", "expected logits [..., classes]");
    const std::size_t c = logits.shape().back();
    const std::size_t n = logits.numel() / c;
    require(targets.size() == n, "cross_entropy", "one target per row required");
    std::size_t count = 0;
    for (int t : targets) {
        if (t == kIgnoreIndex) {
            continue;
        }
        if (t < 0 || static_cast<std::size_t>(t) >= c) {
            throw UsageError("cross_entropy: target " + std::to_string(t) + " out of range");
        }
        ++count;
    }
    if (count == 0) {
        throw NumericError("cross_entropy: every position is masked");
    }
    const T* z = logits.data().data();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i] == kIgnoreIndex) {
            continue;
        }
        const T* row = z + i * c;
        const T mx = *std::max_element(row, row + c);
        T acc = 0;
        for (std::size_t j = 0; j < c; ++j) {
            acc += std::exp(row[j] - mx);
        }
        total += static_cast<double>(mx + std::log(acc) - row[targets[i]]);
    }
    const T loss = static_cast<T>(total / static_cast<double>(count));
    std::vector<int> tg(targets.begin(), targets.end());
    return make_result<T>({1}, {loss}, {&logits}, "cross_entropy",
                          [tg = std::move(tg), n, c, count](TensorImpl<T>& o) {
                              auto gz = input_grad(o, 0);
                              const T* z = input_data(o, 0).data();
                              const T scale = o.grad[0] / static_cast<T>(count);
                              for (std::size_t i = 0; i < n; ++i) {
                                  if (tg[i] == kIgnoreIndex) {
                                      continue;
                                  }
                                  const T* row = z + i * c;
                                  const T mx = *std::max_element(row, row + c);
                                  T acc = 0;
                                  for (std::size_t j = 0; j < c; ++j) {
                                      acc += std::exp(row[j] - mx);
                                  }
                                  T* grow = gz.data() + i * c;
                                  for (std::size_t j = 0; j < c; ++j) {
                                      grow[j] += scale * std::exp(row[j] - mx) / acc;
                                  }
                                  grow[tg[i]] -= scale;
                              }
                          });
}

template <typename T>
BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, std::span<const T> labels) {
    require(labels.size() == logits.numel(), "bce_with_logits", "one label per logit required");
    const T* z = logits.data().data();
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const T x = z[i];
        total += static_cast<double>(std::max(x, T(0)) - x * labels[i] +
                                     std::log1p(std::exp(-std::abs(x))));
    }
    const std::size_t n = labels.size();
    const T loss = static_cast<T>(total / static_cast<double>(n));
    std::vector<T> y(labels.begin(), labels.end());
    return make_result<T>({1}, {loss}, {&logits}, "bce_with_logits",
                          [y = std::move(y), n](TensorImpl<T>& o) {
                              auto gz = input_grad(o, 0);
                              const T* z = input_data(o, 0).data();
                              const T scale = o.grad[0] / static_cast<T>(n);
                              for (std::size_t i = 0; i < n; ++i) {
                                  const T s = T(1) / (T(1) + std::exp(-z[i]));
                                  gz[i] += scale * (s - y[i]);
                              }
                          });
}

#define PEFT_FORGE_INSTANTIATE(T)                                                                \
    template BasicTensor<T> rotary(const BasicTensor<T>&, std::span<const int>, std::size_t,     \
                                   double);                                                      \
    template BasicTensor<T> causal_attention(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                             const BasicTensor<T>&, std::size_t, std::size_t,    \
                                             std::size_t, const BasicTensor<T>*,                 \
                                             const BasicTensor<T>*);                             \
    template BasicTensor<T> gated_prompt_attention(const BasicTensor<T>&, const BasicTensor<T>&, \
                                                   const BasicTensor<T>&, const BasicTensor<T>&, \
                                                   std::size_t);                                 \
    template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const int>);          \
    template BasicTensor<T> bce_with_logits(const BasicTensor<T>&, std::span<const T>);

PEFT_FORGE_INSTANTIATE(float)
PEFT_FORGE_INSTANTIATE(double)

#undef PEFT_FORGE_INSTANTIATE

}  // namespace peft_forge
