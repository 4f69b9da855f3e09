#include <algorithm>
#include <cmath>

#include "peft_forge/parallel.hpp"
#include "tensor_detail.hpp"

namespace peft_forge {

using detail::input_data;
using detail::input_grad;
using detail::make_result;
using detail::require;

namespace {

// C[m, n] += A[m, k] * B[k, n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    const bool par = parallel_worthwhile(m * k * n);
#pragma omp parallel for schedule(static) if (par) num_threads(thread_count())
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t t = 0; t < k; ++t) {
            const T av = arow[t];
            const T* brow = b + t * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C[k, n] += A[m, k]^T * B[m, n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    const bool par = parallel_worthwhile(m * k * n);
#pragma omp parallel for schedule(static) if (par) num_threads(thread_count())
    for (std::ptrdiff_t tt = 0; tt < static_cast<std::ptrdiff_t>(k); ++tt) {
        const auto t = static_cast<std::size_t>(tt);
        T* crow = c + t * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = a[i * k + t];
            const T* brow = b + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
std::vector<T> transposed(const std::vector<T>& x, std::size_t rows, std::size_t cols) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    return out;
}

template <typename T>
std::pair<std::size_t, std::size_t> as_matrix(const BasicTensor<T>& x, const char* op) {
    require(x.rank() == 2, op, "expected a matrix, got " + shape_str(x.shape()));
    return {x.dim(0), x.dim(1)};
}

enum class Broadcast { same, scalar_b, scalar_a };

template <typename T>
Broadcast check_broadcast(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
    if (a.shape() == b.shape()) {
        return Broadcast::same;
    }
    if (b.numel() == 1) {
        return Broadcast::scalar_b;
    }
    if (a.numel() == 1) {
        return Broadcast::scalar_a;
    }
    throw UsageError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
}

template <typename T, typename Fwd, typename Dfdx>
BasicTensor<T> unary(const BasicTensor<T>& a, const char* op, Fwd fwd, Dfdx dfdx) {
    const auto src = a.data();
    std::vector<T> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        out[i] = fwd(src[i]);
    }
    return make_result<T>(a.shape(), std::move(out), {&a}, op, [dfdx](TensorImpl<T>& o) {
        auto ga = input_grad(o, 0);
        const auto& x = input_data(o, 0);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += o.grad[i] * dfdx(x[i], o.data[i]);
        }
    });
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const auto [m, k] = as_matrix(a, "matmul");
    const auto [k2, n] = as_matrix(b, "matmul");
    require(k == k2, "matmul",
            "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<T> out(m * n, T(0));
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_result<T>({m, n}, std::move(out), {&a, &b}, "matmul",
                          [m, k, n](TensorImpl<T>& o) {
                              auto ga = input_grad(o, 0);
                              auto gb = input_grad(o, 1);
                              if (!ga.empty()) {
                                  const auto bt = transposed(input_data(o, 1), k, n);
                                  gemm_nn(o.grad.data(), bt.data(), ga.data(), m, n, k);
                              }
                              if (!gb.empty()) {
                                  gemm_tn(input_data(o, 0).data(), o.grad.data(), gb.data(), m,
                                          k, n);
                              }
                          });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
    const auto [m, n] = as_matrix(a, "transpose");
    auto out = transposed(a.impl()->data, m, n);
    return make_result<T>({n, m}, std::move(out), {&a}, "transpose", [m, n](TensorImpl<T>& o) {
        auto ga = input_grad(o, 0);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                ga[i * n + j] += o.grad[j * m + i];
            }
        }
    });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, const Shape& shape) {
    require(shape_numel(shape) == a.numel(), "reshape",
            "cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<T> out(a.data().begin(), a.data().end());
    return make_result<T>(shape, std::move(out), {&a}, "reshape", [](TensorImpl<T>& o) {
        auto ga = input_grad(o, 0);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += o.grad[i];
        }
    });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const auto mode = check_broadcast(a, b, "add");
    const auto& out_shape = mode == Broadcast::scalar_a ? b.shape() : a.shape();
    const auto da = a.data();
    const auto db = b.data();
    std::vector<T> out(shape_numel(out_shape));
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = da[mode == Broadcast::scalar_a ? 0 : i] + db[mode == Broadcast::scalar_b ? 0 : i];
    }
    return make_result<T>(out_shape, std::move(out), {&a, &b}, "add", [mode](TensorImpl<T>& o) {
        auto ga = input_grad(o, 0);
        auto gb = input_grad(o, 1);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            if (!ga.empty()) {
                ga[mode == Broadcast::scalar_a ? 0 : i] += o.grad[i];
            }
            if (!gb.empty()) {
                gb[mode == Broadcast::scalar_b ? 0 : i] += o.grad[i];
            }
        }
    });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return add(a, scale(b, -1.0));
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const auto mode = check_broadcast(a, b, "mul");
    const auto& out_shape = mode == Broadcast::scalar_a ? b.shape() : a.shape();
    const auto da = a.data();
    const auto db = b.data();
    std::vector<T> out(shape_numel(out_shape));
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = da[mode == Broadcast::scalar_a ? 0 : i] * db[mode == Broadcast::scalar_b ? 0 : i];
    }
    return make_result<T>(out_shape, std::move(out), {&a, &b}, "mul", [mode](TensorImpl<T>& o) {
        auto ga = input_grad(o, 0);
        auto gb = input_grad(o, 1);
        const auto& xa = input_data(o, 0);
        const auto& xb = input_data(o, 1);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const std::size_t ia = mode == Broadcast::scalar_a ? 0 : i;
            const std::size_t ib = mode == Broadcast::scalar_b ? 0 : i;
            if (!ga.empty()) {
                ga[ia] += o.grad[i] * xb[ib];
            }
            if (!gb.empty()) {
                gb[ib] += o.grad[i] * xa[ia];
            }
        }
    });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor) {
    const T f = static_cast<T>(factor);
    return unary<T>(
        a, "scale", [f](T x) { return f * x; }, [f](T, T) { return f; });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
    return unary<T>(
        a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a) {
    for (T x : a.data()) {
        if (!(x > T(0))) {
            throw NumericError("log: non-positive input");
        }
    }
    return unary<T>(
        a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
    return unary<T>(
        a, "sigmoid", [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& a) {
    return unary<T>(
        a, "silu", [](T x) { return x / (T(1) + std::exp(-x)); },
        [](T x, T) {
            const T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) + x * (T(1) - s));
        });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& a) {
    return unary<T>(
        a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
    return unary<T>(
        a, "relu", [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& a) {
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.numel() / cols;
    const auto src = a.data();
    std::vector<T> out(src.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = src.data() + r * cols;
        T* y = out.data() + r * cols;
        const T mx = *std::max_element(x, x + cols);
        T total = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            total += y[j];
        }
        for (std::size_t j = 0; j < cols; ++j) {
            y[j] /= total;
        }
    }
    return make_result<T>(a.shape(), std::move(out), {&a}, "softmax_lastdim",
                          [rows, cols](TensorImpl<T>& o) {
                              auto ga = input_grad(o, 0);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const T* y = o.data.data() + r * cols;
                                  const T* g = o.grad.data() + r * cols;
                                  T dot = 0;
                                  for (std::size_t j = 0; j < cols; ++j) {
                                      dot += g[j] * y[j];
                                  }
                                  for (std::size_t j = 0; j < cols; ++j) {
                                      ga[r * cols + j] += y[j] * (g[j] - dot);
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> rsqrt_meansq(const BasicTensor<T>& a, double eps) {
    if (!(eps > 0.0)) {
        throw NumericError("rsqrt_meansq: eps must be positive");
    }
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.numel() / cols;
    const auto src = a.data();
    std::vector<T> out(src.size());
    auto inv = std::make_shared<std::vector<T>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = src.data() + r * cols;
        T ss = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            ss += x[j] * x[j];
        }
        const T inv_rms = T(1) / std::sqrt(ss / static_cast<T>(cols) + static_cast<T>(eps));
        (*inv)[r] = inv_rms;
        for (std::size_t j = 0; j < cols; ++j) {
            out[r * cols + j] = x[j] * inv_rms;
        }
    }
    return make_result<T>(a.shape(), std::move(out), {&a}, "rsqrt_meansq",
                          [rows, cols, inv](TensorImpl<T>& o) {
                              auto ga = input_grad(o, 0);
                              const auto& xs = input_data(o, 0);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const T* x = xs.data() + r * cols;
                                  const T* g = o.grad.data() + r * cols;
                                  const T s = (*inv)[r];
                                  T dot = 0;
                                  for (std::size_t j = 0; j < cols; ++j) {
                                      dot += g[j] * x[j];
                                  }
                                  const T coeff = s * s * s * dot / static_cast<T>(cols);
                                  for (std::size_t j = 0; j < cols; ++j) {
                                      ga[r * cols + j] += s * g[j] - coeff * x[j];
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> mul_rowvec(const BasicTensor<T>& x, const BasicTensor<T>& v) {
    const std::size_t cols = x.shape().back();
    require(v.numel() == cols, "mul_rowvec",
            "vector of " + std::to_string(v.numel()) + " for rows of " + std::to_string(cols));
    const std::size_t rows = x.numel() / cols;
    const auto xs = x.data();
    const auto vs = v.data();
    std::vector<T> out(xs.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[r * cols + j] = xs[r * cols + j] * vs[j];
        }
    }
    return make_result<T>(x.shape(), std::move(out), {&x, &v}, "mul_rowvec",
                          [rows, cols](TensorImpl<T>& o) {
                              auto gx = input_grad(o, 0);
                              auto gv = input_grad(o, 1);
                              const auto& xd = input_data(o, 0);
                              const auto& vd = input_data(o, 1);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  for (std::size_t j = 0; j < cols; ++j) {
                                      const T g = o.grad[r * cols + j];
                                      if (!gx.empty()) {
                                          gx[r * cols + j] += g * vd[j];
                                      }
                                      if (!gv.empty()) {
                                          gv[j] += g * xd[r * cols + j];
                                      }
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> add_rowvec(const BasicTensor<T>& x, const BasicTensor<T>& v) {
    const std::size_t cols = x.shape().back();
    require(v.numel() == cols, "add_rowvec",
            "vector of " + std::to_string(v.numel()) + " for rows of " + std::to_string(cols));
    const std::size_t rows = x.numel() / cols;
    const auto xs = x.data();
    const auto vs = v.data();
    std::vector<T> out(xs.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[r * cols + j] = xs[r * cols + j] + vs[j];
        }
    }
    return make_result<T>(x.shape(), std::move(out), {&x, &v}, "add_rowvec",
                          [rows, cols](TensorImpl<T>& o) {
                              auto gx = input_grad(o, 0);
                              auto gv = input_grad(o, 1);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  for (std::size_t j = 0; j < cols; ++j) {
                                      const T g = o.grad[r * cols + j];
                                      if (!gx.empty()) {
                                          gx[r * cols + j] += g;
                                      }
                                      if (!gv.empty()) {
                                          gv[j] += g;
                                      }
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
    T total = 0;
    for (T x : a.data()) {
        total += x;
    }
    return make_result<T>({1}, {total}, {&a}, "sum", [](TensorImpl<T>& o) {
        auto ga = input_grad(o, 0);
        for (auto& g : ga) {
            g += o.grad[0];
        }
    });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& weight, std::span<const int> ids) {
    const auto [vocab, d] = as_matrix(weight, "embedding");
    require(!ids.empty(), "embedding", "no ids");
    const auto w = weight.data();
    std::vector<T> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw UsageError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                             std::to_string(vocab));
        }
        std::copy_n(w.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    std::vector<int> idx(ids.begin(), ids.end());
    return make_result<T>({ids.size(), d}, std::move(out), {&weight}, "embedding",
                          [idx = std::move(idx), d](TensorImpl<T>& o) {
                              auto gw = input_grad(o, 0);
                              for (std::size_t i = 0; i < idx.size(); ++i) {
                                  T* dst = gw.data() + static_cast<std::size_t>(idx[i]) * d;
                                  const T* src = o.grad.data() + i * d;
                                  for (std::size_t j = 0; j < d; ++j) {
                                      dst[j] += src[j];
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::size_t> rows) {
    const auto [n, d] = as_matrix(x, "gather_rows");
    require(!rows.empty(), "gather_rows", "no rows");
    const auto xs = x.data();
    std::vector<T> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] < n, "gather_rows", "row index out of range");
        std::copy_n(xs.data() + rows[i] * d, d, out.data() + i * d);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result<T>({rows.size(), d}, std::move(out), {&x}, "gather_rows",
                          [idx = std::move(idx), d](TensorImpl<T>& o) {
                              auto gx = input_grad(o, 0);
                              for (std::size_t i = 0; i < idx.size(); ++i) {
                                  for (std::size_t j = 0; j < d; ++j) {
                                      gx[idx[i] * d + j] += o.grad[i * d + j];
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> concat_rows(std::span<const BasicTensor<T>> parts) {
    require(!parts.empty(), "concat_rows", "no parts");
    const std::size_t d = as_matrix(parts[0], "concat_rows").second;
    std::size_t rows = 0;
    for (const auto& p : parts) {
        require(as_matrix(p, "concat_rows").second == d, "concat_rows", "column counts differ");
        rows += p.dim(0);
    }
    std::vector<T> out;
    out.reserve(rows * d);
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    // Graph inputs are recorded dynamically since the part count varies.
    auto result = BasicTensor<T>::from_data({rows, d}, std::move(out));
    bool needs = false;
    for (const auto& p : parts) {
        needs = needs || p.requires_grad();
    }
    if (needs && grad_enabled()) {
        auto node = std::make_shared<GraphNode<T>>();
        node->op = "concat_rows";
        for (const auto& p : parts) {
            node->inputs.push_back(p.impl());
        }
        node->backward = [](TensorImpl<T>& o) {
            std::size_t offset = 0;
            for (std::size_t i = 0; i < o.node->inputs.size(); ++i) {
                const std::size_t n = o.node->inputs[i]->data.size();
                auto g = input_grad(o, i);
                for (std::size_t j = 0; j < g.size(); ++j) {
                    g[j] += o.grad[offset + j];
                }
                offset += n;
            }
        };
        result.impl()->node = std::move(node);
        result.impl()->requires_grad = true;
    }
    return result;
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t count) {
    const auto [n, d] = as_matrix(x, "slice_cols");
    require(count >= 1 && begin + count <= d, "slice_cols", "column range out of bounds");
    const auto xs = x.data();
    std::vector<T> out(n * count);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(xs.data() + i * d + begin, count, out.data() + i * count);
    }
    return make_result<T>({n, count}, std::move(out), {&x}, "slice_cols",
                          [n, d, begin, count](TensorImpl<T>& o) {
                              auto gx = input_grad(o, 0);
                              for (std::size_t i = 0; i < n; ++i) {
                                  for (std::size_t j = 0; j < count; ++j) {
                                      gx[i * d + begin + j] += o.grad[i * count + j];
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> concat_cols(std::span<const BasicTensor<T>> parts) {
    require(!parts.empty(), "concat_cols", "no parts");
    const std::size_t n = as_matrix(parts[0], "concat_cols").first;
    std::size_t d = 0;
    for (const auto& p : parts) {
        require(as_matrix(p, "concat_cols").first == n, "concat_cols", "row counts differ");
        d += p.dim(1);
    }
    std::vector<T> out(n * d);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(p.data().data() + i * w, w, out.data() + i * d + offset);
        }
        offset += w;
    }
    auto result = BasicTensor<T>::from_data({n, d}, std::move(out));
    bool needs = false;
    for (const auto& p : parts) {
        needs = needs || p.requires_grad();
    }
    if (needs && grad_enabled()) {
        auto node = std::make_shared<GraphNode<T>>();
        node->op = "concat_cols";
        for (const auto& p : parts) {
            node->inputs.push_back(p.impl());
        }
        node->backward = [n, d](TensorImpl<T>& o) {
            std::size_t off = 0;
            for (std::size_t p = 0; p < o.node->inputs.size(); ++p) {
                const std::size_t w = o.node->inputs[p]->shape[1];
                auto g = input_grad(o, p);
                if (!g.empty()) {
                    for (std::size_t i = 0; i < n; ++i) {
                        for (std::size_t j = 0; j < w; ++j) {
                            g[i * w + j] += o.grad[i * d + off + j];
                        }
                    }
                }
                off += w;
            }
        };
        result.impl()->node = std::move(node);
        result.impl()->requires_grad = true;
    }
    return result;
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw UsageError("dropout: probability must lie in [0, 1)");
    }
    if (p == 0.0) {
        return x;
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    auto mask = std::make_shared<std::vector<T>>(x.numel());
    for (auto& m : *mask) {
        m = rng.bernoulli(p) ? T(0) : keep_scale;
    }
    const auto xs = x.data();
    std::vector<T> out(xs.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = xs[i] * (*mask)[i];
    }
    return make_result<T>(x.shape(), std::move(out), {&x}, "dropout", [mask](TensorImpl<T>& o) {
        auto gx = input_grad(o, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += o.grad[i] * (*mask)[i];
        }
    });
}

#define PEFT_FORGE_INSTANTIATE(T)                                                              \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);              \
    template BasicTensor<T> transpose(const BasicTensor<T>&);                                  \
    template BasicTensor<T> reshape(const BasicTensor<T>&, const Shape&);                      \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                 \
    template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                 \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                 \
    template BasicTensor<T> scale(const BasicTensor<T>&, double);                              \
    template BasicTensor<T> exp(const BasicTensor<T>&);                                        \
    template BasicTensor<T> log(const BasicTensor<T>&);                                        \
    template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                    \
    template BasicTensor<T> silu(const BasicTensor<T>&);                                       \
    template BasicTensor<T> tanh(const BasicTensor<T>&);                                       \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                       \
    template BasicTensor<T> softmax_lastdim(const BasicTensor<T>&);                            \
    template BasicTensor<T> rsqrt_meansq(const BasicTensor<T>&, double);                       \
    template BasicTensor<T> mul_rowvec(const BasicTensor<T>&, const BasicTensor<T>&);          \
    template BasicTensor<T> add_rowvec(const BasicTensor<T>&, const BasicTensor<T>&);          \
    template BasicTensor<T> sum(const BasicTensor<T>&);                                        \
    template BasicTensor<T> mean(const BasicTensor<T>&);                                       \
    template BasicTensor<T> embedding(const BasicTensor<T>&, std::span<const int>);            \
    template BasicTensor<T> gather_rows(const BasicTensor<T>&, std::span<const std::size_t>);  \
    template BasicTensor<T> concat_rows(std::span<const BasicTensor<T>>);                      \
    template BasicTensor<T> slice_cols(const BasicTensor<T>&, std::size_t, std::size_t);       \
    template BasicTensor<T> concat_cols(std::span<const BasicTensor<T>>);                      \
    template BasicTensor<T> dropout(const BasicTensor<T>&, double, Rng&);

PEFT_FORGE_INSTANTIATE(float)
PEFT_FORGE_INSTANTIATE(double)

#undef PEFT_FORGE_INSTANTIATE

}  // namespace peft_forge
