#include "peft_forge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "tensor_detail.hpp"

namespace peft_forge {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

thread_local bool t_grad_enabled = true;

void validate_shape(const Shape& shape) {
    if (shape.empty()) {
        throw UsageError("tensor: empty shape");
    }
    for (auto d : shape) {
        if (d == 0) {
            throw UsageError("tensor: zero-sized dimension in " + shape_str(shape));
        }
    }
}

}  // namespace

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
std::span<T> TensorImpl<T>::grad_buffer() {
    if (grad.empty()) {
        grad.assign(data.size(), T(0));
    }
    return grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(const Shape& shape) {
    return full(shape, T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(const Shape& shape, T value) {
    validate_shape(shape);
    return from_data(shape, std::vector<T>(shape_numel(shape), value));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::gaussian(const Shape& shape, double mean, double stddev,
                                        std::uint64_t seed) {
    Rng rng(seed);
    return gaussian(shape, mean, stddev, rng);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::gaussian(const Shape& shape, double mean, double stddev, Rng& rng) {
    validate_shape(shape);
    std::vector<T> data(shape_numel(shape));
    for (auto& x : data) {
        x = static_cast<T>(rng.gaussian(mean, stddev));
    }
    return from_data(shape, std::move(data));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_data(const Shape& shape, std::vector<T> data) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size()) {
        throw UsageError("tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    }
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = shape;
    impl->data = std::move(data);
    return BasicTensor(std::move(impl));
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
    return detail::impl_of(*this, "shape").shape;
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw UsageError("tensor: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
    }
    return s[axis];
}

template <typename T>
std::size_t BasicTensor<T>::numel() const {
    return detail::impl_of(*this, "numel").data.size();
}

template <typename T>
std::span<const T> BasicTensor<T>::data() const {
    return detail::impl_of(*this, "data").data;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_data() {
    detail::impl_of(*this, "mutable_data");
    return impl_->data;
}

template <typename T>
T BasicTensor<T>::item() const {
    const auto d = data();
    if (d.size() != 1) {
        throw UsageError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    }
    return d[0];
}

template <typename T>
bool BasicTensor<T>::requires_grad() const {
    return detail::impl_of(*this, "requires_grad").requires_grad;
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool value) {
    detail::impl_of(*this, "set_requires_grad");
    if (!impl_->is_leaf()) {
        throw UsageError("set_requires_grad: only leaves can change trainability");
    }
    impl_->requires_grad = value;
    if (value) {
        impl_->grad.assign(impl_->data.size(), T(0));
    } else {
        impl_->grad.clear();
        impl_->grad.shrink_to_fit();
    }
    return *this;
}

template <typename T>
bool BasicTensor<T>::has_grad() const {
    return !detail::impl_of(*this, "has_grad").grad.empty();
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
    return detail::impl_of(*this, "grad").grad;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
    detail::impl_of(*this, "mutable_grad");
    return impl_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
    detail::impl_of(*this, "zero_grad");
    std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
    return from_data(shape(), std::vector<T>(data().begin(), data().end()));
}

template <typename T>
std::size_t BasicTensor<T>::backward() {
    auto& root = const_cast<TensorImpl<T>&>(detail::impl_of(*this, "backward"));
    if (root.data.size() != 1) {
        throw UsageError("backward: loss must be a scalar, got " + shape_str(root.shape));
    }
    if (root.backward_done) {
        throw UsageError("backward: graph already consumed; run a new forward pass");
    }
    root.backward_done = true;
    if (!root.requires_grad) {
        return 0;
    }
    if (root.is_leaf()) {
        root.grad_buffer()[0] += T(1);
        return 0;
    }

    // Iterative post-order DFS gives a topological order of interior nodes.
    std::vector<TensorImpl<T>*> order;
    std::unordered_set<TensorImpl<T>*> seen;
    std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
    stack.emplace_back(&root, 0);
    seen.insert(&root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (node->node && next < node->node->inputs.size()) {
            TensorImpl<T>* child = node->node->inputs[next++].get();
            if (child != nullptr && child->requires_grad && child->node && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    root.grad_buffer()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl<T>& out = **it;
        out.grad_buffer();
        out.node->backward(out);
    }
    for (TensorImpl<T>* node : order) {
        node->node.reset();
        node->grad.clear();
        node->grad.shrink_to_fit();
    }
    return order.size();
}

template struct TensorImpl<float>;
template struct TensorImpl<double>;
template class BasicTensor<float>;
template class BasicTensor<double>;

// ---------------------------------------------------------------- checks

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

double grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& x, double eps) {
    if (!(eps > 0.0)) {
        throw UsageError("grad_check: eps must be positive");
    }
    TensorD probe = x.clone();
    probe.set_requires_grad(true);
    std::vector<TensorD> params{probe};
    return grad_check_params([&] { return f(probe); }, params, eps, 0, 0).max_rel_error;
}

GradCheckReport grad_check_params(const std::function<TensorD()>& loss_fn,
                                  std::span<TensorD> params, double eps, std::size_t samples,
                                  std::uint64_t seed) {
    if (!(eps > 0.0)) {
        throw UsageError("grad_check: eps must be positive");
    }
    for (auto& p : params) {
        if (!p.requires_grad()) {
            throw UsageError("grad_check: every checked parameter must require grad");
        }
        p.zero_grad();
    }
    TensorD loss = loss_fn();
    loss.backward();

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    std::size_t total = 0;
    for (const auto& p : params) {
        total += p.numel();
    }
    if (samples == 0 || samples >= total) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            for (std::size_t j = 0; j < params[i].numel(); ++j) {
                coords.emplace_back(i, j);
            }
        }
    } else {
        Rng rng(seed);
        for (std::size_t s = 0; s < samples; ++s) {
            std::size_t flat = rng.below(total);
            std::size_t i = 0;
            while (flat >= params[i].numel()) {
                flat -= params[i].numel();
                ++i;
            }
            coords.emplace_back(i, flat);
        }
    }

    NoGradGuard no_grad;
    GradCheckReport report;
    for (auto [i, j] : coords) {
        auto values = params[i].mutable_data();
        const double original = values[j];
        values[j] = original + eps;
        const double plus = loss_fn().item();
        values[j] = original - eps;
        const double minus = loss_fn().item();
        values[j] = original;
        const double numeric = (plus - minus) / (2.0 * eps);
        const double analytic = params[i].grad()[j];
        const double err = relative_error(analytic, numeric);
        if (err >= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_param = i;
            report.worst_index = j;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
        ++report.coordinates;
    }
    return report;
}

}  // namespace peft_forge
