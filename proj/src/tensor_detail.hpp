#pragma once

// Shared helpers for op implementations. Not part of the public API.

#include <initializer_list>
#include <string>

#include "peft_forge/error.hpp"
#include "peft_forge/tensor.hpp"

namespace peft_forge::detail {

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

template <typename T>
using BackwardFn = std::function<void(TensorImpl<T>& out)>;

inline void require(bool condition, const char* op, const std::string& message) {
    if (!condition) {
        throw UsageError(std::string(op) + ": " + message);
    }
}

template <typename T>
const TensorImpl<T>& impl_of(const BasicTensor<T>& t, const char* op) {
    require(t.defined(), op, "undefined tensor");
    return *t.impl();
}

/// Builds an op result. Records `backward` with `inputs` when grad mode is on
/// and at least one input requires grad.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           std::initializer_list<const BasicTensor<T>*> inputs, const char* op,
                           BackwardFn<T> backward) {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool needs = false;
    if (grad_enabled()) {
        for (const auto* in : inputs) {
            if (in != nullptr && in->defined() && in->impl()->requires_grad) {
                needs = true;
                break;
            }
        }
    }
    if (needs) {
        auto node = std::make_shared<GraphNode<T>>();
        node->op = op;
        for (const auto* in : inputs) {
            node->inputs.push_back(in != nullptr && in->defined() ? in->impl() : nullptr);
        }
        node->backward = std::move(backward);
        impl->node = std::move(node);
        impl->requires_grad = true;
    }
    return BasicTensor<T>(std::move(impl));
}

/// Grad buffer of input `i` of a node, or an empty span when that input does
/// not take gradients.
template <typename T>
std::span<T> input_grad(TensorImpl<T>& out, std::size_t i) {
    auto& in = out.node->inputs[i];
    if (!in || !in->requires_grad) {
        return {};
    }
    return in->grad_buffer();
}

template <typename T>
const std::vector<T>& input_data(TensorImpl<T>& out, std::size_t i) {
    return out.node->inputs[i]->data;
}

}  // namespace peft_forge::detail
