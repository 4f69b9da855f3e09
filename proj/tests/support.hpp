#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "peft_forge/rng.hpp"
#include "peft_forge/model.hpp"
#include "peft_forge/tensor.hpp"

namespace test_support {

using peft_forge::Shape;
using peft_forge::TensorD;

inline TensorD random_param(const Shape& shape, std::uint64_t seed, double sd = 1.0) {
    TensorD t = TensorD::gaussian(shape, 0.0, sd, seed);
    t.set_requires_grad(true);
    return t;
}

/// Fixed weights for contracting a tensor into a scalar loss, so gradients
/// are not all equal.
inline TensorD probe_weights(const Shape& shape, std::uint64_t seed) {
    return TensorD::gaussian(shape, 0.0, 1.0, seed);
}

inline TensorD weighted_sum(const TensorD& x, const TensorD& w) {
    return peft_forge::sum(peft_forge::mul(x, w));
}

inline std::vector<int> random_ids(std::size_t n, int vocab, std::uint64_t seed, int low = 1) {
    peft_forge::Rng rng(seed);
    std::vector<int> ids(n);
    for (auto& id : ids) {
        id = low + static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab - low)));
    }
    return ids;
}

/// FNV-1a over the raw bytes of every tensor, in order.
template <typename T>
std::uint64_t bytes_hash(const std::vector<peft_forge::NamedTensor<T>>& tensors) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& nt : tensors) {
        const auto d = nt.tensor.data();
        const auto* p = reinterpret_cast<const unsigned char*>(d.data());
        for (std::size_t i = 0; i < d.size() * sizeof(T); ++i) {
            h = (h ^ p[i]) * 0x100000001b3ULL;
        }
    }
    return h;
}

template <typename T>
std::map<std::string, std::vector<T>> snapshot(const std::vector<peft_forge::NamedTensor<T>>& ts) {
    std::map<std::string, std::vector<T>> out;
    for (const auto& nt : ts) out[nt.name].assign(nt.tensor.data().begin(), nt.tensor.data().end());
    return out;
}

}  // namespace test_support
