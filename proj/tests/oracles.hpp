#pragma once

// Brute-force reference implementations used to pin down the fast paths.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace oracle {

/// (wins + ties / 2) / (n+ n-) over every positive-negative pair.
inline std::optional<double> auroc_pairs(std::span<const double> scores,
                                         std::span<const int> labels) {
    std::uint64_t twice_wins = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 1) ++pos; else ++neg;
    }
    if (pos == 0 || neg == 0) return std::nullopt;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j]) twice_wins += 2;
            else if (scores[i] == scores[j]) twice_wins += 1;
        }
    }
    return 0.5 * static_cast<double>(twice_wins) / static_cast<double>(pos * neg);
}

/// Mean of per-column pair-count AUROCs over columns with both outcomes.
inline std::optional<double> macro_pairs(std::span<const double> scores, std::size_t k,
                                         const std::vector<std::vector<int>>& columns) {
    const std::size_t n = scores.size() / k;
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = scores[i * k + c];
        if (auto a = auroc_pairs(col, columns[c])) {
            total += *a;
            ++used;
        }
    }
    if (used == 0) return std::nullopt;
    return total / static_cast<double>(used);
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        }
        std::swap(a[col], a[pivot]);
        std::swap(b[col], b[pivot]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
        x[i] = s / a[i][i];
    }
    return x;
}

}  // namespace oracle
