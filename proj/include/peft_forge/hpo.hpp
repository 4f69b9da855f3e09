#pragma once

// Bayesian optimisation over finite hyperparameter grids: a Gaussian process
// with an RBF kernel and expected improvement, evaluated exhaustively over
// the untried grid points.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "peft_forge/adapters.hpp"
#include "peft_forge/train.hpp"

namespace peft_forge {

using ParamValue = std::variant<double, bool, std::string>;
/// One value per dimension, in the space's dimension order.
using Point = std::vector<ParamValue>;

struct Dimension {
    enum class Kind { ordinal, categorical, boolean };

    std::string name;
    Kind kind = Kind::ordinal;
    std::vector<double> values;        // ordinal, ascending
    std::vector<std::string> symbols;  // categorical

    static Dimension ordinal(std::string name, std::vector<double> values);
    static Dimension categorical(std::string name, std::vector<std::string> symbols);
    static Dimension boolean(std::string name);

    std::size_t size() const;
    /// Width of this dimension's block in the encoded vector.
    std::size_t encoded_width() const;
    ParamValue value_at(std::size_t i) const;
    /// Throws UsageError for a value outside the grid.
    std::size_t index_of(const ParamValue& v) const;
};

struct SearchSpace {
    std::vector<Dimension> dims;

    std::size_t grid_size() const;
    std::size_t encoded_size() const;
    /// Mixed-radix decoding, first dimension most significant.
    Point point_at(std::size_t flat) const;
    std::size_t flat_index(const Point& p) const;
    const Dimension& dim(std::string_view name) const;
};

/// Ordinal dimensions map to [0, 1] by log2 position between the smallest and
/// largest value (linearly when the grid contains values <= 0); categorical
/// and boolean dimensions are one-hot. Throws UsageError for values or
/// symbols outside the grid.
std::vector<double> encode(const Point& point, const SearchSpace& space);

/// The grid for a technique at a stage. The fine-tuning stage only tunes
/// LoRA; other techniques there throw UsageError.
SearchSpace search_space(Stage stage, Technique technique);

/// Adapter configuration for a grid point of search_space(stage, technique).
AnyAdapterConfig config_from_point(Technique technique, const SearchSpace& space,
                                   const Point& point);

std::string point_to_json(const Point& point, const SearchSpace& space);

// ---------------------------------------------------------------- GP

struct GpState {
    std::vector<std::vector<double>> x;  // encoded observations
    std::vector<double> y;               // standardized objectives
    double y_mean = 0.0;
    double y_scale = 1.0;
    double length_scale = 0.5;
    double noise = 1e-6;
    std::vector<double> chol;   // lower Cholesky factor of K + noise I, row-major
    std::vector<double> alpha;  // (K + noise I)^-1 y
};

double rbf_kernel(std::span<const double> a, std::span<const double> b, double length_scale);

/// Fits a zero-mean GP to objectives standardized to zero mean and unit
/// variance. Throws UsageError without observations or with duplicate
/// points, NumericError when the kernel matrix is not positive definite.
GpState gp_fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
               double length_scale = 0.5, double noise = 1e-6);

struct Posterior {
    double mean = 0.0;      // standardized units
    double variance = 0.0;  // >= 0
};

Posterior gp_posterior(const GpState& state, std::span<const double> x);

/// Expected improvement over `best` (standardized, maximisation).
double expected_improvement(const Posterior& p, double best, double xi = 0.01);

// ---------------------------------------------------------------- search

enum class Direction { minimize, maximize };

struct TrialRecord {
    std::size_t trial_index = 0;
    Point point;
    std::size_t grid_index = 0;
    std::optional<double> objective;  // empty when the evaluation failed
    std::string error;
    bool random = false;  // drawn during the initial random phase
};

struct SearchOptions {
    Direction direction = Direction::maximize;
    std::size_t max_trials = 20;
    std::size_t initial_random = 5;
    std::uint64_t seed = 0;
    double length_scale = 0.5;
    double xi = 0.01;
};

struct SearchResult {
    std::vector<TrialRecord> history;
    std::optional<std::size_t> best;  // index into history; empty if every trial failed

    const TrialRecord& best_trial() const;
    /// One JSON object per trial, then {"type":"best",..}.
    std::string to_jsonl(const SearchSpace& space) const;
};

/// Next point by maximal expected improvement over the untried grid; ties go
/// to the lowest grid index. Throws UsageError when every point was tried.
std::size_t suggest(const GpState& state, const SearchSpace& space,
                    const std::vector<bool>& tried, double best, double xi = 0.01);

using Objective = std::function<double(const Point&)>;

/// Sequential search. Evaluations that throw NumericError or DataError, or
/// return a non-finite value, are recorded as failures; the GP sees them as
/// the worst value observed so far. Stops early when the grid is exhausted.
SearchResult search(const SearchSpace& space, const Objective& objective,
                    const SearchOptions& options);

}  // namespace peft_forge
