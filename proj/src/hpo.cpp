#include "peft_forge/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "json.hpp"
#include "peft_forge/error.hpp"
#include "peft_forge/rng.hpp"

namespace peft_forge {

// ---------------------------------------------------------------- spaces

Dimension Dimension::ordinal(std::string name, std::vector<double> values) {
    if (values.empty()) throw UsageError("dimension " + name + ": empty grid");
    if (!std::is_sorted(values.begin(), values.end()) ||
        std::adjacent_find(values.begin(), values.end()) != values.end()) {
        throw UsageError("dimension " + name + ": values must be strictly ascending");
    }
    return {std::move(name), Kind::ordinal, std::move(values), {}};
}

Dimension Dimension::categorical(std::string name, std::vector<std::string> symbols) {
    if (symbols.empty()) throw UsageError("dimension " + name + ": empty grid");
    return {std::move(name), Kind::categorical, {}, std::move(symbols)};
}

Dimension Dimension::boolean(std::string name) { return {std::move(name), Kind::boolean, {}, {}}; }

std::size_t Dimension::size() const {
    switch (kind) {
        case Kind::ordinal: return values.size();
        case Kind::categorical: return symbols.size();
        case Kind::boolean: return 2;
    }
    return 0;
}

std::size_t Dimension::encoded_width() const { return kind == Kind::ordinal ? 1 : size(); }

ParamValue Dimension::value_at(std::size_t i) const {
    if (i >= size()) throw UsageError("dimension " + name + ": index out of range");
    switch (kind) {
        case Kind::ordinal: return values[i];
        case Kind::categorical: return symbols[i];
        case Kind::boolean: return i == 1;
    }
    return {};
}

std::size_t Dimension::index_of(const ParamValue& v) const {
    switch (kind) {
        case Kind::ordinal:
            if (const auto* d = std::get_if<double>(&v)) {
                const auto it = std::find(values.begin(), values.end(), *d);
                if (it != values.end()) return static_cast<std::size_t>(it - values.begin());
            }
            break;
        case Kind::categorical:
            if (const auto* s = std::get_if<std::string>(&v)) {
                const auto it = std::find(symbols.begin(), symbols.end(), *s);
                if (it != symbols.end()) return static_cast<std::size_t>(it - symbols.begin());
                throw UsageError("dimension " + name + ": unknown symbol '" + *s + "'");
            }
            break;
        case Kind::boolean:
            if (const auto* b = std::get_if<bool>(&v)) return *b ? 1 : 0;
            break;
    }
    throw UsageError("dimension " + name + ": value not in the grid");
}

std::size_t SearchSpace::grid_size() const {
    std::size_t n = 1;
    for (const auto& d : dims) n *= d.size();
    return n;
}

std::size_t SearchSpace::encoded_size() const {
    std::size_t n = 0;
    for (const auto& d : dims) n += d.encoded_width();
    return n;
}

Point SearchSpace::point_at(std::size_t flat) const {
    if (flat >= grid_size()) throw UsageError("grid index out of range");
    Point p(dims.size());
    for (std::size_t i = dims.size(); i-- > 0;) {
        p[i] = dims[i].value_at(flat % dims[i].size());
        flat /= dims[i].size();
    }
    return p;
}

std::size_t SearchSpace::flat_index(const Point& p) const {
    if (p.size() != dims.size()) throw UsageError("point has the wrong number of dimensions");
    std::size_t flat = 0;
    for (std::size_t i = 0; i < dims.size(); ++i) flat = flat * dims[i].size() + dims[i].index_of(p[i]);
    return flat;
}

const Dimension& SearchSpace::dim(std::string_view name) const {
    for (const auto& d : dims) {
        if (d.name == name) return d;
    }
    throw UsageError("search space has no dimension '" + std::string(name) + "'");
}

std::vector<double> encode(const Point& point, const SearchSpace& space) {
    if (point.size() != space.dims.size()) throw UsageError("point has the wrong number of dimensions");
    std::vector<double> out;
    out.reserve(space.encoded_size());
    for (std::size_t i = 0; i < point.size(); ++i) {
        const Dimension& d = space.dims[i];
        const std::size_t idx = d.index_of(point[i]);
        if (d.kind != Dimension::Kind::ordinal) {
            for (std::size_t j = 0; j < d.size(); ++j) out.push_back(j == idx ? 1.0 : 0.0);
            continue;
        }
        if (d.values.size() == 1) {
            out.push_back(0.0);
            continue;
        }
        const double lo = d.values.front(), hi = d.values.back(), v = d.values[idx];
        if (lo > 0.0) {
            out.push_back((std::log2(v) - std::log2(lo)) / (std::log2(hi) - std::log2(lo)));
        } else {
            out.push_back((v - lo) / (hi - lo));
        }
    }
    return out;
}

namespace {

Dimension virtual_tokens_dim() { return Dimension::ordinal("num_virtual_tokens", {1, 5, 10, 15, 20}); }
Dimension dropout_dim() { return Dimension::ordinal("dropout", {0.0, 0.1, 0.2}); }

SearchSpace lora_space() {
    return {{Dimension::ordinal("r", {2, 4, 8, 16}), Dimension::ordinal("alpha", {4, 8, 16, 32}),
             dropout_dim()}};
}

template <typename V>
const V& value(const SearchSpace& s, const Point& p, std::string_view name) {
    for (std::size_t i = 0; i < s.dims.size(); ++i) {
        if (s.dims[i].name == name) return std::get<V>(p[i]);
    }
    throw UsageError("search space has no dimension '" + std::string(name) + "'");
}

double number(const SearchSpace& s, const Point& p, std::string_view name) {
    return value<double>(s, p, name);
}

std::size_t count(double v) { return static_cast<std::size_t>(std::llround(v)); }

}  // namespace

SearchSpace search_space(Stage stage, Technique technique) {
    if (stage == Stage::finetune) {
        if (technique != Technique::lora) {
            throw UsageError("downstream search only tunes lora, not " +
                             std::string(technique_name(technique)));
        }
        return lora_space();
    }
    switch (technique) {
        case Technique::lora: return lora_space();
        case Technique::prefix:
            return {{virtual_tokens_dim(), Dimension::boolean("prefix_projection")}};
        case Technique::prompt:
            return {{virtual_tokens_dim(), Dimension::categorical("prompt_init", {"text", "random"})}};
        case Technique::ptuning:
            return {{virtual_tokens_dim(), Dimension::categorical("reparameterisation", {"mlp", "lstm"}),
                     Dimension::ordinal("hidden", {64, 128, 256, 768}),
                     Dimension::ordinal("num_layers", {1, 2, 4, 8, 12}), dropout_dim()}};
        case Technique::adaption_prompt:
            return {{Dimension::ordinal("adapter_length", {5, 10}),
                     Dimension::ordinal("adapter_layers", {10, 20, 30})}};
    }
    throw UsageError("unknown technique");
}

AnyAdapterConfig config_from_point(Technique technique, const SearchSpace& space, const Point& point) {
    space.flat_index(point);  // validates
    switch (technique) {
        case Technique::lora: {
            LoraConfig c;
            c.r = count(number(space, point, "r"));
            c.alpha = number(space, point, "alpha");
            c.dropout = number(space, point, "dropout");
            return c;
        }
        case Technique::prefix: {
            PrefixConfig c;
            c.num_virtual_tokens = count(number(space, point, "num_virtual_tokens"));
            c.prefix_projection = value<bool>(space, point, "prefix_projection");
            return c;
        }
        case Technique::prompt: {
            PromptConfig c;
            c.num_virtual_tokens = count(number(space, point, "num_virtual_tokens"));
            c.init = value<std::string>(space, point, "prompt_init") == "text" ? PromptInit::text
                                                                              : PromptInit::random;
            return c;
        }
        case Technique::ptuning: {
            PTuningConfig c;
            c.num_virtual_tokens = count(number(space, point, "num_virtual_tokens"));
            c.reparameterisation = value<std::string>(space, point, "reparameterisation") == "mlp"
                                       ? Reparameterisation::mlp
                                       : Reparameterisation::lstm;
            c.hidden = count(number(space, point, "hidden"));
            c.num_layers = count(number(space, point, "num_layers"));
            c.dropout = number(space, point, "dropout");
            return c;
        }
        case Technique::adaption_prompt: {
            AdaptionPromptConfig c;
            c.adapter_length = count(number(space, point, "adapter_length"));
            c.adapter_layers = count(number(space, point, "adapter_layers"));
            return c;
        }
    }
    throw UsageError("unknown technique");
}

namespace {

nlohmann::ordered_json point_json(const Point& point, const SearchSpace& space) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < point.size(); ++i) {
        std::visit([&](const auto& v) { j[space.dims[i].name] = v; }, point[i]);
    }
    return j;
}

}  // namespace

std::string point_to_json(const Point& point, const SearchSpace& space) {
    return point_json(point, space).dump();
}

// ---------------------------------------------------------------- GP

double rbf_kernel(std::span<const double> a, std::span<const double> b, double length_scale) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-sq / (2.0 * length_scale * length_scale));
}

GpState gp_fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
               double length_scale, double noise) {
    if (x.empty()) throw UsageError("gp_fit: no observations");
    if (x.size() != y.size()) throw UsageError("gp_fit: one objective per point required");
    if (!(length_scale > 0.0)) throw UsageError("gp_fit: length scale must be positive");
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (x[i] == x[j]) throw UsageError("gp_fit: duplicate observation points");
        }
    }
    GpState s;
    s.x = x;
    s.length_scale = length_scale;
    s.noise = noise;

    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    s.y_mean = mean;
    s.y_scale = var > 0.0 ? std::sqrt(var) : 1.0;
    for (double v : y) s.y.push_back((v - mean) / s.y_scale);

    // Cholesky of K + noise I.
    std::vector<double>& L = s.chol;
    L.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = rbf_kernel(x[i], x[j], length_scale) + (i == j ? noise : 0.0);
            for (std::size_t k = 0; k < j; ++k) sum -= L[i * n + k] * L[j * n + k];
            if (i == j) {
                if (!(sum > 0.0)) throw NumericError("gp_fit: kernel matrix is not positive definite");
                L[i * n + i] = std::sqrt(sum);
            } else {
                L[i * n + j] = sum / L[j * n + j];
            }
        }
    }
    // alpha = L^-T L^-1 y
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = s.y[i];
        for (std::size_t k = 0; k < i; ++k) sum -= L[i * n + k] * z[k];
        z[i] = sum / L[i * n + i];
    }
    s.alpha.assign(n, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        double sum = z[i];
        for (std::size_t k = i + 1; k < n; ++k) sum -= L[k * n + i] * s.alpha[k];
        s.alpha[i] = sum / L[i * n + i];
    }
    return s;
}

Posterior gp_posterior(const GpState& s, std::span<const double> x) {
    const std::size_t n = s.x.size();
    std::vector<double> k(n);
    for (std::size_t i = 0; i < n; ++i) k[i] = rbf_kernel(s.x[i], x, s.length_scale);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += k[i] * s.alpha[i];
    // v = L^-1 k; var = k(x,x) - v.v
    std::vector<double> v(n);
    double vv = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double sum = k[i];
        for (std::size_t j = 0; j < i; ++j) sum -= s.chol[i * n + j] * v[j];
        v[i] = sum / s.chol[i * n + i];
        vv += v[i] * v[i];
    }
    return {mean, std::max(0.0, 1.0 - vv)};
}

double expected_improvement(const Posterior& p, double best, double xi) {
    const double gain = p.mean - best - xi;
    const double sigma = std::sqrt(p.variance);
    if (sigma <= 1e-12) return std::max(0.0, gain);
    const double z = gain / sigma;
    const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    return gain * cdf + sigma * pdf;
}

// ---------------------------------------------------------------- search

const TrialRecord& SearchResult::best_trial() const {
    if (!best) throw NumericError("search: every trial failed");
    return history[*best];
}

std::string SearchResult::to_jsonl(const SearchSpace& space) const {
    std::string out;
    for (const auto& t : history) {
        nlohmann::ordered_json j{{"type", "trial"},
                                 {"trial", t.trial_index},
                                 {"grid_index", t.grid_index},
                                 {"point", point_json(t.point, space)},
                                 {"random", t.random}};
        if (t.objective) {
            j["status"] = "ok";
            j["objective"] = *t.objective;
        } else {
            j["status"] = "failed";
            j["objective"] = nullptr;
            j["error"] = t.error;
        }
        out += j.dump() + "\n";
    }
    nlohmann::ordered_json b{{"type", "best"}};
    if (best) {
        b["trial"] = history[*best].trial_index;
        b["point"] = point_json(history[*best].point, space);
        b["objective"] = *history[*best].objective;
    } else {
        b["trial"] = nullptr;
    }
    out += b.dump() + "\n";
    return out;
}

std::size_t suggest(const GpState& state, const SearchSpace& space, const std::vector<bool>& tried,
                    double best, double xi) {
    std::optional<std::size_t> arg;
    double top = -1.0;
    for (std::size_t i = 0; i < space.grid_size(); ++i) {
        if (tried[i]) continue;
        const auto x = encode(space.point_at(i), space);
        const double ei = expected_improvement(gp_posterior(state, x), best, xi);
        if (!arg || ei > top) {
            arg = i;
            top = ei;
        }
    }
    if (!arg) throw UsageError("suggest: every grid point has been tried");
    return *arg;
}

SearchResult search(const SearchSpace& space, const Objective& objective, const SearchOptions& options) {
    if (options.max_trials == 0) throw UsageError("search: max_trials must be positive");
    const std::size_t grid = space.grid_size();
    const double sign = options.direction == Direction::maximize ? 1.0 : -1.0;
    std::vector<bool> tried(grid, false);
    Rng rng(options.seed);
    SearchResult result;
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;  // sign-adjusted, larger is better
    std::vector<std::size_t> failed;  // indices into xs awaiting a worst value

    const std::size_t trials = std::min(options.max_trials, grid);
    for (std::size_t t = 0; t < trials; ++t) {
        std::size_t idx;
        const bool random = t < options.initial_random || ys.size() == failed.size();
        if (random) {
            // Uniform over the untried points.
            std::size_t k = rng.below(grid - t);
            idx = 0;
            for (;; ++idx) {
                if (tried[idx]) continue;
                if (k-- == 0) break;
            }
        } else {
            // Failed trials count as the worst successful value so far.
            double worst = 0.0;
            bool any = false;
            for (std::size_t i = 0; i < ys.size(); ++i) {
                if (std::find(failed.begin(), failed.end(), i) != failed.end()) continue;
                worst = any ? std::min(worst, ys[i]) : ys[i];
                any = true;
            }
            std::vector<double> filled = ys;
            for (std::size_t i : failed) filled[i] = worst;
            const GpState state = gp_fit(xs, filled, options.length_scale);
            const double best = *std::max_element(state.y.begin(), state.y.end());
            idx = suggest(state, space, tried, best, options.xi);
        }
        tried[idx] = true;

        TrialRecord rec;
        rec.trial_index = t;
        rec.grid_index = idx;
        rec.point = space.point_at(idx);
        rec.random = random;
        try {
            const double v = objective(rec.point);
            if (std::isfinite(v)) {
                rec.objective = v;
            } else {
                rec.error = "objective is not finite";
            }
        } catch (const NumericError& e) {
            rec.error = e.what();
        } catch (const DataError& e) {
            rec.error = e.what();
        }
        xs.push_back(encode(rec.point, space));
        ys.push_back(rec.objective ? sign * *rec.objective : 0.0);
        if (!rec.objective) failed.push_back(ys.size() - 1);
        if (rec.objective &&
            (!result.best || sign * *rec.objective > sign * *result.history[*result.best].objective)) {
            result.best = result.history.size();
        }
        result.history.push_back(std::move(rec));
    }
    return result;
}

}  // namespace peft_forge
