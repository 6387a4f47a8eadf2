#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gps/autodiff.hpp"
#include "gps/rng.hpp"
#include "gps/tensor.hpp"

namespace gps::testing {

inline Tensor random_tensor(const Shape& shape, SplitMix64& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t(shape);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

using LossFn = std::function<Var(Graph&, const std::vector<Var>&)>;

inline double eval_loss(std::vector<Tensor>& inputs, const LossFn& f) {
    Graph g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.leaf(static_cast<const Tensor&>(t)));
    return f(g, vars).value().item();
}

struct GradCheck {
    std::vector<double> autodiff;
    std::vector<double> numeric;
    double rel_error = 0.0;
};

// Norm-wise ||ad - fd|| / max(||fd||, 1e-12) with central differences over every input element.
inline GradCheck check_gradients(std::vector<Tensor>& inputs, const LossFn& f, double h = 1e-5) {
    GradCheck r;
    {
        Graph g;
        std::vector<Var> vars;
        for (auto& t : inputs) {
            t.set_requires_grad(true);
            vars.push_back(g.leaf(t));
        }
        g.backward(f(g, vars));
        for (auto& t : inputs) {
            r.autodiff.insert(r.autodiff.end(), t.grad().begin(), t.grad().end());
            t.set_requires_grad(false);
            t.clear_grad();
        }
    }
    for (auto& t : inputs) {
        for (std::size_t k = 0; k < t.numel(); ++k) {
            const double x = t[k];
            t[k] = x + h;
            const double up = eval_loss(inputs, f);
            t[k] = x - h;
            const double down = eval_loss(inputs, f);
            t[k] = x;
            r.numeric.push_back((up - down) / (2.0 * h));
        }
    }
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < r.numeric.size(); ++i) {
        diff += (r.autodiff[i] - r.numeric[i]) * (r.autodiff[i] - r.numeric[i]);
        norm += r.numeric[i] * r.numeric[i];
    }
    r.rel_error = std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12);
    return r;
}

// Contracts an arbitrary output with fixed random weights so every output element matters.
inline Var weighted_sum(Graph& g, Var out, std::uint64_t seed) {
    SplitMix64 rng(seed);
    Tensor w = random_tensor(out.shape(), rng, -1.0, 1.0);
    return sum(mul(out, g.constant(std::move(w))));
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("gps-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace gps::testing
