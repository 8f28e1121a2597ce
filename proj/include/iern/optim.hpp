#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "iern/layers.hpp"

namespace iern {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected adaptive-moment state for one ParamSet.
class AdamState {
public:
    explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {
        if (cfg_.lr <= 0.0) throw ContractError("AdamState: lr must be positive");
        if (cfg_.beta1 <= 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 <= 0.0 || cfg_.beta2 >= 1.0)
            throw ContractError("AdamState: betas must lie in (0,1)");
    }

    AdamConfig& config() { return cfg_; }
    const AdamConfig& config() const { return cfg_; }
    std::int64_t step_count() const { return t_; }

    struct Moments {
        std::vector<double> m, v;
    };

    Moments& moments(const std::string& name, std::size_t size) {
        auto& mo = moments_[name];
        if (mo.m.empty()) {
            mo.m.assign(size, 0.0);
            mo.v.assign(size, 0.0);
        }
        return mo;
    }

    void bump() { ++t_; }

private:
    AdamConfig cfg_;
    std::unordered_map<std::string, Moments> moments_;
    std::int64_t t_ = 0;
};

/// One optimizer step over the non-frozen parameters of `params`. Frozen
/// parameters are untouched bit-for-bit; each non-frozen one must carry a grad.
inline void adam_step(ParamSet& params, AdamState& st) {
    st.bump();
    const AdamConfig& c = st.config();
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step_count()));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step_count()));
    for (auto& e : params.entries()) {
        if (e.frozen) continue;
        if (!e.tensor.has_grad())
            throw ContractError("adam_step: missing gradient for parameter " + e.name);
        auto& mo = st.moments(e.name, e.tensor.data().size());
        auto data = e.tensor.data();
        auto grad = e.tensor.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i];
            mo.m[i] = c.beta1 * mo.m[i] + (1.0 - c.beta1) * g;
            mo.v[i] = c.beta2 * mo.v[i] + (1.0 - c.beta2) * g * g;
            const double mhat = mo.m[i] / bc1;
            const double vhat = mo.v[i] / bc2;
            data[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

/// Linear ramp from ~0 to `base` over `warmup_steps`, then constant.
inline double warmup_lr(double base, std::int64_t step, std::int64_t warmup_steps) {
    if (warmup_steps <= 0 || step >= warmup_steps) return base;
    return base * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
}

// ---- finite-difference gradient checking -------------------------------------

namespace detail {

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-12});
    return std::fabs(analytic - numeric) / denom;
}

}  // namespace detail

/// Compare given analytic grads against central differences of loss_fn.
/// Returns the max over sampled coordinates of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
inline double grad_check_against(const std::function<Tensor()>& loss_fn,
                                 std::vector<ParamSet*> sets, const GradMap& analytic,
                                 double eps = 1e-4, int max_coords_per_param = 24,
                                 std::uint64_t seed = 0) {
    double worst = 0.0;
    Rng rng(derive_seed(seed, "grad_check"));
    for (ParamSet* ps : sets)
        for (auto& e : ps->entries()) {
            if (e.frozen) continue;
            auto it = analytic.find(ps->qualified(e.name));
            if (it == analytic.end())
                throw ContractError("grad_check: no analytic grad for " + ps->qualified(e.name));
            auto data = e.tensor.data();
            const std::int64_t n = static_cast<std::int64_t>(data.size());
            std::vector<std::int64_t> coords;
            if (n <= max_coords_per_param) {
                for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
            } else {
                for (int i = 0; i < max_coords_per_param; ++i) coords.push_back(rng.uniform_int(n));
            }
            for (std::int64_t i : coords) {
                const double v0 = data[static_cast<std::size_t>(i)];
                data[static_cast<std::size_t>(i)] = v0 + eps;
                const double lp = loss_fn().item();
                data[static_cast<std::size_t>(i)] = v0 - eps;
                const double lm = loss_fn().item();
                data[static_cast<std::size_t>(i)] = v0;
                const double numeric = (lp - lm) / (2.0 * eps);
                worst = std::max(worst, detail::rel_err(it->second[static_cast<std::size_t>(i)], numeric));
            }
        }
    return worst;
}

/// Full check: runs backward for the analytic side, then central differences.
inline double grad_check(const std::function<Tensor()>& loss_fn, std::vector<ParamSet*> sets,
                         double eps = 1e-4, int max_coords_per_param = 24,
                         std::uint64_t seed = 0) {
    GradMap analytic = backward_into(loss_fn(), sets);
    return grad_check_against(loss_fn, sets, analytic, eps, max_coords_per_param, seed);
}

/// Move every parameter to a generic point before finite differencing. Freshly
/// initialized nets put many pre-activations exactly on the relu kink (zero
/// biases, zeroed features), where one-sided numeric slopes disagree with the
/// subgradient by construction.
inline void nudge_params(std::vector<ParamSet*> sets, double scale, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "nudge"));
    for (ParamSet* ps : sets)
        for (auto& e : ps->entries())
            for (auto& v : e.tensor.data()) v += rng.uniform(-scale, scale);
}

}  // namespace iern
