#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "iern/ops.hpp"
#include "iern/rng.hpp"

namespace iern {

// ---- parameter sets ----------------------------------------------------------

/// Ordered, uniquely named collection of trainable tensors. A frozen entry is
/// skipped by the optimizer and receives no gradient from backward_into.
class ParamSet {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool frozen = false;
    };

    /// Optional owner label; disambiguates identically named parameters when
    /// several sets feed one gradient map.
    void set_label(std::string label) { label_ = std::move(label); }
    const std::string& label() const { return label_; }
    std::string qualified(const std::string& name) const {
        return label_.empty() ? name : label_ + "." + name;
    }

    /// Returns a handle to the stored tensor (handles share storage).
    Tensor add(const std::string& name, Tensor t) {
        if (index_.count(name)) throw ContractError("ParamSet: duplicate parameter " + name);
        t.set_requires_grad(true);
        index_[name] = entries_.size();
        entries_.push_back({name, t, false});
        return t;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("ParamSet: unknown parameter " + name);
        return entries_[it->second].tensor;
    }
    const Tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("ParamSet: unknown parameter " + name);
        return entries_[it->second].tensor;
    }

    void set_frozen(const std::string& name, bool frozen) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("ParamSet: unknown parameter " + name);
        entries_[it->second].frozen = frozen;
    }
    bool frozen(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("ParamSet: unknown parameter " + name);
        return entries_[it->second].frozen;
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t count() const { return entries_.size(); }

    std::int64_t scalar_count() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.tensor.size();
        return n;
    }

    /// Deep copy of all parameter values, keyed by name (for snapshot diffing).
    std::map<std::string, std::vector<double>> snapshot() const {
        std::map<std::string, std::vector<double>> s;
        for (const auto& e : entries_)
            s[e.name] = std::vector<double>(e.tensor.data().begin(), e.tensor.data().end());
        return s;
    }

private:
    std::string label_;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

using GradMap = std::map<std::string, std::vector<double>>;

/// Fill grads of every non-frozen parameter reachable from `loss`; unreachable
/// ones get zeros, frozen ones are left untouched.
inline GradMap backward_into(const Tensor& loss, std::vector<ParamSet*> sets) {
    std::vector<Tensor> receiving;
    for (ParamSet* ps : sets)
        for (auto& e : ps->entries())
            if (!e.frozen) {
                e.tensor.alloc_grad();
                e.tensor.zero_grad();
                receiving.push_back(e.tensor);
            }
    backward(loss, receiving);
    GradMap out;
    for (ParamSet* ps : sets)
        for (auto& e : ps->entries())
            if (!e.frozen)
                out[ps->qualified(e.name)] =
                    std::vector<double>(e.tensor.grad().begin(), e.tensor.grad().end());
    return out;
}

inline GradMap backward_into(const Tensor& loss, ParamSet& params) {
    return backward_into(loss, std::vector<ParamSet*>{&params});
}

// ---- layer specs ---------------------------------------------------------------

enum class LayerKind {
    Dense,
    Conv2d,
    Relu,
    LeakyRelu,
    BatchNorm,
    ResidualBlock,  // relu(x + bn(conv3x3(x)))
    GlobalAvgPool,
    ConcatChannels,  // concatenates the auxiliary input onto the activation
};

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    int in_ch = 0, out_ch = 0, kernel = 1, stride = 1, pad = 0;
    double slope = 0.2;

    static LayerSpec dense(int in_dim, int out_dim) {
        return {LayerKind::Dense, in_dim, out_dim};
    }
    static LayerSpec conv(int in, int out, int k, int s, int p) {
        return {LayerKind::Conv2d, in, out, k, s, p};
    }
    static LayerSpec relu() { return {LayerKind::Relu}; }
    static LayerSpec leaky_relu(double slope) { return {LayerKind::LeakyRelu, 0, 0, 1, 1, 0, slope}; }
    static LayerSpec batchnorm(int ch) { return {LayerKind::BatchNorm, ch, ch}; }
    static LayerSpec residual(int ch) { return {LayerKind::ResidualBlock, ch, ch, 3, 1, 1}; }
    static LayerSpec global_avg_pool() { return {LayerKind::GlobalAvgPool}; }
    static LayerSpec concat_channels() { return {LayerKind::ConcatChannels}; }
};

/// Frozen statistics for one batchnorm site. During training they track batch
/// moments with a running average; a calibration pass can replace them with
/// exact aggregated moments over a reference set.
struct BnBuffers {
    std::vector<double> mean;
    std::vector<double> var;
    // calibration accumulators
    std::vector<double> cal_sum, cal_sumsq;
    double cal_count = 0.0;

    void init(int channels) {
        mean.assign(static_cast<std::size_t>(channels), 0.0);
        var.assign(static_cast<std::size_t>(channels), 1.0);
    }

    void update(const Tensor& x, double momentum = 0.1) {
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        const double m = static_cast<double>(n) * static_cast<double>(plane);
        for (int ic = 0; ic < c; ++ic) {
            double s = 0.0;
            for (int in = 0; in < n; ++in) {
                const double* xp = x.data().data() + (static_cast<std::size_t>(in) * c + ic) * plane;
                for (std::size_t i = 0; i < plane; ++i) s += xp[i];
            }
            const double mu = s / m;
            double v = 0.0;
            for (int in = 0; in < n; ++in) {
                const double* xp = x.data().data() + (static_cast<std::size_t>(in) * c + ic) * plane;
                for (std::size_t i = 0; i < plane; ++i) v += (xp[i] - mu) * (xp[i] - mu);
            }
            const double unbiased = m > 1.0 ? v / (m - 1.0) : v;
            mean[static_cast<std::size_t>(ic)] = (1.0 - momentum) * mean[static_cast<std::size_t>(ic)] + momentum * mu;
            var[static_cast<std::size_t>(ic)] = (1.0 - momentum) * var[static_cast<std::size_t>(ic)] + momentum * unbiased;
        }
    }

    void begin_calibration() {
        cal_sum.assign(mean.size(), 0.0);
        cal_sumsq.assign(mean.size(), 0.0);
        cal_count = 0.0;
    }

    void accumulate(const Tensor& x) {
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        for (int ic = 0; ic < c; ++ic) {
            double s = 0.0, sq = 0.0;
            for (int in = 0; in < n; ++in) {
                const double* xp = x.data().data() + (static_cast<std::size_t>(in) * c + ic) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    s += xp[i];
                    sq += xp[i] * xp[i];
                }
            }
            cal_sum[static_cast<std::size_t>(ic)] += s;
            cal_sumsq[static_cast<std::size_t>(ic)] += sq;
        }
        cal_count += static_cast<double>(n) * static_cast<double>(plane);
    }

    /// Replace the frozen statistics with the aggregated moments (biased
    /// variance, matching the train-mode normalizer). No-op if nothing seen.
    void finish_calibration() {
        if (cal_count > 0.0) {
            for (std::size_t ic = 0; ic < mean.size(); ++ic) {
                mean[ic] = cal_sum[ic] / cal_count;
                var[ic] = std::max(0.0, cal_sumsq[ic] / cal_count - mean[ic] * mean[ic]);
            }
        }
        cal_sum.clear();
        cal_sumsq.clear();
        cal_count = 0.0;
    }
};

struct ForwardOpts {
    bool training = true;          // batchnorm: batch statistics vs frozen statistics
    bool update_bn_stats = false;  // refresh running stats (first forward of a step)
    bool calibrate_bn = false;     // accumulate exact moments during this forward
};

namespace detail {

inline void init_param(Tensor& t, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
}

}  // namespace detail

/// One layer application. `prefix` scopes the layer's parameter names inside
/// `params`; `bn` is the running-statistics slot for BatchNorm/Residual kinds.
inline Tensor layer_forward(const LayerSpec& spec, const Tensor& x, ParamSet& params,
                            const std::string& prefix, BnBuffers* bn, const ForwardOpts& opt,
                            const Tensor* aux = nullptr) {
    switch (spec.kind) {
        case LayerKind::Dense:
            return dense(x, params.at(prefix + "w"), params.at(prefix + "b"));
        case LayerKind::Conv2d:
            return conv2d(x, params.at(prefix + "w"), params.at(prefix + "b"), spec.stride,
                          spec.pad);
        case LayerKind::Relu:
            return relu(x);
        case LayerKind::LeakyRelu:
            return leaky_relu(x, spec.slope);
        case LayerKind::BatchNorm: {
            if (opt.training) {
                if (opt.update_bn_stats && bn) bn->update(x);
                if (opt.calibrate_bn && bn) bn->accumulate(x);
                return batchnorm2d(x, params.at(prefix + "gamma"), params.at(prefix + "beta"));
            }
            if (!bn) throw StateError("batchnorm: no frozen statistics available");
            if (opt.calibrate_bn) bn->accumulate(x);
            return batchnorm2d_frozen(x, params.at(prefix + "gamma"), params.at(prefix + "beta"),
                                      bn->mean, bn->var);
        }
        case LayerKind::ResidualBlock: {
            // bias-free conv: the following batchnorm absorbs any channel offset
            Tensor y = conv2d(x, params.at(prefix + "w"), 1, 1);
            if (opt.training) {
                if (opt.update_bn_stats && bn) bn->update(y);
                if (opt.calibrate_bn && bn) bn->accumulate(y);
                y = batchnorm2d(y, params.at(prefix + "gamma"), params.at(prefix + "beta"));
            } else {
                if (!bn) throw StateError("residual: no frozen statistics available");
                if (opt.calibrate_bn) bn->accumulate(y);
                y = batchnorm2d_frozen(y, params.at(prefix + "gamma"), params.at(prefix + "beta"),
                                       bn->mean, bn->var);
            }
            return relu(add(x, y));
        }
        case LayerKind::GlobalAvgPool:
            return global_avg_pool(x);
        case LayerKind::ConcatChannels:
            if (!aux) throw ContractError("concat_channels layer: auxiliary input missing");
            return concat_channels(x, *aux);
    }
    throw ConfigError("layer_forward: unknown layer kind");
}

/// Convenience form used by tests: unscoped names, train-mode batchnorm.
inline Tensor layer_forward(const LayerSpec& spec, const Tensor& x, ParamSet& params) {
    ForwardOpts opt;
    return layer_forward(spec, x, params, "", nullptr, opt);
}

/// A named sequential stack of layers with its own ParamSet and bn buffers.
class LayerStack {
public:
    LayerStack() = default;
    LayerStack(std::string name, std::vector<LayerSpec> specs)
        : name_(std::move(name)), specs_(std::move(specs)) {}

    /// Creates parameters: uniform fan-in weights, zero biases, unit bn scale.
    void init(Rng& rng) {
        params_.set_label(name_);
        bn_.assign(specs_.size(), BnBuffers{});
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            const LayerSpec& s = specs_[i];
            const std::string p = std::to_string(i) + ".";
            switch (s.kind) {
                case LayerKind::Dense: {
                    Tensor w = params_.add(p + "w", Tensor({s.in_ch, s.out_ch}));
                    detail::init_param(w, s.in_ch, rng);
                    params_.add(p + "b", Tensor({s.out_ch}));
                    break;
                }
                case LayerKind::Conv2d: {
                    Tensor w = params_.add(p + "w", Tensor({s.out_ch, s.in_ch, s.kernel, s.kernel}));
                    detail::init_param(w, s.in_ch * s.kernel * s.kernel, rng);
                    params_.add(p + "b", Tensor({s.out_ch}));
                    break;
                }
                case LayerKind::BatchNorm:
                    params_.add(p + "gamma", Tensor::full({s.in_ch}, 1.0));
                    params_.add(p + "beta", Tensor({s.in_ch}));
                    bn_[i].init(s.in_ch);
                    break;
                case LayerKind::ResidualBlock: {
                    Tensor w = params_.add(p + "w", Tensor({s.out_ch, s.in_ch, 3, 3}));
                    detail::init_param(w, s.in_ch * 9, rng);
                    params_.add(p + "gamma", Tensor::full({s.out_ch}, 1.0));
                    params_.add(p + "beta", Tensor({s.out_ch}));
                    bn_[i].init(s.out_ch);
                    break;
                }
                default:
                    break;  // parameter-free layer
            }
        }
    }

    Tensor forward(const Tensor& x, const ForwardOpts& opt, const Tensor* aux = nullptr) {
        Tensor y = x;
        for (std::size_t i = 0; i < specs_.size(); ++i)
            y = layer_forward(specs_[i], y, params_, std::to_string(i) + ".", &bn_[i], opt, aux);
        return y;
    }

    const std::string& name() const { return name_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    std::vector<BnBuffers>& bn_buffers() { return bn_; }
    const std::vector<BnBuffers>& bn_buffers() const { return bn_; }
    const std::vector<LayerSpec>& specs() const { return specs_; }

    /// Parameter values plus bn statistics, for convergence checkpointing.
    struct State {
        std::map<std::string, std::vector<double>> params;
        std::vector<BnBuffers> bn;
    };

    State state() const {
        return State{params_.snapshot(), bn_};
    }

    void restore(const State& s) {
        for (auto& e : params_.entries()) {
            const auto it = s.params.find(e.name);
            if (it == s.params.end() || it->second.size() != e.tensor.data().size())
                throw ContractError("LayerStack::restore: state mismatch for " + e.name);
            std::copy(it->second.begin(), it->second.end(), e.tensor.data().begin());
        }
        bn_ = s.bn;
    }

private:
    std::string name_;
    std::vector<LayerSpec> specs_;
    ParamSet params_;
    std::vector<BnBuffers> bn_;
};

}  // namespace iern
