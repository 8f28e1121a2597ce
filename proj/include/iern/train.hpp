#pragma once

#include <string>
#include <vector>

#include "iern/eval.hpp"
#include "iern/model.hpp"

// Epoch/batch plumbing shared by every training method: seeded shuffling,
// warm-up learning rate, per-epoch loss records and train-set accuracy.

namespace iern {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double lr = 2e-4;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::int64_t warmup_steps = -1;  // -1: 5% of total steps
    LossWeights weights;
    std::uint64_t seed = 1;
    int eval_every = 1;  // epochs between train-accuracy probes; 0 disables
    // keep the probe point with the highest train accuracy ("trained till
    // converged"); needs eval_every > 0 to have any effect
    bool keep_best_train = true;

    void validate() const {
        if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("TrainConfig: lr must be positive");
        weights.validate();
    }

    AdamConfig adam() const { return AdamConfig{lr, beta1, beta2, adam_eps}; }
};

struct EpochLog {
    int epoch = 0;
    LossBreakdown losses;   // epoch mean
    double train_acc = -1.0;  // -1 when not probed this epoch
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    std::int64_t steps = 0;
};

namespace detail {

/// Shuffled, equally sized batches; a partial tail batch is dropped (batch
/// statistics need more than one sample).
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(n - i))) + i;
        std::swap(order[i], order[j]);
    }
    std::vector<std::vector<std::size_t>> batches;
    const auto bs = static_cast<std::size_t>(batch_size);
    for (std::size_t start = 0; start + bs <= n; start += bs)
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(start + bs));
    if (batches.empty() && n >= 2) batches.push_back(order);  // tiny dataset: one batch
    return batches;
}

}  // namespace detail

/// Re-estimate every frozen bn statistic as the exact activation moments of
/// the trained model over `samples`, computed along the evaluation paths
/// (generators from data, g_r from its classifier-branch inputs). Iterating
/// the eval-mode sweep reaches a fixed point where downstream sites see the
/// distribution their upstream calibrated statistics actually produce.
inline void calibrate_bn_stats(IernModel& m, const std::vector<Sample>& samples,
                               int n_iterations = 2, int batch_size = 64) {
    if (samples.empty()) return;
    ForwardOpts opt{.training = false, .update_bn_stats = false, .calibrate_bn = true};
    for (int it = 0; it < n_iterations; ++it) {
        for (LayerStack* c : m.components())
            for (BnBuffers& bn : c->bn_buffers())
                if (!bn.mean.empty()) bn.begin_calibration();
        for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
            std::vector<std::size_t> idxs;
            for (std::size_t i = start;
                 i < std::min(samples.size(), start + static_cast<std::size_t>(batch_size)); ++i)
                idxs.push_back(i);
            const Batch b = make_batch(samples, idxs);
            Tensor base = m.f_b.forward(b.x, opt);
            Tensor e = m.g_e.forward(base, opt);
            m.g_c.forward(base, opt);
            for (int i = 0; i < m.shape.n_confounders; ++i) {
                Tensor center = broadcast_row(m.bank(), i, b.x.dim(0));
                m.g_r.forward(e, opt, &center);
            }
        }
        for (LayerStack* c : m.components())
            for (BnBuffers& bn : c->bn_buffers())
                if (!bn.mean.empty()) bn.finish_calibration();
    }
}

inline EvalReport evaluate_iern(IernModel& m, const ConfoundedDataset& ds,
                                const std::string& method = "iern") {
    if (ds.samples.empty()) throw ContractError("evaluate: empty dataset");
    std::vector<int> labels;
    labels.reserve(ds.samples.size());
    for (const auto& s : ds.samples) labels.push_back(s.y_e);
    EvalReport r = confusion(predict_labels(m, ds.samples), labels, m.shape.n_emotions);
    r.split = ds.split_tag;
    r.method = method;
    return r;
}

/// Stratum accuracy of the context discriminator on g_c features (eval mode).
inline EvalReport evaluate_context_discriminator(IernModel& m, const ConfoundedDataset& ds) {
    if (ds.samples.empty()) throw ContractError("evaluate: empty dataset");
    ForwardOpts opt{.training = false, .update_bn_stats = false};
    std::vector<int> preds, labels;
    for (std::size_t start = 0; start < ds.samples.size(); start += 64) {
        std::vector<std::size_t> idxs;
        for (std::size_t i = start; i < std::min(ds.samples.size(), start + 64); ++i)
            idxs.push_back(i);
        const Batch b = make_batch(ds.samples, idxs);
        const Tensor logits = m.d_c.forward(m.g_c.forward(m.f_b.forward(b.x, opt), opt), opt);
        for (int p : argmax_rows(logits)) preds.push_back(p);
        for (int y : b.y_c) labels.push_back(y);
    }
    EvalReport r = confusion(preds, labels, m.shape.n_confounders);
    r.split = ds.split_tag;
    r.method = "d_c";
    return r;
}

/// Per-sample context features g_c(f_b(x)), evaluation mode. Feeds the
/// confounder dictionary and the feature export.
inline std::vector<Tensor> extract_context_features(IernModel& m, const std::vector<Sample>& samples) {
    ForwardOpts opt{.training = false, .update_bn_stats = false};
    std::vector<Tensor> out;
    out.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += 64) {
        std::vector<std::size_t> idxs;
        for (std::size_t i = start; i < std::min(samples.size(), start + 64); ++i) idxs.push_back(i);
        const Batch b = make_batch(samples, idxs);
        const Tensor feat = m.g_c.forward(m.f_b.forward(b.x, opt), opt);
        const int c = feat.dim(1), h = feat.dim(2), w = feat.dim(3);
        const std::size_t stride = static_cast<std::size_t>(c) * h * w;
        for (std::size_t n = 0; n < idxs.size(); ++n) {
            std::vector<double> row(feat.data().begin() + static_cast<std::ptrdiff_t>(n * stride),
                                    feat.data().begin() + static_cast<std::ptrdiff_t>((n + 1) * stride));
            out.emplace_back(std::vector<int>{c, h, w}, std::move(row));
        }
    }
    return out;
}

/// Emotion features g_e(f_b(x)) pooled to one vector per sample, used by the
/// single-pass approximation head.
inline std::vector<std::vector<double>> extract_pooled_emotion_features(
    IernModel& m, const std::vector<Sample>& samples) {
    ForwardOpts opt{.training = false, .update_bn_stats = false};
    std::vector<std::vector<double>> out;
    out.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += 64) {
        std::vector<std::size_t> idxs;
        for (std::size_t i = start; i < std::min(samples.size(), start + 64); ++i) idxs.push_back(i);
        const Batch b = make_batch(samples, idxs);
        const Tensor pooled = global_avg_pool(m.g_e.forward(m.f_b.forward(b.x, opt), opt));
        const int c = pooled.dim(1);
        for (std::size_t n = 0; n < idxs.size(); ++n)
            out.emplace_back(pooled.data().begin() + static_cast<std::ptrdiff_t>(n * static_cast<std::size_t>(c)),
                             pooled.data().begin() + static_cast<std::ptrdiff_t>((n + 1) * static_cast<std::size_t>(c)));
    }
    return out;
}

/// Full interventional training loop over a dataset.
inline TrainLog train_iern(IernModel& m, const ConfoundedDataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.samples.size() < 2) throw ContractError("train_iern: need at least 2 samples");
    IernOptimizers opt(cfg.adam());
    const auto steps_per_epoch = static_cast<std::int64_t>(
        std::max<std::size_t>(1, data.samples.size() / static_cast<std::size_t>(cfg.batch_size)));
    const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
    const std::int64_t warmup = cfg.warmup_steps < 0 ? std::max<std::int64_t>(1, total_steps / 20)
                                                     : cfg.warmup_steps;
    TrainLog log;
    std::int64_t gstep = 0;
    double best_acc = -1.0;
    IernModelState best_state;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng brng(derive_seed(cfg.seed, "batch", static_cast<std::uint64_t>(epoch)));
        LossBreakdown mean;
        int nb = 0;
        for (const auto& idxs : detail::epoch_batches(data.samples.size(), cfg.batch_size, brng)) {
            opt.set_lr(warmup_lr(cfg.lr, gstep, warmup));
            const Batch b = make_batch(data.samples, idxs);
            const LossBreakdown l = train_step(m, b, cfg.weights, opt);
            mean.e_disc += l.e_disc;
            mean.e_gen += l.e_gen;
            mean.c_disc += l.c_disc;
            mean.c_gen += l.c_gen;
            mean.recon += l.recon;
            mean.cb += l.cb;
            mean.cls += l.cls;
            ++nb;
            ++gstep;
        }
        for (double* v : {&mean.e_disc, &mean.e_gen, &mean.c_disc, &mean.c_gen, &mean.recon,
                          &mean.cb, &mean.cls})
            *v /= std::max(1, nb);
        EpochLog el{epoch, mean, -1.0};
        if (cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
            calibrate_bn_stats(m, data.samples, 1);
            el.train_acc = evaluate_iern(m, data).mean_acc;
            if (cfg.keep_best_train && el.train_acc >= best_acc) {
                best_acc = el.train_acc;
                best_state = capture_state(m);
            }
        }
        log.epochs.push_back(el);
    }
    if (cfg.keep_best_train && best_acc >= 0.0) restore_state(m, best_state);
    calibrate_bn_stats(m, data.samples);
    log.steps = gstep;
    return log;
}

}  // namespace iern
