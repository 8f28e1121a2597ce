#pragma once

#include <map>
#include <string>
#include <vector>

#include "iern/train.hpp"

// The comparison methods: a plain backbone+classifier, the disentanglement
// ablation (emotion feature straight into the classifier, no confounder bank),
// cell re-balancing by re-sampling, and the single-pass approximation that
// moves the stratum expectation inside the softmax against a precomputed
// confounder dictionary.

namespace iern {

// ---- vanilla backbone + classifier ------------------------------------------------

struct VanillaModel {
    ModelShape shape;
    LayerStack f_b, f_c;
};

inline VanillaModel make_vanilla_model(const ModelShape& shape, std::uint64_t seed) {
    const IernModel full = make_iern_model(shape, seed);  // same specs, same init streams
    VanillaModel m;
    m.shape = shape;
    m.f_b = full.f_b;
    m.f_c = full.f_c;
    return m;
}

inline Tensor vanilla_logits(VanillaModel& m, const Tensor& x_batch, const ForwardOpts& opt) {
    return m.f_c.forward(m.f_b.forward(x_batch, opt), opt);
}

inline EvalReport evaluate_vanilla(VanillaModel& m, const ConfoundedDataset& ds) {
    if (ds.samples.empty()) throw ContractError("evaluate: empty dataset");
    ForwardOpts opt{.training = false, .update_bn_stats = false};
    std::vector<int> preds, labels;
    for (std::size_t start = 0; start < ds.samples.size(); start += 64) {
        std::vector<std::size_t> idxs;
        for (std::size_t i = start; i < std::min(ds.samples.size(), start + 64); ++i)
            idxs.push_back(i);
        const Batch b = make_batch(ds.samples, idxs);
        for (int p : argmax_rows(vanilla_logits(m, b.x, opt))) preds.push_back(p);
        for (int y : b.y_e) labels.push_back(y);
    }
    EvalReport r = confusion(preds, labels, m.shape.n_emotions);
    r.split = ds.split_tag;
    r.method = "baseline";
    return r;
}

/// Plain cross-entropy training of f_b + f_c.
inline TrainLog train_vanilla(VanillaModel& m, const ConfoundedDataset& data,
                              const TrainConfig& cfg) {
    cfg.validate();
    if (data.samples.size() < 2) throw ContractError("train_vanilla: need at least 2 samples");
    AdamState opt_fb(cfg.adam()), opt_fc(cfg.adam());
    const auto steps_per_epoch = static_cast<std::int64_t>(
        std::max<std::size_t>(1, data.samples.size() / static_cast<std::size_t>(cfg.batch_size)));
    const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
    const std::int64_t warmup = cfg.warmup_steps < 0 ? std::max<std::int64_t>(1, total_steps / 20)
                                                     : cfg.warmup_steps;
    ForwardOpts fwd{.training = true, .update_bn_stats = true};
    TrainLog log;
    std::int64_t gstep = 0;
    double best_acc = -1.0;
    LayerStack::State best_fb, best_fc;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng brng(derive_seed(cfg.seed, "batch", static_cast<std::uint64_t>(epoch)));
        double mean_loss = 0.0;
        int nb = 0;
        for (const auto& idxs : detail::epoch_batches(data.samples.size(), cfg.batch_size, brng)) {
            const double lr = warmup_lr(cfg.lr, gstep, warmup);
            opt_fb.config().lr = lr;
            opt_fc.config().lr = lr;
            const Batch b = make_batch(data.samples, idxs);
            Tensor loss = cross_entropy_mean(vanilla_logits(m, b.x, fwd), b.y_e);
            mean_loss += loss.item();
            backward_into(loss, {&m.f_b.params(), &m.f_c.params()});
            adam_step(m.f_b.params(), opt_fb);
            adam_step(m.f_c.params(), opt_fc);
            ++nb;
            ++gstep;
        }
        EpochLog el;
        el.epoch = epoch;
        el.losses.cls = mean_loss / std::max(1, nb);
        if (cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
            el.train_acc = evaluate_vanilla(m, data).mean_acc;
            if (cfg.keep_best_train && el.train_acc >= best_acc) {
                best_acc = el.train_acc;
                best_fb = m.f_b.state();
                best_fc = m.f_c.state();
            }
        }
        log.epochs.push_back(el);
    }
    if (cfg.keep_best_train && best_acc >= 0.0) {
        m.f_b.restore(best_fb);
        m.f_c.restore(best_fc);
    }
    log.steps = gstep;
    return log;
}

// ---- disentanglement-only ablation --------------------------------------------------

inline Tensor disentangle_logits(IernModel& m, const Tensor& x_batch, const ForwardOpts& opt) {
    return m.f_c.forward(m.g_e.forward(m.f_b.forward(x_batch, opt), opt), opt);
}

inline EvalReport evaluate_disentangle(IernModel& m, const ConfoundedDataset& ds) {
    if (ds.samples.empty()) throw ContractError("evaluate: empty dataset");
    ForwardOpts opt{.training = false, .update_bn_stats = false};
    std::vector<int> preds, labels;
    for (std::size_t start = 0; start < ds.samples.size(); start += 64) {
        std::vector<std::size_t> idxs;
        for (std::size_t i = start; i < std::min(ds.samples.size(), start + 64); ++i)
            idxs.push_back(i);
        const Batch b = make_batch(ds.samples, idxs);
        for (int p : argmax_rows(disentangle_logits(m, b.x, opt))) preds.push_back(p);
        for (int y : b.y_e) labels.push_back(y);
    }
    EvalReport r = confusion(preds, labels, m.shape.n_emotions);
    r.split = ds.split_tag;
    r.method = "disentangle";
    return r;
}

/// Feature disentanglement without the confounder bank: the emotion feature
/// feeds the classifier directly. Staged like the full method, minus the
/// center term and the branch averaging.
inline TrainLog train_disentangle_only(IernModel& m, const ConfoundedDataset& data,
                                       const TrainConfig& cfg) {
    cfg.validate();
    if (data.samples.size() < 2)
        throw ContractError("train_disentangle_only: need at least 2 samples");
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

            ForwardOpts stat{.training = true, .update_bn_stats = true};
            {  // reporting forward
                Tensor base = m.f_b.forward(b.x, stat);
                Tensor e = m.g_e.forward(base, stat);
                Tensor c = m.g_c.forward(base, stat);
                mean.e_disc += cross_entropy_mean(m.d_e.forward(e, stat), b.y_e).item();
                mean.e_gen +=
                    mse_scalar(softmax(m.d_c.forward(e, stat)), 1.0 / m.shape.n_confounders).item();
                mean.c_disc += cross_entropy_mean(m.d_c.forward(c, stat), b.y_c).item();
                mean.c_gen +=
                    mse_scalar(softmax(m.d_e.forward(c, stat)), 1.0 / m.shape.n_emotions).item();
                mean.recon += mse(m.g_r.forward(e, stat, &c), base).item();
                mean.cls += cross_entropy_mean(m.f_c.forward(e, stat), b.y_e).item();
            }
            ForwardOpts fwd{.training = true, .update_bn_stats = false};
            {  // discriminators
                Tensor base = m.f_b.forward(b.x, fwd);
                Tensor e = m.g_e.forward(base, fwd);
                Tensor c = m.g_c.forward(base, fwd);
                Tensor l = add(cross_entropy_mean(m.d_e.forward(e, fwd), b.y_e),
                               cross_entropy_mean(m.d_c.forward(c, fwd), b.y_c));
                backward_into(scale(l, cfg.weights.lambda1), {&m.d_e.params(), &m.d_c.params()});
                adam_step(m.d_e.params(), opt.d_e);
                adam_step(m.d_c.params(), opt.d_c);
            }
            {  // generators + reconstruction
                Tensor base = m.f_b.forward(b.x, fwd);
                Tensor e = m.g_e.forward(base, fwd);
                Tensor c = m.g_c.forward(base, fwd);
                Tensor l_gen =
                    add(mse_scalar(softmax(m.d_c.forward(e, fwd)), 1.0 / m.shape.n_confounders),
                        mse_scalar(softmax(m.d_e.forward(c, fwd)), 1.0 / m.shape.n_emotions));
                Tensor l = scale(add(l_gen, mse(m.g_r.forward(e, fwd, &c), base)), cfg.weights.lambda1);
                backward_into(l, {&m.g_e.params(), &m.g_c.params(), &m.g_r.params()});
                adam_step(m.g_e.params(), opt.g_e);
                adam_step(m.g_c.params(), opt.g_c);
                adam_step(m.g_r.params(), opt.g_r);
            }
            {  // classifier on the emotion feature, no intervention
                Tensor l = cross_entropy_mean(disentangle_logits(m, b.x, fwd), b.y_e);
                backward_into(scale(l, cfg.weights.lambda3),
                              {&m.f_c.params(), &m.g_e.params(), &m.f_b.params()});
                adam_step(m.f_c.params(), opt.f_c);
                adam_step(m.g_e.params(), opt.g_e);
                adam_step(m.f_b.params(), opt.f_b);
            }
            ++nb;
            ++gstep;
        }
        for (double* v : {&mean.e_disc, &mean.e_gen, &mean.c_disc, &mean.c_gen, &mean.recon, &mean.cls})
            *v /= std::max(1, nb);
        EpochLog el{epoch, mean, -1.0};
        if (cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
            calibrate_bn_stats(m, data.samples, 1);
            el.train_acc = evaluate_disentangle(m, data).mean_acc;
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

// ---- re-sampling -------------------------------------------------------------------

/// Balance occupied (emotion, confounder) cells by sampling with replacement
/// up to the largest occupied cell. Empty cells stay empty; no new data.
inline ConfoundedDataset resample_dataset(const ConfoundedDataset& ds, Rng& rng) {
    if (ds.samples.empty()) throw ContractError("resample_dataset: empty dataset");
    std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        cells[{ds.samples[i].y_e, ds.samples[i].y_c}].push_back(i);
    std::size_t max_count = 0;
    for (const auto& [cell, idxs] : cells) max_count = std::max(max_count, idxs.size());
    ConfoundedDataset out = ds;
    for (const auto& [cell, idxs] : cells)
        for (std::size_t j = idxs.size(); j < max_count; ++j)
            out.samples.push_back(ds.samples[idxs[static_cast<std::size_t>(
                rng.uniform_int(static_cast<std::int64_t>(idxs.size())))]]);
    out.refresh_cooccurrence();
    return out;
}

// ---- single-pass approximation (NWGM) ------------------------------------------------

/// Per-stratum mean of extracted context features; frozen after construction.
struct NwgmDictionary {
    Tensor entries;  // [N_c, C, H, W]
};

inline NwgmDictionary build_nwgm_dictionary(const std::vector<Tensor>& context_features,
                                            const std::vector<int>& y_c, int n_confounders) {
    if (context_features.size() != y_c.size() || context_features.empty())
        throw ContractError("build_nwgm_dictionary: feature/label mismatch");
    const auto& f0 = context_features[0];
    std::vector<int> shape = f0.shape();
    shape.insert(shape.begin(), n_confounders);
    Tensor entries(shape);
    std::vector<std::int64_t> counts(static_cast<std::size_t>(n_confounders), 0);
    const std::size_t row = static_cast<std::size_t>(f0.size());
    for (std::size_t i = 0; i < context_features.size(); ++i) {
        const int c = y_c[i];
        if (c < 0 || c >= n_confounders)
            throw ContractError("build_nwgm_dictionary: confounder label out of range");
        ++counts[static_cast<std::size_t>(c)];
        const auto src = context_features[i].data();
        auto dst = entries.data().subspan(static_cast<std::size_t>(c) * row, row);
        for (std::size_t k = 0; k < row; ++k) dst[k] += src[k];
    }
    for (int c = 0; c < n_confounders; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0)
            throw ConfigError("build_nwgm_dictionary: stratum " + std::to_string(c) + " is empty");
        auto dst = entries.data().subspan(static_cast<std::size_t>(c) * row, row);
        for (auto& v : dst) v /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    }
    return NwgmDictionary{entries};
}

/// Spatially pooled dictionary keys, one row per stratum.
inline Tensor nwgm_pooled_keys(const NwgmDictionary& dict) {
    const Tensor& e = dict.entries;
    const int n = e.dim(0), c = e.dim(1);
    const std::size_t plane = static_cast<std::size_t>(e.dim(2)) * e.dim(3);
    Tensor keys({n, c});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            double s = 0.0;
            const auto src = e.data().subspan((static_cast<std::size_t>(i) * c + j) * plane, plane);
            for (double v : src) s += v;
            keys.data()[static_cast<std::size_t>(i) * c + j] = s / static_cast<double>(plane);
        }
    return keys;
}

struct NwgmHead {
    ParamSet params;  // W1, W2: [feature_dim, n_emotions]
    int feature_dim = 0;
    int n_emotions = 0;
};

inline NwgmHead make_nwgm_head(int feature_dim, int n_emotions, std::uint64_t seed) {
    NwgmHead h;
    h.feature_dim = feature_dim;
    h.n_emotions = n_emotions;
    Rng rng(derive_seed(seed, "nwgm-head"));
    Tensor w1 = h.params.add("W1", Tensor({feature_dim, n_emotions}));
    detail::init_param(w1, feature_dim, rng);
    Tensor w2 = h.params.add("W2", Tensor({feature_dim, n_emotions}));
    detail::init_param(w2, feature_dim, rng);
    return h;
}

/// Scaled-dot-product attention weights of each feature row over the keys.
inline Tensor nwgm_attention(const Tensor& x_feat, const Tensor& keys) {
    if (x_feat.rank() != 2 || keys.rank() != 2 || x_feat.dim(1) != keys.dim(1))
        throw ContractError("nwgm_attention: feature/key dimension mismatch");
    const int d = keys.dim(1), k = keys.dim(0);
    Tensor keys_t({d, k});
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < d; ++j)
            keys_t.data()[static_cast<std::size_t>(j) * k + i] = keys.data()[static_cast<std::size_t>(i) * d + j];
    return softmax(scale(matmul(x_feat, keys_t), 1.0 / std::sqrt(static_cast<double>(d))));
}

/// Single forward pass of the approximation: logits = W1 x + W2 E_d[g(d)],
/// with the expectation taken under the attention weights. One pass total,
/// in contrast with the N_c branch forwards of the interventional classifier.
inline Tensor nwgm_forward(NwgmHead& head, const Tensor& x_feat, const Tensor& keys) {
    Tensor alpha = nwgm_attention(x_feat, keys);
    Tensor expectation = matmul(alpha, keys);
    return add(matmul(x_feat, head.params.at("W1")), matmul(expectation, head.params.at("W2")));
}

struct NwgmModel {
    IernModel trunk;      // shared backbone/generator trunk (trained by disentanglement)
    NwgmDictionary dict;  // frozen after construction
    NwgmHead head;
    Tensor keys;  // pooled dictionary, cached
};

/// Dictionary from the converged trunk, then head-only cross-entropy training
/// on frozen pooled features.
inline TrainLog train_nwgm_head(NwgmModel& m, const ConfoundedDataset& data, const TrainConfig& cfg) {
    cfg.validate();
    const auto feats = extract_pooled_emotion_features(m.trunk, data.samples);
    const int dim = m.head.feature_dim;
    AdamState opt(cfg.adam());
    const auto steps_per_epoch = static_cast<std::int64_t>(
        std::max<std::size_t>(1, data.samples.size() / static_cast<std::size_t>(cfg.batch_size)));
    const std::int64_t warmup =
        cfg.warmup_steps < 0 ? std::max<std::int64_t>(1, steps_per_epoch * cfg.epochs / 20)
                             : cfg.warmup_steps;
    TrainLog log;
    std::int64_t gstep = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng brng(derive_seed(cfg.seed, "nwgm-batch", static_cast<std::uint64_t>(epoch)));
        double mean_loss = 0.0;
        int nb = 0;
        for (const auto& idxs : detail::epoch_batches(data.samples.size(), cfg.batch_size, brng)) {
            opt.config().lr = warmup_lr(cfg.lr, gstep, warmup);
            Tensor x({static_cast<int>(idxs.size()), dim});
            std::vector<int> y;
            for (std::size_t n = 0; n < idxs.size(); ++n) {
                for (int j = 0; j < dim; ++j)
                    x.data()[n * static_cast<std::size_t>(dim) + static_cast<std::size_t>(j)] =
                        feats[idxs[n]][static_cast<std::size_t>(j)];
                y.push_back(data.samples[idxs[n]].y_e);
            }
            Tensor loss = cross_entropy_mean(nwgm_forward(m.head, x, m.keys), y);
            mean_loss += loss.item();
            backward_into(loss, m.head.params);
            adam_step(m.head.params, opt);
            ++nb;
            ++gstep;
        }
        EpochLog el;
        el.epoch = epoch;
        el.losses.cls = mean_loss / std::max(1, nb);
        log.epochs.push_back(el);
    }
    log.steps = gstep;
    return log;
}

inline EvalReport evaluate_nwgm(NwgmModel& m, const ConfoundedDataset& ds) {
    if (ds.samples.empty()) throw ContractError("evaluate: empty dataset");
    const auto feats = extract_pooled_emotion_features(m.trunk, ds.samples);
    const int dim = m.head.feature_dim;
    std::vector<int> preds, labels;
    for (std::size_t start = 0; start < feats.size(); start += 64) {
        const std::size_t end = std::min(feats.size(), start + 64);
        Tensor x({static_cast<int>(end - start), dim});
        for (std::size_t n = start; n < end; ++n)
            for (int j = 0; j < dim; ++j)
                x.data()[(n - start) * static_cast<std::size_t>(dim) + static_cast<std::size_t>(j)] =
                    feats[n][static_cast<std::size_t>(j)];
        for (int p : argmax_rows(nwgm_forward(m.head, x, m.keys))) preds.push_back(p);
    }
    for (const auto& s : ds.samples) labels.push_back(s.y_e);
    EvalReport r = confusion(preds, labels, m.trunk.shape.n_emotions);
    r.split = ds.split_tag;
    r.method = "nwgm";
    return r;
}

}  // namespace iern
