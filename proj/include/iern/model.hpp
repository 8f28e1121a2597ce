#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "iern/optim.hpp"
#include "iern/synth.hpp"

// The interventional recognizer: seven components (backbone, emotion/context
// generators and discriminators, reconstruction network, classifier) plus a
// bank of learnable per-stratum confounder centers. Training alternates the
// discriminator, generator and classifier updates inside one step; prediction
// combines the emotion feature with every confounder center and averages the
// branch logits.

namespace iern {

// ---- model -----------------------------------------------------------------------

struct ModelShape {
    int image_h = 16, image_w = 16, image_c = 1;
    int n_emotions = 6;
    int n_confounders = 3;
    int base_channels = 32;

    int feat_h() const {
        const int h1 = (image_h + 4 - 5) / 4 + 1;
        return (h1 + 2 - 3) / 2 + 1;
    }
    int feat_w() const {
        const int w1 = (image_w + 4 - 5) / 4 + 1;
        return (w1 + 2 - 3) / 2 + 1;
    }
};

struct LossWeights {
    double lambda1 = 1.0;
    double lambda2 = 5e-4;
    double lambda3 = 1.0;

    void validate() const {
        for (double v : {lambda1, lambda2, lambda3})
            if (!(v >= 0.0) || !std::isfinite(v))
                throw ContractError("LossWeights: weights must be finite and non-negative");
    }
};

class IernModel {
public:
    ModelShape shape;
    LayerStack f_b, g_e, g_c, d_e, d_c, g_r, f_c;
    ParamSet bank_params;  // single entry "C": [N_c, bc, fh, fw]

    Tensor bank() { return bank_params.at("C"); }
    const Tensor& bank() const { return bank_params.at("C"); }

    std::vector<LayerStack*> components() { return {&f_b, &g_e, &g_c, &d_e, &d_c, &g_r, &f_c}; }
    std::vector<const LayerStack*> components() const {
        return {&f_b, &g_e, &g_c, &d_e, &d_c, &g_r, &f_c};
    }
};

namespace detail {

inline std::vector<LayerSpec> discriminator_specs(int bc, int feat_hw, int n_out) {
    std::vector<LayerSpec> specs;
    if (feat_hw >= 2)
        specs.push_back(LayerSpec::conv(bc, bc, 2, 2, 0));  // strided downsample
    else
        specs.push_back(LayerSpec::conv(bc, bc, 1, 1, 0));
    specs.push_back(LayerSpec::leaky_relu(0.2));
    specs.push_back(LayerSpec::conv(bc, std::max(2, bc / 2), 1, 1, 0));
    specs.push_back(LayerSpec::leaky_relu(0.2));
    specs.push_back(LayerSpec::conv(std::max(2, bc / 2), n_out, 1, 1, 0));
    specs.push_back(LayerSpec::global_avg_pool());
    return specs;
}

}  // namespace detail

/// Build a randomly initialized model; every component draws from its own
/// name-derived stream of `seed`.
inline IernModel make_iern_model(const ModelShape& shape, std::uint64_t seed) {
    const int bc = shape.base_channels;
    if (bc < 4) throw ConfigError("make_iern_model: base_channels must be >= 4");
    IernModel m;
    m.shape = shape;

    m.f_b = LayerStack("f_b", {LayerSpec::conv(shape.image_c, bc / 2, 5, 4, 2), LayerSpec::relu(),
                               LayerSpec::conv(bc / 2, bc, 3, 2, 1), LayerSpec::relu()});
    m.g_e = LayerStack("g_e", {LayerSpec::conv(bc, bc, 3, 1, 1), LayerSpec::residual(bc)});
    m.g_c = LayerStack("g_c", {LayerSpec::conv(bc, bc, 3, 1, 1), LayerSpec::residual(bc)});
    const int fhw = std::min(shape.feat_h(), shape.feat_w());
    m.d_e = LayerStack("d_e", detail::discriminator_specs(bc, fhw, shape.n_emotions));
    m.d_c = LayerStack("d_c", detail::discriminator_specs(bc, fhw, shape.n_confounders));
    m.g_r = LayerStack("g_r", {LayerSpec::concat_channels(), LayerSpec::conv(2 * bc, bc, 3, 1, 1),
                               LayerSpec::residual(bc), LayerSpec::residual(bc)});
    m.f_c = LayerStack("f_c", {LayerSpec::global_avg_pool(), LayerSpec::dense(bc, shape.n_emotions)});

    for (LayerStack* c : m.components()) {
        Rng rng(derive_seed(seed, c->name().c_str()));
        c->init(rng);
    }
    Rng brng(derive_seed(seed, "bank"));
    Tensor c0({shape.n_confounders, bc, shape.feat_h(), shape.feat_w()});
    for (auto& v : c0.data()) v = brng.uniform(-0.1, 0.1);
    m.bank_params.set_label("bank");
    m.bank_params.add("C", c0);
    return m;
}

// ---- batches -----------------------------------------------------------------------

struct Batch {
    Tensor x;  // [N, C, H, W]
    std::vector<int> y_e, y_c;
};

/// Assemble [H,W,C] samples into an NCHW batch.
inline Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idxs) {
    if (idxs.empty()) throw ContractError("make_batch: empty index list");
    const auto& s0 = samples.at(idxs[0]).x;
    const int h = s0.dim(0), w = s0.dim(1), c = s0.dim(2);
    Batch b;
    b.x = Tensor({static_cast<int>(idxs.size()), c, h, w});
    auto out = b.x.data();
    for (std::size_t n = 0; n < idxs.size(); ++n) {
        const Sample& s = samples.at(idxs[n]);
        const auto in = s.x.data();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch)
                    out[((n * static_cast<std::size_t>(c) + static_cast<std::size_t>(ch)) * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)] =
                        in[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * c + static_cast<std::size_t>(ch)];
        b.y_e.push_back(s.y_e);
        b.y_c.push_back(s.y_c);
    }
    return b;
}

inline Batch make_batch(const std::vector<Sample>& samples) {
    std::vector<std::size_t> idxs(samples.size());
    for (std::size_t i = 0; i < idxs.size(); ++i) idxs[i] = i;
    return make_batch(samples, idxs);
}

// ---- losses --------------------------------------------------------------------------

/// Adversarial emotion-feature objective: the discriminator term trains d_e to
/// read y_e off the emotion feature; the generator term pushes the context
/// discriminator's softmax on that same feature toward uniform.
struct AdversarialTerms {
    Tensor disc;  // backward target: the discriminator
    Tensor gen;   // backward target: the generator
};

inline AdversarialTerms loss_emotion(IernModel& m, const Batch& b, const ForwardOpts& opt = {}) {
    Tensor feat = m.g_e.forward(m.f_b.forward(b.x, opt), opt);
    AdversarialTerms t;
    t.disc = cross_entropy_mean(m.d_e.forward(feat, opt), b.y_e);
    t.gen = mse_scalar(softmax(m.d_c.forward(feat, opt)), 1.0 / m.shape.n_confounders);
    return t;
}

inline AdversarialTerms loss_context(IernModel& m, const Batch& b, const ForwardOpts& opt = {}) {
    Tensor feat = m.g_c.forward(m.f_b.forward(b.x, opt), opt);
    AdversarialTerms t;
    t.disc = cross_entropy_mean(m.d_c.forward(feat, opt), b.y_c);
    t.gen = mse_scalar(softmax(m.d_e.forward(feat, opt)), 1.0 / m.shape.n_emotions);
    return t;
}

inline Tensor loss_recon(IernModel& m, const Batch& b, const ForwardOpts& opt = {}) {
    Tensor base = m.f_b.forward(b.x, opt);
    Tensor e = m.g_e.forward(base, opt);
    Tensor c = m.g_c.forward(base, opt);
    Tensor rec = m.g_r.forward(e, opt, &c);
    return mse(rec, base);
}

inline Tensor loss_confounder_builder(IernModel& m, const Batch& b, const ForwardOpts& opt = {}) {
    Tensor feat = m.g_c.forward(m.f_b.forward(b.x, opt), opt);
    Tensor centers = select_rows(m.bank(), b.y_c);
    return mse(feat, centers);
}

inline Tensor loss_classifier(IernModel& m, const Batch& b, const ForwardOpts& opt = {}) {
    Tensor e = m.g_e.forward(m.f_b.forward(b.x, opt), opt);
    const int n = b.x.dim(0);
    Tensor logits;
    for (int i = 0; i < m.shape.n_confounders; ++i) {
        Tensor center = broadcast_row(m.bank(), i, n);
        Tensor branch = m.f_c.forward(m.g_r.forward(e, opt, &center), opt);
        logits = i == 0 ? branch : add(logits, branch);
    }
    logits = scale(logits, 1.0 / m.shape.n_confounders);
    return cross_entropy_mean(logits, b.y_e);
}

struct LossBreakdown {
    double e_disc = 0, e_gen = 0, c_disc = 0, c_gen = 0, recon = 0, cb = 0, cls = 0;

    double loss_e() const { return e_disc + e_gen; }
    double loss_c() const { return c_disc + c_gen; }
    double total(const LossWeights& w) const {
        return w.lambda1 * (loss_e() + loss_c() + recon) + w.lambda2 * cb + w.lambda3 * cls;
    }
};

/// All five objectives from one forward pass, for reporting. Parameter updates
/// follow train_step's staging, not a joint backward of this scalar.
inline LossBreakdown total_loss(IernModel& m, const Batch& b, const LossWeights& w,
                                const ForwardOpts& opt = {}) {
    w.validate();
    LossBreakdown out;
    Tensor base = m.f_b.forward(b.x, opt);
    Tensor e = m.g_e.forward(base, opt);
    Tensor c = m.g_c.forward(base, opt);
    out.e_disc = cross_entropy_mean(m.d_e.forward(e, opt), b.y_e).item();
    out.e_gen = mse_scalar(softmax(m.d_c.forward(e, opt)), 1.0 / m.shape.n_confounders).item();
    out.c_disc = cross_entropy_mean(m.d_c.forward(c, opt), b.y_c).item();
    out.c_gen = mse_scalar(softmax(m.d_e.forward(c, opt)), 1.0 / m.shape.n_emotions).item();
    out.recon = mse(m.g_r.forward(e, opt, &c), base).item();
    out.cb = mse(c, select_rows(m.bank(), b.y_c)).item();
    const int n = b.x.dim(0);
    Tensor logits;
    for (int i = 0; i < m.shape.n_confounders; ++i) {
        Tensor center = broadcast_row(m.bank(), i, n);
        Tensor branch = m.f_c.forward(m.g_r.forward(e, opt, &center), opt);
        logits = i == 0 ? branch : add(logits, branch);
    }
    out.cls = cross_entropy_mean(scale(logits, 1.0 / m.shape.n_confounders), b.y_e).item();
    return out;
}

// ---- staged training step ---------------------------------------------------------------

struct IernOptimizers {
    AdamState f_b, g_e, g_c, d_e, d_c, g_r, f_c, bank;

    explicit IernOptimizers(AdamConfig cfg = {})
        : f_b(cfg), g_e(cfg), g_c(cfg), d_e(cfg), d_c(cfg), g_r(cfg), f_c(cfg), bank(cfg) {}

    void set_lr(double lr) {
        for (AdamState* s : {&f_b, &g_e, &g_c, &d_e, &d_c, &g_r, &f_c, &bank})
            s->config().lr = lr;
    }
};

/// Hook for inspecting parameters between stages (freezing-contract tests).
using StageObserver = std::function<void(char stage, IernModel& model)>;

/// One training iteration, staged:
///   (a) forward all components (refreshes bn statistics once per step);
///   (b) update d_e / d_c from their cross-entropy terms;
///   (c) update g_e, g_c, g_r and the bank from the adversarial, reconstruction
///       and center terms, against the discriminators as just updated;
///   (d) re-forward the N_c classifier branches and update f_c, g_e, f_b.
/// Each stage sees parameters exactly as the previous stage left them. The
/// returned breakdown reports every term at the parameters of the stage that
/// optimizes it.
inline LossBreakdown train_step(IernModel& m, const Batch& b, const LossWeights& w,
                                IernOptimizers& opt, const StageObserver& observer = {}) {
    w.validate();
    if (b.y_e.size() != static_cast<std::size_t>(b.x.dim(0)) ||
        b.y_c.size() != static_cast<std::size_t>(b.x.dim(0)))
        throw ContractError("train_step: batch must carry y_e and y_c for every sample");

    LossBreakdown report;
    ForwardOpts stat_opt{.training = true, .update_bn_stats = true};
    ForwardOpts opt_fwd{.training = true, .update_bn_stats = false};

    {  // (a) forward, then (b) discriminators, generators frozen
        Tensor base = m.f_b.forward(b.x, stat_opt);
        Tensor e = m.g_e.forward(base, stat_opt);
        Tensor c = m.g_c.forward(base, stat_opt);
        Tensor le = cross_entropy_mean(m.d_e.forward(e, stat_opt), b.y_e);
        Tensor lc = cross_entropy_mean(m.d_c.forward(c, stat_opt), b.y_c);
        report.e_disc = le.item();
        report.c_disc = lc.item();
        if (observer) observer('a', m);
        backward_into(scale(add(le, lc), w.lambda1), {&m.d_e.params(), &m.d_c.params()});
        adam_step(m.d_e.params(), opt.d_e);
        adam_step(m.d_c.params(), opt.d_c);
    }
    if (observer) observer('b', m);

    {  // (c) generators, reconstruction and bank, discriminators frozen
        Tensor base = m.f_b.forward(b.x, opt_fwd);
        Tensor e = m.g_e.forward(base, opt_fwd);
        Tensor c = m.g_c.forward(base, opt_fwd);
        Tensor rec = m.g_r.forward(e, opt_fwd, &c);
        Tensor l_e_gen = mse_scalar(softmax(m.d_c.forward(e, opt_fwd)), 1.0 / m.shape.n_confounders);
        Tensor l_c_gen = mse_scalar(softmax(m.d_e.forward(c, opt_fwd)), 1.0 / m.shape.n_emotions);
        Tensor l_rec = mse(rec, base);
        Tensor l_cb = mse(c, select_rows(m.bank(), b.y_c));
        report.e_gen = l_e_gen.item();
        report.c_gen = l_c_gen.item();
        report.recon = l_rec.item();
        report.cb = l_cb.item();
        Tensor l = add(scale(add(add(l_e_gen, l_c_gen), l_rec), w.lambda1), scale(l_cb, w.lambda2));
        backward_into(l, {&m.g_e.params(), &m.g_c.params(), &m.g_r.params(), &m.bank_params});
        adam_step(m.g_e.params(), opt.g_e);
        adam_step(m.g_c.params(), opt.g_c);
        adam_step(m.g_r.params(), opt.g_r);
        adam_step(m.bank_params, opt.bank);
    }
    if (observer) observer('c', m);

    {  // (d) classifier branches; g_r and the bank act frozen here
        Tensor l = loss_classifier(m, b, opt_fwd);
        report.cls = l.item();
        backward_into(scale(l, w.lambda3), {&m.f_c.params(), &m.g_e.params(), &m.f_b.params()});
        adam_step(m.f_c.params(), opt.f_c);
        adam_step(m.g_e.params(), opt.g_e);
        adam_step(m.f_b.params(), opt.f_b);
    }
    if (observer) observer('d', m);

    return report;
}

// ---- convergence snapshots ---------------------------------------------------------------

struct IernModelState {
    std::vector<LayerStack::State> components;
    std::vector<double> bank;
};

inline IernModelState capture_state(const IernModel& m) {
    IernModelState s;
    for (const LayerStack* c : m.components()) s.components.push_back(c->state());
    s.bank.assign(m.bank().data().begin(), m.bank().data().end());
    return s;
}

inline void restore_state(IernModel& m, const IernModelState& s) {
    auto comps = m.components();
    if (s.components.size() != comps.size() || s.bank.size() != m.bank().data().size())
        throw ContractError("restore_state: model/state mismatch");
    for (std::size_t i = 0; i < comps.size(); ++i) comps[i]->restore(s.components[i]);
    std::copy(s.bank.begin(), s.bank.end(), m.bank().data().begin());
}

// ---- prediction -----------------------------------------------------------------------

namespace detail {

/// Branch-logit average that is bitwise invariant under any permutation of the
/// bank: per output coordinate the branch values are sorted before summation.
inline Tensor permutation_invariant_mean(const std::vector<Tensor>& branches) {
    const auto& s0 = branches.at(0);
    std::vector<double> out(static_cast<std::size_t>(s0.size()), 0.0);
    std::vector<double> vals(branches.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t j = 0; j < branches.size(); ++j) vals[j] = branches[j].data()[i];
        std::sort(vals.begin(), vals.end());
        double acc = 0.0;
        for (double v : vals) acc += v;
        out[i] = acc / static_cast<double>(branches.size());
    }
    return Tensor(s0.shape(), std::move(out));
}

}  // namespace detail

/// Backdoor-averaged logits for a batch, evaluation mode (frozen bn stats).
inline Tensor iern_logits(IernModel& m, const Tensor& x_batch) {
    ForwardOpts opt{.training = false, .update_bn_stats = false};
    Tensor e = m.g_e.forward(m.f_b.forward(x_batch, opt), opt);
    const int n = x_batch.dim(0);
    std::vector<Tensor> branches;
    branches.reserve(static_cast<std::size_t>(m.shape.n_confounders));
    for (int i = 0; i < m.shape.n_confounders; ++i) {
        Tensor center = broadcast_row(m.bank(), i, n);
        branches.push_back(m.f_c.forward(m.g_r.forward(e, opt, &center), opt));
    }
    return detail::permutation_invariant_mean(branches);
}

struct Prediction {
    int label = 0;
    std::vector<double> probs;
};

/// x: one [H,W,C] sample array.
inline Prediction predict(IernModel& m, const Tensor& x) {
    Sample s;
    s.x = x;
    const Batch b = make_batch({s}, {0});
    const Tensor logits = iern_logits(m, b.x);
    const Tensor p = softmax(reshape(logits, {logits.dim(1)}));
    Prediction out;
    out.probs.assign(p.data().begin(), p.data().end());
    out.label = argmax(p.data());
    return out;
}

inline std::vector<int> predict_labels(IernModel& m, const std::vector<Sample>& samples,
                                       int eval_batch = 64) {
    std::vector<int> preds;
    preds.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(eval_batch)) {
        std::vector<std::size_t> idxs;
        for (std::size_t i = start; i < std::min(samples.size(), start + static_cast<std::size_t>(eval_batch)); ++i)
            idxs.push_back(i);
        const Batch b = make_batch(samples, idxs);
        for (int p : argmax_rows(iern_logits(m, b.x))) preds.push_back(p);
    }
    return preds;
}

// ---- checkpoints ----------------------------------------------------------------------
// Manifest: component names, parameter names/shapes, bn sites, format version,
// seed and step counter. Blob: parameter values as 32-bit little-endian floats
// in manifest order, then bn running statistics.

struct CheckpointMeta {
    std::string method = "iern";
    ModelShape shape;
    std::uint64_t seed = 0;
    std::int64_t step = 0;
};

namespace detail {

inline void write_tensor_f32(std::ofstream& f, std::span<const double> v) {
    for (double d : v) {
        const float fv = static_cast<float>(d);
        f.write(reinterpret_cast<const char*>(&fv), 4);
    }
}

inline void read_tensor_f32(std::ifstream& f, std::span<double> v) {
    for (auto& d : v) {
        float fv = 0.0f;
        f.read(reinterpret_cast<char*>(&fv), 4);
        d = static_cast<double>(fv);
    }
}

}  // namespace detail

inline void save_checkpoint(const std::string& stem, const CheckpointMeta& meta,
                            std::vector<const LayerStack*> components,
                            const std::vector<std::pair<std::string, const Tensor*>>& extras = {}) {
    std::ofstream mf(stem + ".manifest");
    if (!mf) throw IoError("save_checkpoint: cannot open " + stem + ".manifest");
    mf << "iern-checkpoint v1\n";
    mf << "method " << meta.method << '\n';
    mf << "image " << meta.shape.image_h << ' ' << meta.shape.image_w << ' ' << meta.shape.image_c
       << '\n';
    mf << "classes " << meta.shape.n_emotions << ' ' << meta.shape.n_confounders << '\n';
    mf << "base_channels " << meta.shape.base_channels << '\n';
    mf << "seed " << meta.seed << '\n';
    mf << "step " << meta.step << '\n';
    const std::string blob = stem + ".bin";
    mf << "blob " << blob.substr(blob.find_last_of('/') + 1) << '\n';
    std::ofstream bf(blob, std::ios::binary);
    if (!bf) throw IoError("save_checkpoint: cannot open " + blob);
    for (const LayerStack* c : components) {
        mf << "component " << c->name() << '\n';
        for (const auto& e : c->params().entries()) {
            mf << "param " << e.name;
            for (int d : e.tensor.shape()) mf << ' ' << d;
            mf << '\n';
            detail::write_tensor_f32(bf, e.tensor.data());
        }
        for (std::size_t i = 0; i < c->bn_buffers().size(); ++i) {
            const BnBuffers& bn = c->bn_buffers()[i];
            if (bn.mean.empty()) continue;
            mf << "bn " << i << ' ' << bn.mean.size() << '\n';
            detail::write_tensor_f32(bf, bn.mean);
            detail::write_tensor_f32(bf, bn.var);
        }
    }
    for (const auto& [name, t] : extras) {
        mf << "extra " << name;
        for (int d : t->shape()) mf << ' ' << d;
        mf << '\n';
        detail::write_tensor_f32(bf, t->data());
    }
    if (!mf || !bf) throw IoError("save_checkpoint: write failed for " + stem);
}

/// Reads values back into an already built model. Shapes must match; the
/// manifest drives the read order.
inline CheckpointMeta load_checkpoint(const std::string& stem,
                                      std::vector<LayerStack*> components,
                                      const std::vector<std::pair<std::string, Tensor*>>& extras = {}) {
    std::ifstream mf(stem + ".manifest");
    if (!mf) throw IoError("load_checkpoint: cannot open " + stem + ".manifest");
    std::string magic, version;
    mf >> magic >> version;
    if (magic != "iern-checkpoint" || version != "v1")
        throw IoError("load_checkpoint: unrecognized header");
    CheckpointMeta meta;
    std::string key, blob_name;
    LayerStack* current = nullptr;
    std::ifstream bf;
    auto open_blob = [&]() {
        const auto slash = stem.find_last_of('/');
        const std::string dir = slash == std::string::npos ? "" : stem.substr(0, slash + 1);
        bf.open(dir + blob_name, std::ios::binary);
        if (!bf) throw IoError("load_checkpoint: cannot open blob " + dir + blob_name);
    };
    while (mf >> key) {
        if (key == "method")
            mf >> meta.method;
        else if (key == "image")
            mf >> meta.shape.image_h >> meta.shape.image_w >> meta.shape.image_c;
        else if (key == "classes")
            mf >> meta.shape.n_emotions >> meta.shape.n_confounders;
        else if (key == "base_channels")
            mf >> meta.shape.base_channels;
        else if (key == "seed")
            mf >> meta.seed;
        else if (key == "step")
            mf >> meta.step;
        else if (key == "blob") {
            mf >> blob_name;
            open_blob();
        } else if (key == "component") {
            std::string name;
            mf >> name;
            current = nullptr;
            for (LayerStack* c : components)
                if (c->name() == name) current = c;
            if (!current) throw IoError("load_checkpoint: unexpected component " + name);
        } else if (key == "param") {
            if (!current) throw IoError("load_checkpoint: param outside a component");
            std::string pname;
            mf >> pname;
            Tensor& t = current->params().at(pname);
            std::string rest;
            std::getline(mf, rest);
            std::istringstream is(rest);
            std::vector<int> shape;
            int d;
            while (is >> d) shape.push_back(d);
            if (shape != t.shape())
                throw IoError("load_checkpoint: shape mismatch for " + pname);
            detail::read_tensor_f32(bf, t.data());
        } else if (key == "bn") {
            if (!current) throw IoError("load_checkpoint: bn outside a component");
            std::size_t layer = 0, size = 0;
            mf >> layer >> size;
            if (layer >= current->bn_buffers().size() ||
                current->bn_buffers()[layer].mean.size() != size)
                throw IoError("load_checkpoint: bn site mismatch");
            detail::read_tensor_f32(bf, current->bn_buffers()[layer].mean);
            detail::read_tensor_f32(bf, current->bn_buffers()[layer].var);
        } else if (key == "extra") {
            std::string name;
            mf >> name;
            Tensor* target = nullptr;
            for (const auto& [n, t] : extras)
                if (n == name) target = t;
            if (!target) throw IoError("load_checkpoint: unexpected extra " + name);
            std::string rest;
            std::getline(mf, rest);
            std::istringstream is(rest);
            std::vector<int> shape;
            int d;
            while (is >> d) shape.push_back(d);
            if (shape != target->shape())
                throw IoError("load_checkpoint: shape mismatch for extra " + name);
            detail::read_tensor_f32(bf, target->data());
        } else {
            throw IoError("load_checkpoint: unknown key " + key);
        }
    }
    if (!bf) throw IoError("load_checkpoint: blob truncated");
    return meta;
}

inline void save_iern_checkpoint(const std::string& stem, const IernModel& m,
                                 std::uint64_t seed, std::int64_t step) {
    CheckpointMeta meta{"iern", m.shape, seed, step};
    const Tensor& c = m.bank();
    save_checkpoint(stem, meta, {m.components()}, {{"C", &c}});
}

inline CheckpointMeta load_iern_checkpoint(const std::string& stem, IernModel& m) {
    Tensor c = m.bank();
    return load_checkpoint(stem, m.components(), {{"C", &c}});
}

}  // namespace iern
