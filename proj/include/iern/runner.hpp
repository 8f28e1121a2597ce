#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "iern/baselines.hpp"
#include "iern/config.hpp"
#include "iern/scm.hpp"

// Experiment runner behind the CLI: dataset assembly, method dispatch,
// artifact persistence and the comparison table.

namespace iern {

// ---- data assembly -----------------------------------------------------------------

struct DataBundle {
    ConfoundedDataset train;
    ConfoundedDataset eval;    // the split reports are written against
    ConfoundedDataset indist;  // fresh draw from the training support (toy only)
};

inline DataBundle load_data(const ExperimentConfig& cfg) {
    DataBundle d;
    if (cfg.data_source == "toy") {
        const ToyBenchmark tb = default_toy_benchmark(cfg.seed, cfg.per_cell_train, cfg.per_cell_test);
        d.train = build_split(tb.train_spec);
        d.indist = build_split(tb.indist_spec, "test");
        d.eval = build_split(tb.ood_spec, "test");
    } else {
        d.train = load_dataset(cfg.train_files);
        d.eval = load_dataset(cfg.eval_files);
        d.indist = d.eval;
    }
    if (cfg.move_fraction > 0.0) {
        Rng rng(derive_seed(cfg.seed, "move"));
        auto [tr, te] = move_fraction(d.train, d.eval, cfg.move_fraction, rng);
        d.train = std::move(tr);
        d.eval = std::move(te);
    }
    return d;
}

// ---- method dispatch ------------------------------------------------------------------

struct AnyModel {
    std::string method;
    ModelShape shape;
    std::shared_ptr<VanillaModel> vanilla;  // baseline / resample
    std::shared_ptr<IernModel> iern;        // iern / disentangle
    std::shared_ptr<NwgmModel> nwgm;
};

inline EvalReport evaluate_any(AnyModel& m, const ConfoundedDataset& ds) {
    EvalReport r;
    if (m.vanilla)
        r = evaluate_vanilla(*m.vanilla, ds);
    else if (m.nwgm)
        r = evaluate_nwgm(*m.nwgm, ds);
    else if (m.method == "disentangle")
        r = evaluate_disentangle(*m.iern, ds);
    else
        r = evaluate_iern(*m.iern, ds);
    r.method = m.method;
    return r;
}

inline ModelShape shape_for(const ExperimentConfig& cfg, const ConfoundedDataset& train) {
    ModelShape s;
    s.image_h = train.spec.height;
    s.image_w = train.spec.width;
    s.image_c = train.spec.channels;
    s.n_emotions = train.spec.n_emotions;
    s.n_confounders = train.spec.n_confounders;
    s.base_channels = cfg.base_channels;
    return s;
}

struct RunResult {
    AnyModel model;
    TrainLog log;
    EvalReport eval_report;
};

/// Train the configured method on `train`, report on `evalset`.
inline RunResult run_method(const ExperimentConfig& cfg, const ConfoundedDataset& train,
                            const ConfoundedDataset& evalset) {
    cfg.validate();
    const ModelShape shape = shape_for(cfg, train);
    const std::uint64_t model_seed = derive_seed(cfg.seed, "model");
    TrainConfig tc = cfg.train_config();

    RunResult out;
    out.model.method = cfg.method;
    out.model.shape = shape;
    if (cfg.method == "baseline" || cfg.method == "resample") {
        out.model.vanilla = std::make_shared<VanillaModel>(make_vanilla_model(shape, model_seed));
        if (cfg.method == "resample") {
            Rng rng(derive_seed(cfg.seed, "resample"));
            const ConfoundedDataset balanced = resample_dataset(train, rng);
            out.log = train_vanilla(*out.model.vanilla, balanced, tc);
        } else {
            out.log = train_vanilla(*out.model.vanilla, train, tc);
        }
    } else if (cfg.method == "disentangle") {
        out.model.iern = std::make_shared<IernModel>(make_iern_model(shape, model_seed));
        out.log = train_disentangle_only(*out.model.iern, train, tc);
    } else if (cfg.method == "iern") {
        out.model.iern = std::make_shared<IernModel>(make_iern_model(shape, model_seed));
        out.log = train_iern(*out.model.iern, train, tc);
    } else if (cfg.method == "nwgm") {
        auto nm = std::make_shared<NwgmModel>();
        nm->trunk = make_iern_model(shape, model_seed);
        TrainConfig trunk_tc = tc;
        trunk_tc.epochs = cfg.nwgm_trunk_epochs < 0 ? cfg.epochs : cfg.nwgm_trunk_epochs;
        out.log = train_disentangle_only(nm->trunk, train, trunk_tc);
        std::vector<int> y_c;
        for (const auto& s : train.samples) y_c.push_back(s.y_c);
        nm->dict = build_nwgm_dictionary(extract_context_features(nm->trunk, train.samples), y_c,
                                         shape.n_confounders);
        nm->keys = nwgm_pooled_keys(nm->dict);
        nm->head = make_nwgm_head(shape.base_channels, shape.n_emotions, model_seed);
        TrainConfig head_tc = tc;
        head_tc.epochs = cfg.nwgm_head_epochs;
        train_nwgm_head(*nm, train, head_tc);
        out.model.nwgm = nm;
    } else {
        throw ConfigError("run_method: unknown method " + cfg.method);
    }
    out.eval_report = evaluate_any(out.model, evalset);
    out.eval_report.seed = cfg.seed;
    return out;
}

// ---- persistence --------------------------------------------------------------------------

inline void save_any_checkpoint(const std::string& stem, const AnyModel& m, std::uint64_t seed,
                                std::int64_t step) {
    CheckpointMeta meta{m.method, m.shape, seed, step};
    if (m.vanilla) {
        save_checkpoint(stem, meta, {&m.vanilla->f_b, &m.vanilla->f_c});
    } else if (m.nwgm) {
        const IernModel& trunk = m.nwgm->trunk;
        const NwgmHead& head = m.nwgm->head;
        save_checkpoint(stem, meta, trunk.components(),
                        {{"C", &trunk.bank()},
                         {"dict", &m.nwgm->dict.entries},
                         {"W1", &head.params.at("W1")},
                         {"W2", &head.params.at("W2")}});
    } else {
        const IernModel& model = *m.iern;
        save_checkpoint(stem, meta, model.components(), {{"C", &model.bank()}});
    }
}

/// Read only the manifest header (method/shape/seed/step).
inline CheckpointMeta peek_checkpoint(const std::string& stem) {
    std::ifstream mf(stem + ".manifest");
    if (!mf) throw IoError("peek_checkpoint: cannot open " + stem + ".manifest");
    std::string magic, version;
    mf >> magic >> version;
    if (magic != "iern-checkpoint" || version != "v1")
        throw IoError("peek_checkpoint: unrecognized header");
    CheckpointMeta meta;
    std::string key;
    while (mf >> key) {
        if (key == "method") mf >> meta.method;
        else if (key == "image") mf >> meta.shape.image_h >> meta.shape.image_w >> meta.shape.image_c;
        else if (key == "classes") mf >> meta.shape.n_emotions >> meta.shape.n_confounders;
        else if (key == "base_channels") mf >> meta.shape.base_channels;
        else if (key == "seed") mf >> meta.seed;
        else if (key == "step") mf >> meta.step;
        else {
            std::string rest;
            std::getline(mf, rest);
        }
    }
    return meta;
}

inline AnyModel load_any_checkpoint(const std::string& stem) {
    const CheckpointMeta meta = peek_checkpoint(stem);
    AnyModel m;
    m.method = meta.method;
    m.shape = meta.shape;
    if (meta.method == "baseline" || meta.method == "resample") {
        m.vanilla = std::make_shared<VanillaModel>(make_vanilla_model(meta.shape, 0));
        load_checkpoint(stem, {&m.vanilla->f_b, &m.vanilla->f_c});
    } else if (meta.method == "nwgm") {
        m.nwgm = std::make_shared<NwgmModel>();
        m.nwgm->trunk = make_iern_model(meta.shape, 0);
        m.nwgm->head = make_nwgm_head(meta.shape.base_channels, meta.shape.n_emotions, 0);
        m.nwgm->dict.entries = Tensor({meta.shape.n_confounders, meta.shape.base_channels,
                                       meta.shape.feat_h(), meta.shape.feat_w()});
        Tensor bank = m.nwgm->trunk.bank();
        load_checkpoint(stem, {m.nwgm->trunk.components()},
                        {{"C", &bank},
                         {"dict", &m.nwgm->dict.entries},
                         {"W1", &m.nwgm->head.params.at("W1")},
                         {"W2", &m.nwgm->head.params.at("W2")}});
        m.nwgm->keys = nwgm_pooled_keys(m.nwgm->dict);
    } else {
        m.iern = std::make_shared<IernModel>(make_iern_model(meta.shape, 0));
        load_iern_checkpoint(stem, *m.iern);
    }
    return m;
}

inline void write_train_log(const std::string& path, const std::string& method, const TrainLog& log) {
    std::ofstream f(path);
    if (!f) throw IoError("write_train_log: cannot open " + path);
    f.precision(10);
    f << "iernlab-trainlog v1\n";
    f << "method " << method << '\n';
    const bool full = method == "iern";
    const bool disent = method == "disentangle" || method == "nwgm";
    for (const auto& e : log.epochs) {
        f << "epoch=" << e.epoch;
        if (full) {
            f << " loss_e=" << e.losses.loss_e() << " loss_c=" << e.losses.loss_c()
              << " loss_r=" << e.losses.recon << " loss_cb=" << e.losses.cb
              << " loss_cls=" << e.losses.cls;
        } else if (disent) {
            f << " loss_e=" << e.losses.loss_e() << " loss_c=" << e.losses.loss_c()
              << " loss_r=" << e.losses.recon << " loss_cls=" << e.losses.cls;
        } else {
            f << " loss_cls=" << e.losses.cls;
        }
        if (e.train_acc >= 0.0) f << " train_acc=" << e.train_acc;
        f << '\n';
    }
    if (!f) throw IoError("write_train_log: write failed");
}

// ---- commands --------------------------------------------------------------------------

inline int cmd_gen(const ExperimentConfig& cfg, std::ostream& out = std::cout) {
    cfg.validate();
    if (cfg.data_source != "toy")
        throw ConfigError("gen: only the toy source generates datasets");
    std::filesystem::create_directories(cfg.out_dir);
    const ToyBenchmark tb = default_toy_benchmark(cfg.seed, cfg.per_cell_train, cfg.per_cell_test);
    const ConfoundedDataset train = build_split(tb.train_spec);
    const ConfoundedDataset indist = build_split(tb.indist_spec, "test");
    const ConfoundedDataset ood = build_split(tb.ood_spec, "test");
    save_dataset(train, cfg.out_dir + "/train");
    save_dataset(indist, cfg.out_dir + "/indist");
    save_dataset(ood, cfg.out_dir + "/ood");
    for (const auto& [name, ds] : {std::pair<const char*, const ConfoundedDataset*>{"train", &train},
                                   {"indist", &indist},
                                   {"ood", &ood}}) {
        out << name << ": " << ds->samples.size() << " samples, cells";
        const auto counts = ds->cell_counts();
        for (int e = 0; e < ds->spec.n_emotions; ++e)
            for (int c = 0; c < ds->spec.n_confounders; ++c)
                if (counts[static_cast<std::size_t>(e)][static_cast<std::size_t>(c)] > 0)
                    out << " (" << e << ',' << c << ")x" << counts[static_cast<std::size_t>(e)][static_cast<std::size_t>(c)];
        out << '\n';
    }
    return 0;
}

inline int cmd_train(const ExperimentConfig& cfg, std::ostream& out = std::cout) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    const DataBundle data = load_data(cfg);
    RunResult res = run_method(cfg, data.train, data.eval);
    save_any_checkpoint(cfg.out_dir + "/checkpoint", res.model, cfg.seed, res.log.steps);
    write_train_log(cfg.out_dir + "/train_log.txt", cfg.method, res.log);
    res.eval_report.fold_id = cfg.fold;
    save_report(res.eval_report, cfg.out_dir + "/report.txt");
    out << "method=" << cfg.method << " seed=" << cfg.seed << " steps=" << res.log.steps
        << " eval_mean_acc=" << res.eval_report.mean_acc << '\n';
    return 0;
}

inline int cmd_eval(const ExperimentConfig& cfg, std::ostream& out = std::cout) {
    if (cfg.eval_checkpoint.empty() || cfg.eval_data.empty())
        throw ConfigError("eval: eval.checkpoint and eval.data are required");
    std::filesystem::create_directories(cfg.out_dir);
    AnyModel model = load_any_checkpoint(cfg.eval_checkpoint);
    const ConfoundedDataset ds = load_dataset(cfg.eval_data);
    if (ds.samples.empty()) throw ConfigError("eval: dataset is empty");
    if (ds.spec.n_emotions != model.shape.n_emotions ||
        ds.spec.n_confounders != model.shape.n_confounders ||
        ds.spec.height != model.shape.image_h || ds.spec.width != model.shape.image_w ||
        ds.spec.channels != model.shape.image_c)
        throw ConfigError("eval: checkpoint and dataset are incompatible");
    EvalReport r = evaluate_any(model, ds);
    r.seed = cfg.seed;
    r.fold_id = cfg.fold;
    save_report(r, cfg.out_dir + "/report.txt");
    if (model.iern || model.nwgm) {
        // context-feature export for external plotting
        IernModel& trunk = model.iern ? *model.iern : model.nwgm->trunk;
        const auto feats = extract_context_features(trunk, ds.samples);
        std::vector<std::vector<double>> rows;
        std::vector<int> strata;
        rows.reserve(feats.size());
        for (std::size_t i = 0; i < feats.size(); ++i) {
            rows.emplace_back(feats[i].data().begin(), feats[i].data().end());
            strata.push_back(ds.samples[i].y_c);
        }
        save_embeddings(rows, strata, cfg.out_dir + "/context_features");
    }
    out << "method=" << model.method << " split=" << r.split << " mean_acc=" << r.mean_acc << '\n';
    return 0;
}

// ---- comparison -----------------------------------------------------------------------------

struct CompareTask {
    std::string label;  // method, possibly annotated with a lambda2 value
    ExperimentConfig cfg;
};

struct CompareRow {
    std::string label;
    std::vector<double> class_mean, class_std;  // per class, percent
    double mean_acc_mean = 0.0, mean_acc_std = 0.0;
    std::vector<EvalReport> per_seed;
};

inline std::vector<CompareTask> compare_tasks(const ExperimentConfig& base) {
    std::vector<CompareTask> tasks;
    for (const std::string& method : base.compare_methods) {
        if (method == "iern" && !base.lambda2_grid.empty()) {
            for (double l2 : base.lambda2_grid) {
                ExperimentConfig c = base;
                c.method = method;
                c.weights.lambda2 = l2;
                std::ostringstream label;
                label << "iern[l2=" << l2 << ']';
                tasks.push_back({label.str(), c});
            }
        } else {
            ExperimentConfig c = base;
            c.method = method;
            tasks.push_back({method, c});
        }
    }
    return tasks;
}

/// Train/evaluate every (method, seed) pair, at most `workers` at a time; each
/// run stays internally single threaded and seed-deterministic.
inline std::vector<CompareRow> run_compare(const ExperimentConfig& base,
                                           int workers = 2,
                                           const std::function<void(const std::string&)>& progress = {}) {
    base.validate();
    const std::vector<CompareTask> tasks = compare_tasks(base);
    struct Job {
        std::size_t task;
        std::uint64_t seed;
        EvalReport report;
    };
    std::vector<Job> jobs;
    for (std::size_t t = 0; t < tasks.size(); ++t)
        for (std::uint64_t s : base.compare_seeds) jobs.push_back({t, s, {}});

    std::mutex mu;
    std::size_t next = 0;
    auto worker = [&]() {
        for (;;) {
            std::size_t mine;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= jobs.size()) return;
                mine = next++;
            }
            Job& job = jobs[mine];
            ExperimentConfig cfg = tasks[job.task].cfg;
            cfg.seed = job.seed;
            const DataBundle data = load_data(cfg);
            RunResult res = run_method(cfg, data.train, data.eval);
            job.report = res.eval_report;
            if (progress) {
                std::lock_guard<std::mutex> lock(mu);
                std::ostringstream os;
                os << tasks[job.task].label << " seed=" << job.seed
                   << " mean_acc=" << job.report.mean_acc;
                progress(os.str());
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < std::max(1, workers); ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    std::vector<CompareRow> rows;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        CompareRow row;
        row.label = tasks[t].label;
        for (const Job& j : jobs)
            if (j.task == t) row.per_seed.push_back(j.report);
        const int n_classes = row.per_seed.front().n_classes;
        row.class_mean.assign(static_cast<std::size_t>(n_classes), 0.0);
        row.class_std.assign(static_cast<std::size_t>(n_classes), 0.0);
        const double n = static_cast<double>(row.per_seed.size());
        for (const EvalReport& r : row.per_seed) {
            for (int c = 0; c < n_classes; ++c)
                row.class_mean[static_cast<std::size_t>(c)] += 100.0 * r.per_class_acc[static_cast<std::size_t>(c)] / n;
            row.mean_acc_mean += 100.0 * r.mean_acc / n;
        }
        for (const EvalReport& r : row.per_seed) {
            for (int c = 0; c < n_classes; ++c) {
                const double d = 100.0 * r.per_class_acc[static_cast<std::size_t>(c)] - row.class_mean[static_cast<std::size_t>(c)];
                row.class_std[static_cast<std::size_t>(c)] += d * d / n;
            }
            const double d = 100.0 * r.mean_acc - row.mean_acc_mean;
            row.mean_acc_std += d * d / n;
        }
        for (auto& v : row.class_std) v = std::sqrt(v);
        row.mean_acc_std = std::sqrt(row.mean_acc_std);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_compare_table(const std::string& path, const std::vector<CompareRow>& rows,
                                std::size_t n_seeds) {
    std::ofstream f(path);
    if (!f) throw IoError("write_compare_table: cannot open " + path);
    f << "iernlab-compare v1\n";
    f << "seeds " << n_seeds << '\n';
    if (!rows.empty()) {
        f << "columns";
        for (std::size_t c = 0; c < rows.front().class_mean.size(); ++c) f << " class" << c;
        f << " average\n";
    }
    f.setf(std::ios::fixed);
    f.precision(2);
    for (const CompareRow& row : rows) {
        f << "method " << row.label << '\n';
        f << "mean";
        for (double v : row.class_mean) f << ' ' << v;
        f << ' ' << row.mean_acc_mean << '\n';
        f << "std";
        for (double v : row.class_std) f << ' ' << v;
        f << ' ' << row.mean_acc_std << '\n';
    }
    if (!f) throw IoError("write_compare_table: write failed");
}

inline int cmd_compare(const ExperimentConfig& cfg, std::ostream& out = std::cout) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    const auto rows = run_compare(cfg, 2, [&out](const std::string& line) { out << line << '\n'; });
    for (const CompareRow& row : rows)
        for (const EvalReport& r : row.per_seed) {
            std::string label = row.label;
            for (auto& ch : label)
                if (ch == '[' || ch == ']' || ch == '=') ch = '_';
            save_report(r, cfg.out_dir + "/" + label + "_seed" + std::to_string(r.seed) + ".report");
        }
    write_compare_table(cfg.out_dir + "/compare.txt", rows, cfg.compare_seeds.size());
    for (const CompareRow& row : rows)
        out << row.label << ": average " << row.mean_acc_mean << " +- " << row.mean_acc_std << '\n';
    return 0;
}

// ---- oracle / gradcheck ----------------------------------------------------------------------

inline int cmd_oracle(const ExperimentConfig& cfg, std::ostream& out = std::cout) {
    std::filesystem::create_directories(cfg.out_dir);
    save_scm(simpson_fixture(), cfg.out_dir + "/simpson_fixture.scm");
    const auto checks = run_oracle_checks(cfg.seed);
    std::ofstream f(cfg.out_dir + "/oracle_report.txt");
    f << "iernlab-oracle v1\nseed " << cfg.seed << '\n';
    bool all_pass = true;
    for (const OracleCheck& c : checks) {
        const char* tag = c.pass ? "[PASS]" : "[FAIL]";
        out << tag << ' ' << c.name << ": " << c.detail << '\n';
        f << tag << ' ' << c.name << ": " << c.detail << '\n';
        all_pass = all_pass && c.pass;
    }
    return all_pass ? 0 : 1;
}

struct GradCheckEntry {
    std::string term;
    double max_rel_err = 0.0;
};

/// The pinned tiny-model configuration behind `iernlab gradcheck`: every loss
/// term differenced at a generic, well-conditioned point.
inline std::vector<GradCheckEntry> run_gradcheck(std::uint64_t seed, double eps = 1e-4,
                                                 int coords_per_param = 12) {
    ModelShape shape;
    shape.image_h = 4;
    shape.image_w = 4;
    shape.image_c = 1;
    shape.n_emotions = 2;
    shape.n_confounders = 2;
    shape.base_channels = 4;
    IernModel m = make_iern_model(shape, seed);
    Rng rng(derive_seed(seed, "gradcheck-data"));
    Batch b;
    b.x = Tensor({32, 1, 4, 4});
    for (auto& v : b.x.data()) v = rng.uniform(-2.0, 2.0);
    for (int i = 0; i < 32; ++i) {
        b.y_e.push_back(i % 2);
        b.y_c.push_back((i / 2) % 2);
    }
    std::vector<ParamSet*> all;
    for (LayerStack* c : m.components()) all.push_back(&c->params());
    all.push_back(&m.bank_params);
    nudge_params(all, 0.3, derive_seed(seed, "gradcheck-nudge"));

    std::vector<GradCheckEntry> entries;
    auto run = [&](const std::string& term, const std::function<Tensor()>& fn) {
        entries.push_back({term, grad_check(fn, all, eps, coords_per_param, 99)});
    };
    run("loss_e", [&]() {
        AdversarialTerms t = loss_emotion(m, b);
        return add(t.disc, t.gen);
    });
    run("loss_c", [&]() {
        AdversarialTerms t = loss_context(m, b);
        return add(t.disc, t.gen);
    });
    run("loss_r", [&]() { return loss_recon(m, b); });
    run("loss_cb", [&]() { return loss_confounder_builder(m, b); });
    run("loss_cls", [&]() { return loss_classifier(m, b); });
    return entries;
}

inline int cmd_gradcheck(const ExperimentConfig& cfg, std::ostream& out = std::cout) {
    std::filesystem::create_directories(cfg.out_dir);
    const auto entries = run_gradcheck(cfg.seed);
    std::ofstream f(cfg.out_dir + "/gradcheck_report.txt");
    f << "iernlab-gradcheck v1\n";
    double worst = 0.0;
    for (const auto& e : entries) {
        out << e.term << " max_rel_err=" << e.max_rel_err << '\n';
        f << e.term << " max_rel_err=" << e.max_rel_err << '\n';
        worst = std::max(worst, e.max_rel_err);
    }
    out << "worst=" << worst << (worst < 1e-4 ? " (< 1e-4)" : " (FAIL: >= 1e-4)") << '\n';
    return worst < 1e-4 ? 0 : 1;
}

}  // namespace iern
