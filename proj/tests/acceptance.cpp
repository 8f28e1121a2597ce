// Acceptance suite: one process argument per criterion number (default: all).
// Each criterion prints exactly one [PASS]/[FAIL] line; the exit status is the
// number of failed criteria. Multi-run criteria parallelize their independent
// (method, seed) trainings over two workers; every run is internally
// single-threaded and seed-pinned, so results are reproducible.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "iern/runner.hpp"

using namespace iern;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

// pinned seeds for the training-based criteria
const std::vector<std::uint64_t> kToySeeds = {201, 202, 203, 204, 205};
const std::vector<std::uint64_t> kSweepSeeds = {301, 302, 303};

ExperimentConfig acceptance_run_config(const std::string& method, std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.method = method;
    cfg.seed = seed;
    cfg.epochs = 50;
    cfg.lr = 1e-3;
    cfg.eval_every = 2;
    cfg.nwgm_head_epochs = 20;
    return cfg;
}

/// Run fn(i) for i in [0, n) on two workers.
void parallel_for(int n, const std::function<void(int)>& fn) {
    std::mutex mu;
    int next = 0;
    auto worker = [&]() {
        for (;;) {
            int mine;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= n) return;
                mine = next++;
            }
            fn(mine);
        }
    };
    std::thread a(worker), b(worker);
    a.join();
    b.join();
}

// ---- criterion 1: causal-oracle exactness ------------------------------------------

Outcome criterion_oracle() {
    const auto checks = run_oracle_checks(2024, 50, 1000000);
    std::ostringstream os;
    bool pass = true;
    for (const auto& c : checks) {
        pass = pass && c.pass;
        os << c.name << (c.pass ? " ok" : " FAILED") << " (" << c.detail << "); ";
    }
    return {pass, os.str()};
}

// ---- criterion 2: gradient correctness ----------------------------------------------

Outcome criterion_gradcheck() {
    const auto entries = run_gradcheck(51, 1e-4, 1 << 20);  // every coordinate
    double worst = 0.0;
    std::ostringstream os;
    for (const auto& e : entries) {
        worst = std::max(worst, e.max_rel_err);
        os << e.term << "=" << e.max_rel_err << ' ';
    }
    os << "(max over all coordinates, step 1e-4)";
    return {worst < 1e-4, os.str()};
}

// ---- criterion 3: staged freezing contract -------------------------------------------

Outcome criterion_freezing() {
    ModelShape shape;
    shape.image_h = 4;
    shape.image_w = 4;
    shape.image_c = 1;
    shape.n_emotions = 2;
    shape.n_confounders = 2;
    shape.base_channels = 4;
    IernModel m = make_iern_model(shape, 5);
    Rng rng(11);
    Batch b;
    b.x = Tensor({8, 1, 4, 4});
    for (auto& v : b.x.data()) v = rng.uniform(-1.0, 1.0);
    for (int i = 0; i < 8; ++i) {
        b.y_e.push_back(i % 2);
        b.y_c.push_back((i / 2) % 2);
    }

    auto snapshot = [](IernModel& model) {
        std::map<std::string, std::map<std::string, std::vector<double>>> s;
        for (LayerStack* c : model.components()) s[c->name()] = c->params().snapshot();
        s["bank"] = model.bank_params.snapshot();
        return s;
    };
    std::map<char, std::map<std::string, std::map<std::string, std::vector<double>>>> snaps;
    snaps['0'] = snapshot(m);
    IernOptimizers opt(AdamConfig{.lr = 1e-3});
    train_step(m, b, LossWeights{}, opt,
               [&](char stage, IernModel& model) { snaps[stage] = snapshot(model); });

    auto changed = [&](char from, char to) {
        std::set<std::string> out;
        for (const auto& [comp, params] : snaps[from])
            for (const auto& [name, vals] : params)
                if (snaps[to].at(comp).at(name) != vals) out.insert(comp);
        return out;
    };
    const bool ok_a = changed('0', 'a').empty();
    const bool ok_b = changed('a', 'b') == std::set<std::string>{"d_e", "d_c"};
    const bool ok_c = changed('b', 'c') == std::set<std::string>{"g_e", "g_c", "g_r", "bank"};
    const bool ok_d = changed('c', 'd') == std::set<std::string>{"f_c", "g_e", "f_b"};
    std::ostringstream os;
    os << "stage a: " << (ok_a ? "no updates" : "UNEXPECTED updates")
       << "; stage b: {d_e, d_c} " << (ok_b ? "ok" : "VIOLATED")
       << "; stage c: {g_e, g_c, g_r, C} " << (ok_c ? "ok" : "VIOLATED")
       << "; stage d: {f_c, g_e, f_b} " << (ok_d ? "ok" : "VIOLATED");
    return {ok_a && ok_b && ok_c && ok_d, os.str()};
}

// ---- criterion 4: degenerate intervention --------------------------------------------

Outcome criterion_degenerate() {
    ModelShape shape;
    shape.image_h = 8;
    shape.image_w = 8;
    shape.image_c = 1;
    shape.n_emotions = 3;
    shape.n_confounders = 1;
    shape.base_channels = 8;
    IernModel single = make_iern_model(shape, 33);
    Rng rng(7);
    ForwardOpts opt{.training = false, .update_bn_stats = false};
    bool bitwise = true;
    for (int t = 0; t < 100; ++t) {
        Tensor x({8, 8, 1});
        for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);
        const Prediction p = predict(single, x);
        Sample s;
        s.x = x;
        const Batch b = make_batch({s}, {0});
        Tensor e = single.g_e.forward(single.f_b.forward(b.x, opt), opt);
        Tensor center = broadcast_row(single.bank(), 0, 1);
        Tensor logits = single.f_c.forward(single.g_r.forward(e, opt, &center), opt);
        const Tensor probs = softmax(reshape(logits, {3}));
        for (int k = 0; k < 3; ++k)
            bitwise = bitwise && p.probs[static_cast<std::size_t>(k)] == probs.data()[static_cast<std::size_t>(k)];
    }

    // permutation invariance of the classifier objective
    ModelShape shape3 = shape;
    shape3.n_confounders = 3;
    IernModel a = make_iern_model(shape3, 44);
    IernModel b3 = make_iern_model(shape3, 44);
    auto src = a.bank().data();
    auto dst = b3.bank().data();
    const std::size_t row = static_cast<std::size_t>(a.bank().size() / 3);
    for (int i = 0; i < 3; ++i)
        std::copy(src.begin() + i * static_cast<std::ptrdiff_t>(row),
                  src.begin() + (i + 1) * static_cast<std::ptrdiff_t>(row),
                  dst.begin() + ((i + 2) % 3) * static_cast<std::ptrdiff_t>(row));
    Batch batch;
    batch.x = Tensor({6, 1, 8, 8});
    for (auto& v : batch.x.data()) v = rng.uniform(-1.0, 1.0);
    for (int i = 0; i < 6; ++i) {
        batch.y_e.push_back(i % 3);
        batch.y_c.push_back(i % 3);
    }
    const double la = loss_classifier(a, batch).item();
    const double lb = loss_classifier(b3, batch).item();
    const double gap = std::fabs(la - lb);

    std::ostringstream os;
    os << "single-stratum prediction bitwise equal on 100 inputs: " << (bitwise ? "yes" : "NO")
       << "; |loss_cls(perm) - loss_cls| = " << gap;
    return {bitwise && gap <= 1e-9, os.str()};
}

// ---- criterion 5: center fixed point ---------------------------------------------------

Outcome criterion_center_fixed_point() {
    Rng rng(61);
    const int n = 60, dim = 8, strata = 3;
    std::vector<double> feats(static_cast<std::size_t>(n) * dim);
    std::vector<int> y_c(static_cast<std::size_t>(n));
    std::vector<double> means(static_cast<std::size_t>(strata) * dim, 0.0);
    std::vector<int> counts(static_cast<std::size_t>(strata), 0);
    for (int i = 0; i < n; ++i) {
        y_c[static_cast<std::size_t>(i)] = i % strata;
        ++counts[static_cast<std::size_t>(i % strata)];
        for (int k = 0; k < dim; ++k) {
            const double v = rng.uniform(-1.0, 1.0) + 2.0 * (i % strata);
            feats[static_cast<std::size_t>(i) * dim + k] = v;
            means[static_cast<std::size_t>(i % strata) * dim + k] += v;
        }
    }
    for (int j = 0; j < strata; ++j)
        for (int k = 0; k < dim; ++k)
            means[static_cast<std::size_t>(j) * dim + k] /= counts[static_cast<std::size_t>(j)];

    ParamSet bank;
    bank.set_label("bank");
    bank.add("C", Tensor({strata, dim, 1, 1}));
    const Tensor features({n, dim, 1, 1}, feats);
    const int max_count = *std::max_element(counts.begin(), counts.end());
    const double lr = 0.9 * (n * dim) / (2.0 * max_count);
    int steps = 0;
    double worst = 1e9;
    for (; steps < 2000; ++steps) {
        Tensor loss = mse(features, select_rows(bank.at("C"), y_c));
        backward_into(loss, bank);
        auto data = bank.at("C").data();
        auto grad = bank.at("C").grad();
        for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * grad[i];
        worst = 0.0;
        for (std::size_t i = 0; i < means.size(); ++i)
            worst = std::max(worst, std::fabs(data[i] - means[i]));
        if (worst < 1e-3) break;
    }
    std::ostringstream os;
    os << "max |center - stratum mean| = " << worst << " after " << (steps + 1) << " steps";
    return {worst < 1e-3 && steps < 2000, os.str()};
}

// ---- criterion 6: toy-experiment reproduction -------------------------------------------

Outcome criterion_toy_reproduction() {
    struct SeedResult {
        double van_in = 0, van_ood = 0, iern_ood = 0;
    };
    std::vector<SeedResult> results(kToySeeds.size());
    std::vector<std::pair<int, int>> jobs;  // (seed index, 0=baseline 1=iern)
    for (int i = 0; i < static_cast<int>(kToySeeds.size()); ++i) {
        jobs.push_back({i, 0});
        jobs.push_back({i, 1});
    }
    std::mutex mu;
    parallel_for(static_cast<int>(jobs.size()), [&](int j) {
        const auto [si, kind] = jobs[static_cast<std::size_t>(j)];
        const std::uint64_t seed = kToySeeds[static_cast<std::size_t>(si)];
        ExperimentConfig cfg = acceptance_run_config(kind == 0 ? "baseline" : "iern", seed);
        const DataBundle data = load_data(cfg);
        RunResult res = run_method(cfg, data.train, data.eval);
        const double ood = res.eval_report.mean_acc;
        const double indist = evaluate_any(res.model, data.indist).mean_acc;
        std::lock_guard<std::mutex> lock(mu);
        if (kind == 0) {
            results[static_cast<std::size_t>(si)].van_in = indist;
            results[static_cast<std::size_t>(si)].van_ood = ood;
        } else {
            results[static_cast<std::size_t>(si)].iern_ood = ood;
        }
    });
    double van_in = 0, van_ood = 0, iern_ood = 0;
    for (const auto& r : results) {
        van_in += r.van_in / results.size();
        van_ood += r.van_ood / results.size();
        iern_ood += r.iern_ood / results.size();
    }
    const double chance = 1.0 / 6.0;
    const bool ok_fit = van_in >= 0.90;
    const bool ok_collapse = (van_ood - chance) < 0.15;
    const bool ok_gain = (iern_ood - van_ood) >= 0.10;
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << "5-seed means (seeds 201..205): baseline in-dist " << van_in << " (>= 0.90 "
       << (ok_fit ? "ok" : "FAIL") << "), baseline ood " << van_ood << " vs chance " << chance
       << " (margin " << (van_ood - chance) << " < 0.15 " << (ok_collapse ? "ok" : "FAIL")
       << "), intervention ood " << iern_ood << " (gain " << (iern_ood - van_ood)
       << " >= 0.10 " << (ok_gain ? "ok" : "FAIL") << ")";
    return {ok_fit && ok_collapse && ok_gain, os.str()};
}

// ---- criterion 7: method ordering on the moved split --------------------------------------

Outcome criterion_method_ordering() {
    const std::vector<std::string> methods = {"baseline", "disentangle", "resample", "nwgm",
                                              "iern"};
    std::map<std::string, double> mean_acc;
    std::mutex mu;
    std::vector<std::pair<std::string, std::uint64_t>> jobs;
    for (const auto& m : methods)
        for (std::uint64_t s : kToySeeds) jobs.push_back({m, s});
    parallel_for(static_cast<int>(jobs.size()), [&](int j) {
        const auto& [method, seed] = jobs[static_cast<std::size_t>(j)];
        ExperimentConfig cfg = acceptance_run_config(method, seed);
        cfg.move_fraction = 0.1;  // the modified split
        const DataBundle data = load_data(cfg);
        RunResult res = run_method(cfg, data.train, data.eval);
        std::lock_guard<std::mutex> lock(mu);
        mean_acc[method] += res.eval_report.mean_acc / static_cast<double>(kToySeeds.size());
    });
    const double iern = mean_acc["iern"], nwgm = mean_acc["nwgm"], res = mean_acc["resample"],
                 base = mean_acc["baseline"], dis = mean_acc["disentangle"];
    const bool ok1 = iern - nwgm >= 0.03;
    const bool ok2 = iern - res >= 0.03;
    const bool ok3 = iern - base >= 0.03;
    const bool ok4 = dis - base >= 0.02;
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << "5-seed mean ood accuracy on the 10%-moved split: iern " << iern << ", nwgm " << nwgm
       << ", resample " << res << ", baseline " << base << ", disentangle " << dis
       << "; iern-nwgm " << (iern - nwgm) << (ok1 ? " ok" : " FAIL") << ", iern-resample "
       << (iern - res) << (ok2 ? " ok" : " FAIL") << ", iern-baseline " << (iern - base)
       << (ok3 ? " ok" : " FAIL") << ", disentangle-baseline " << (dis - base)
       << (ok4 ? " ok" : " FAIL");
    return {ok1 && ok2 && ok3 && ok4, os.str()};
}

// ---- criterion 8: confounder learnability ---------------------------------------------------

Outcome criterion_confounder_learnability() {
    const std::vector<std::uint64_t> seeds = {201, 202};
    double dc_acc = 0, base_ood = 0;
    std::mutex mu;
    std::vector<std::pair<std::uint64_t, int>> jobs;
    for (std::uint64_t s : seeds) {
        jobs.push_back({s, 0});
        jobs.push_back({s, 1});
    }
    parallel_for(static_cast<int>(jobs.size()), [&](int j) {
        const auto [seed, kind] = jobs[static_cast<std::size_t>(j)];
        ExperimentConfig cfg = acceptance_run_config(kind == 0 ? "disentangle" : "baseline", seed);
        const DataBundle data = load_data(cfg);
        RunResult res = run_method(cfg, data.train, data.eval);
        if (kind == 0) {
            const double dc = evaluate_context_discriminator(*res.model.iern, data.indist).mean_acc;
            std::lock_guard<std::mutex> lock(mu);
            dc_acc += dc / seeds.size();
        } else {
            std::lock_guard<std::mutex> lock(mu);
            base_ood += res.eval_report.mean_acc / seeds.size();
        }
    });
    const bool ok = dc_acc >= 0.85 && base_ood < dc_acc;
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << "stratum accuracy of d_c after disentanglement " << dc_acc
       << " (>= 0.85), same-epoch baseline ood emotion accuracy " << base_ood
       << " (confounder is the easier signal: " << (base_ood < dc_acc ? "yes" : "NO") << ")";
    return {ok, os.str()};
}

// ---- criterion 9: lambda2 sensitivity --------------------------------------------------------

Outcome criterion_lambda2_sweep() {
    const std::vector<double> grid = {1e-6, 1e-4, 5e-4, 1e-3, 1e-2, 1.0};
    std::map<double, double> acc;
    std::mutex mu;
    std::vector<std::pair<double, std::uint64_t>> jobs;
    for (double l2 : grid)
        for (std::uint64_t s : kSweepSeeds) jobs.push_back({l2, s});
    parallel_for(static_cast<int>(jobs.size()), [&](int j) {
        const auto& [l2, seed] = jobs[static_cast<std::size_t>(j)];
        ExperimentConfig cfg = acceptance_run_config("iern", seed);
        cfg.weights.lambda2 = l2;
        const DataBundle data = load_data(cfg);
        RunResult res = run_method(cfg, data.train, data.eval);
        std::lock_guard<std::mutex> lock(mu);
        acc[l2] += res.eval_report.mean_acc / static_cast<double>(kSweepSeeds.size());
    });
    const double at_default = acc[5e-4], at_one = acc[1.0];
    const bool ok = at_default - at_one >= 0.10;
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << "3-seed mean ood accuracy by lambda2:";
    for (double l2 : grid) os << ' ' << l2 << "->" << acc[l2];
    os << "; drop at lambda2=1: " << (at_default - at_one) << " (>= 0.10 "
       << (ok ? "ok" : "FAIL") << ")";
    return {ok, os.str()};
}

// ---- criterion 10: stratum pipeline -----------------------------------------------------------

Outcome criterion_stratum_pipeline() {
    Rng rng(77);
    // synthetic embeddings: 30 clumps on a line, coarse left/right fallback
    std::vector<std::vector<double>> emb;
    std::vector<int> labels;
    for (int c = 0; c < 30; ++c)
        for (int i = 0; i < 10; ++i) {
            emb.push_back({c * 8.0 + rng.uniform(), rng.uniform()});
            labels.push_back(static_cast<int>(rng.uniform_int(2)));
        }
    const StratumAssignment sa = build_strata(
        emb, labels, 2, 30, 8, 2,
        [](const std::vector<double>& center) { return center[0] < 120.0 ? 0 : 1; }, 13);
    const bool ok_count = sa.n_strata == 10;
    bool ok_partition = true;
    for (int s : sa.item_stratum) ok_partition = ok_partition && s >= 0 && s < sa.n_strata;

    // importance against a direct enumeration
    double worst_imp = 0.0;
    {
        Rng ir(5);
        std::vector<std::vector<std::int64_t>> counts;
        for (int c = 0; c < 12; ++c) {
            std::vector<std::int64_t> row;
            for (int e = 0; e < 4; ++e) row.push_back(1 + ir.uniform_int(30));
            counts.push_back(row);
        }
        std::int64_t grand = 0;
        for (const auto& row : counts)
            for (auto v : row) grand += v;
        const auto scores = importance_scores(counts);
        for (std::size_t c = 0; c < counts.size(); ++c) {
            std::int64_t total = 0;
            for (auto v : counts[c]) total += v;
            double expect = 0.0;
            for (auto v : counts[c]) {
                if (v == 0) continue;
                const double p = static_cast<double>(v) / static_cast<double>(total);
                expect += p * std::log(p);
            }
            expect *= static_cast<double>(total) / static_cast<double>(grand);
            worst_imp = std::max(worst_imp, std::fabs(scores[c] - expect));
        }
    }

    // kmeans objective monotonicity over 20 random instances
    bool monotone = true;
    Rng kr(123);
    for (int t = 0; t < 20; ++t) {
        std::vector<std::vector<double>> pts;
        const int n = 30 + static_cast<int>(kr.uniform_int(40));
        for (int i = 0; i < n; ++i) pts.push_back({kr.uniform(), kr.uniform(), kr.uniform()});
        const KmeansResult res = kmeans(pts, 4 + static_cast<int>(kr.uniform_int(4)),
                                        derive_seed(123, static_cast<std::uint64_t>(t)));
        for (std::size_t i = 1; i < res.objective_history.size(); ++i)
            monotone = monotone && res.objective_history[i] <= res.objective_history[i - 1] + 1e-12;
    }

    std::ostringstream os;
    os << "k=30, M=8, 2 fallback groups -> " << sa.n_strata << " strata (partition "
       << (ok_partition ? "ok" : "VIOLATED") << "); importance |impl - enumeration| max = "
       << worst_imp << "; kmeans objective monotone on 20 instances: " << (monotone ? "yes" : "NO");
    return {ok_count && ok_partition && worst_imp <= 1e-12 && monotone, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"causal-oracle exactness", criterion_oracle},
        {"gradient correctness", criterion_gradcheck},
        {"staged freezing contract", criterion_freezing},
        {"degenerate intervention equivalence", criterion_degenerate},
        {"center-loss fixed point", criterion_center_fixed_point},
        {"toy-experiment reproduction", criterion_toy_reproduction},
        {"method ordering on the moved split", criterion_method_ordering},
        {"confounder learnability", criterion_confounder_learnability},
        {"lambda2 sensitivity", criterion_lambda2_sweep},
        {"stratum construction pipeline", criterion_stratum_pipeline},
    };

    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
    if (selected.empty())
        for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) selected.push_back(i);

    int failures = 0;
    for (int n : selected) {
        if (n < 1 || n > static_cast<int>(criteria.size())) {
            std::cerr << "unknown criterion " << n << '\n';
            return 64;
        }
        const auto& [name, fn] = criteria[static_cast<std::size_t>(n - 1)];
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %d: %s — %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", n,
                    name.c_str(), o.detail.c_str(), secs);
        std::fflush(stdout);
        if (!o.pass) ++failures;
    }
    return failures;
}
