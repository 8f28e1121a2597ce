#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <filesystem>
#include <set>

#include "iern/synth.hpp"

using namespace iern;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.height = 8;
    s.width = 8;
    s.channels = 1;
    s.n_emotions = 4;
    s.n_confounders = 3;
    s.cooccurrence = {{2, 1, 0}, {0, 3, 1}, {1, 0, 2}, {2, 2, 2}};
    s.degradations = {Degradation::identity(), Degradation::blur(1.0), Degradation::noise(0.4)};
    s.pattern_seed = 11;
    s.noise_seed = 12;
    return s;
}

double mean_abs_laplacian(const Sample& s, int h, int w) {
    // direct 5-point stencil, independent of the rendering path
    double acc = 0.0;
    int count = 0;
    for (int y = 1; y + 1 < h; ++y)
        for (int x = 1; x + 1 < w; ++x) {
            auto at = [&](int yy, int xx) { return s.x.data()[static_cast<std::size_t>(yy) * w + xx]; };
            acc += std::fabs(4.0 * at(y, x) - at(y - 1, x) - at(y + 1, x) - at(y, x - 1) -
                             at(y, x + 1));
            ++count;
        }
    return acc / count;
}

}  // namespace

TEST_CASE("identity degradation returns the jittered base pattern exactly") {
    SyntheticSpec spec = small_spec();
    Rng p1(42), n1(43), p2(42), n2(43);
    // identity vs zero-sigma noise must agree exactly
    SyntheticSpec spec2 = spec;
    spec2.degradations[2] = Degradation::noise(0.0);
    const Sample a = render_sample(1, 0, spec, p1, n1);
    Sample b = render_sample(1, 2, spec2, p2, n2);
    REQUIRE(a.x.size() == b.x.size());
    for (std::int64_t i = 0; i < a.x.size(); ++i) CHECK(a.x.data()[i] == b.x.data()[i]);
    CHECK(a.y_c == 0);
    CHECK(b.y_c == 2);
    CHECK(b.y_e == 1);
}

TEST_CASE("render_sample rejects out-of-range indices") {
    SyntheticSpec spec = small_spec();
    Rng p(1), n(2);
    CHECK_THROWS_AS(render_sample(-1, 0, spec, p, n), ContractError);
    CHECK_THROWS_AS(render_sample(0, 3, spec, p, n), ContractError);
}

TEST_CASE("blur reduces high-frequency energy") {
    SyntheticSpec spec = small_spec();
    spec.height = 16;
    spec.width = 16;
    spec.degradations[1] = Degradation::blur(2.0);
    Rng p1(7), n1(8), p2(7), n2(8);
    const Sample clean = render_sample(0, 0, spec, p1, n1);
    const Sample blurred = render_sample(0, 1, spec, p2, n2);
    CHECK(mean_abs_laplacian(blurred, 16, 16) < mean_abs_laplacian(clean, 16, 16));
}

TEST_CASE("build_split realizes the co-occurrence matrix exactly") {
    SUBCASE("single occupied cell") {
        SyntheticSpec spec = small_spec();
        spec.cooccurrence = {{0, 0, 0}, {0, 5, 0}, {0, 0, 0}, {0, 0, 0}};
        const ConfoundedDataset ds = build_split(spec, "test");
        CHECK(ds.samples.size() == 5);
        for (const auto& s : ds.samples) {
            CHECK(s.y_e == 1);
            CHECK(s.y_c == 1);
        }
    }
    SUBCASE("random 4x3 matrix") {
        const SyntheticSpec spec = small_spec();
        const ConfoundedDataset ds = build_split(spec);
        const auto counts = ds.cell_counts();
        for (int e = 0; e < 4; ++e)
            for (int c = 0; c < 3; ++c) CHECK(counts[e][c] == spec.cooccurrence[e][c]);
    }
}

TEST_CASE("training spec with an empty emotion row is rejected") {
    SyntheticSpec spec = small_spec();
    spec.cooccurrence[2] = {0, 0, 0};
    CHECK_THROWS_AS(build_split(spec, "train"), ContractError);
    CHECK_NOTHROW(build_split(spec, "test"));
}

TEST_CASE("identical specs give bitwise identical datasets") {
    const SyntheticSpec spec = small_spec();
    const ConfoundedDataset a = build_split(spec);
    const ConfoundedDataset b = build_split(spec);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].y_e == b.samples[i].y_e);
        CHECK(a.samples[i].y_c == b.samples[i].y_c);
        const auto da = a.samples[i].x.data();
        const auto db = b.samples[i].x.data();
        bool same = true;
        for (std::size_t k = 0; k < da.size(); ++k) same = same && da[k] == db[k];
        CHECK(same);
    }
    SyntheticSpec other = spec;
    other.noise_seed = 999;
    const ConfoundedDataset c = build_split(other);
    bool all_same = true;
    for (std::size_t i = 0; i < a.samples.size() && all_same; ++i)
        for (std::size_t k = 0; k < static_cast<std::size_t>(a.samples[i].x.size()); ++k)
            all_same = all_same && a.samples[i].x.data()[k] == c.samples[i].x.data()[k];
    CHECK(!all_same);
}

TEST_CASE("toy benchmark train and ood supports are disjoint") {
    const ToyBenchmark tb = default_toy_benchmark(5);
    for (int e = 0; e < 6; ++e)
        for (int c = 0; c < 3; ++c) {
            const bool in_train = tb.train_spec.cooccurrence[e][c] > 0;
            const bool in_ood = tb.ood_spec.cooccurrence[e][c] > 0;
            CHECK(!(in_train && in_ood));
        }
    // every emotion still appears in both
    for (int e = 0; e < 6; ++e) {
        int tr = 0, te = 0;
        for (int c = 0; c < 3; ++c) {
            tr += tb.train_spec.cooccurrence[e][c];
            te += tb.ood_spec.cooccurrence[e][c];
        }
        CHECK(tr > 0);
        CHECK(te > 0);
    }
}

TEST_CASE("make_threefold selects the plan's cells") {
    // three sources, each rendered with its own degradation across all emotions
    std::vector<ConfoundedDataset> sources;
    for (int src = 0; src < 3; ++src) {
        SyntheticSpec spec;
        spec.height = 8;
        spec.width = 8;
        spec.n_emotions = 6;
        spec.n_confounders = 3;
        spec.degradations = {Degradation::identity(), Degradation::blur(1.2),
                             Degradation::noise(0.5)};
        spec.pattern_seed = 100 + static_cast<std::uint64_t>(src);
        spec.noise_seed = 200 + static_cast<std::uint64_t>(src);
        spec.cooccurrence.assign(6, std::vector<int>(3, 0));
        for (int e = 0; e < 6; ++e) spec.cooccurrence[e][src] = 4;  // y_c == source id
        sources.push_back(build_split(spec));
    }
    const FoldPlan plan = FoldPlan::canonical_threefold();

    auto [train1, test1] = make_threefold(sources, plan, 1);
    // fold 1 tests: source0 {anger=0, happiness=3}, source1 {disgust=1, sadness=4},
    // source2 {fear=2, surprise=5}
    std::set<std::pair<int, int>> expected = {{0, 0}, {3, 0}, {1, 1}, {4, 1}, {2, 2}, {5, 2}};
    std::set<std::pair<int, int>> got;
    for (const auto& s : test1.samples) got.insert({s.y_e, s.y_c});
    CHECK(got == expected);
    CHECK(test1.samples.size() == 6 * 4);
    CHECK(train1.samples.size() == 12 * 4);

    SUBCASE("folds partition the cells with no overlap") {
        std::set<std::pair<int, int>> all_test_cells;
        std::size_t total = 0;
        for (int fold = 1; fold <= 3; ++fold) {
            auto [tr, te] = make_threefold(sources, plan, fold);
            total += te.samples.size();
            std::set<std::pair<int, int>> fold_cells;
            for (const auto& s : te.samples) fold_cells.insert({s.y_e, s.y_c});
            // cells never split between train and test within a fold
            for (const auto& s : tr.samples) CHECK(!fold_cells.count({s.y_e, s.y_c}));
            for (const auto& cell : fold_cells) {
                CHECK(!all_test_cells.count(cell));  // each cell tested in exactly one fold
                all_test_cells.insert(cell);
            }
        }
        CHECK(total == 18 * 4);
        CHECK(all_test_cells.size() == 18);  // the union covers every cell
    }

    SUBCASE("fold index outside the plan is rejected") {
        CHECK_THROWS_AS(make_threefold(sources, plan, 4), ContractError);
        CHECK_THROWS_AS(make_threefold(sources, plan, 0), ContractError);
    }

    SUBCASE("degenerate all-test plan is rejected") {
        FoldPlan degenerate{{std::vector<int>(6, 1), std::vector<int>(6, 1), std::vector<int>(6, 1)}};
        CHECK_THROWS_AS(make_threefold(sources, degenerate, 1), ContractError);
    }
}

TEST_CASE("move_fraction moves floor(fraction * cell) and conserves totals") {
    SyntheticSpec spec = small_spec();
    spec.cooccurrence = {{30, 0, 0}, {0, 30, 0}, {0, 0, 30}, {10, 10, 10}};
    const ConfoundedDataset test = build_split(spec, "test");
    SyntheticSpec tr_spec = small_spec();
    const ConfoundedDataset train = build_split(tr_spec);
    const std::size_t total = train.samples.size() + test.samples.size();

    SUBCASE("fraction zero is the identity") {
        Rng rng(3);
        auto [tr2, te2] = move_fraction(train, test, 0.0, rng);
        CHECK(tr2.samples.size() == train.samples.size());
        CHECK(te2.samples.size() == test.samples.size());
    }

    SUBCASE("ten percent of a 30-sample cell is 3 samples") {
        Rng rng(3);
        auto [tr2, te2] = move_fraction(train, test, 0.1, rng);
        const auto counts = te2.cell_counts();
        CHECK(counts[0][0] == 27);
        CHECK(counts[1][1] == 27);
        CHECK(counts[2][2] == 27);
        CHECK(counts[3][0] == 9);  // floor(0.1 * 10) = 1 moved
        CHECK(tr2.samples.size() + te2.samples.size() == total);
    }

    SUBCASE("totals conserved for any fraction") {
        for (double f : {0.05, 0.25, 0.5, 0.9}) {
            Rng rng(17);
            auto [tr2, te2] = move_fraction(train, test, f, rng);
            CHECK(tr2.samples.size() + te2.samples.size() == total);
        }
    }

    SUBCASE("invalid fraction rejected") {
        Rng rng(1);
        CHECK_THROWS_AS(move_fraction(train, test, 1.0, rng), ContractError);
        CHECK_THROWS_AS(move_fraction(train, test, -0.1, rng), ContractError);
    }
}

TEST_CASE("dataset files round-trip bit-exactly") {
    const SyntheticSpec spec = small_spec();
    const ConfoundedDataset ds = build_split(spec);
    save_dataset(ds, "synth_rt");
    const ConfoundedDataset loaded = load_dataset("synth_rt");
    REQUIRE(loaded.samples.size() == ds.samples.size());
    CHECK(loaded.split_tag == ds.split_tag);
    CHECK(loaded.spec.n_emotions == spec.n_emotions);
    CHECK(loaded.spec.degradations[1].sigma == spec.degradations[1].sigma);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(loaded.samples[i].y_e == ds.samples[i].y_e);
        CHECK(loaded.samples[i].y_c == ds.samples[i].y_c);
        bool same = true;
        for (std::size_t k = 0; k < static_cast<std::size_t>(ds.samples[i].x.size()); ++k)
            same = same && loaded.samples[i].x.data()[k] == ds.samples[i].x.data()[k];
        CHECK(same);  // render quantizes through f32, so the round trip is exact
    }
    // saving the loaded dataset reproduces identical bytes (same basename, new dir)
    std::filesystem::create_directories("synth_rt_copy");
    save_dataset(loaded, "synth_rt_copy/synth_rt");
    for (const char* ext : {".manifest", ".bin"}) {
        std::ifstream a(std::string("synth_rt") + ext, std::ios::binary);
        std::ifstream b(std::string("synth_rt_copy/synth_rt") + ext, std::ios::binary);
        std::string ca((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string cb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(ca == cb);
    }
    std::remove("synth_rt.manifest");
    std::remove("synth_rt.bin");
    std::filesystem::remove_all("synth_rt_copy");
}
