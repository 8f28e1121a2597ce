#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "iern/rng.hpp"
#include "iern/tensor.hpp"

// Synthetic confounded benchmark: class-characteristic geometric patterns
// (the "emotion") rendered under per-stratum degradation operators (the
// confounder), with full control over the (emotion x confounder) co-occurrence
// table. Out-of-distribution splits are expressed as train/test specs with
// disjoint supported cells.

namespace iern {

// ---- spec types -----------------------------------------------------------------

struct Degradation {
    enum class Kind { Identity, Blur, Noise, Tint };
    Kind kind = Kind::Identity;
    double sigma = 0.0;                       // blur width / noise stddev
    std::array<double, 3> tint{0.0, 0.0, 0.0};  // per-channel offset

    static Degradation identity() { return {}; }
    static Degradation blur(double sigma) { return {Kind::Blur, sigma, {}}; }
    static Degradation noise(double sigma) { return {Kind::Noise, sigma, {}}; }
    static Degradation make_tint(std::array<double, 3> t) { return {Kind::Tint, 0.0, t}; }
};

struct SyntheticSpec {
    int height = 16, width = 16, channels = 1;
    int n_emotions = 6;
    int n_confounders = 3;
    std::vector<std::vector<int>> cooccurrence;  // [n_emotions][n_confounders] counts
    std::vector<Degradation> degradations;       // one per confounder
    std::uint64_t pattern_seed = 1;
    std::uint64_t noise_seed = 2;

    void validate(bool training_spec) const {
        if (height < 4 || width < 4 || channels < 1)
            throw ContractError("SyntheticSpec: image size too small");
        if (n_emotions < 1 || n_confounders < 1)
            throw ContractError("SyntheticSpec: class counts must be positive");
        if (static_cast<int>(cooccurrence.size()) != n_emotions)
            throw ContractError("SyntheticSpec: co-occurrence rows != n_emotions");
        for (const auto& row : cooccurrence) {
            if (static_cast<int>(row.size()) != n_confounders)
                throw ContractError("SyntheticSpec: co-occurrence cols != n_confounders");
            for (int v : row)
                if (v < 0) throw ContractError("SyntheticSpec: negative cell count");
        }
        if (static_cast<int>(degradations.size()) != n_confounders)
            throw ContractError("SyntheticSpec: degradations list length != n_confounders");
        if (training_spec) {
            for (int e = 0; e < n_emotions; ++e) {
                int total = 0;
                for (int c = 0; c < n_confounders; ++c) total += cooccurrence[static_cast<std::size_t>(e)][static_cast<std::size_t>(c)];
                if (total == 0)
                    throw ContractError("SyntheticSpec: emotion " + std::to_string(e) +
                                        " has no samples in a training spec");
            }
        }
    }
};

struct Sample {
    Tensor x;   // [H, W, C] row-major
    int y_e = 0;
    int y_c = 0;
};

struct ConfoundedDataset {
    std::vector<Sample> samples;
    SyntheticSpec spec;
    std::string split_tag = "train";  // "train" | "test"

    std::vector<std::vector<int>> cell_counts() const {
        std::vector<std::vector<int>> counts(static_cast<std::size_t>(spec.n_emotions),
                                             std::vector<int>(static_cast<std::size_t>(spec.n_confounders), 0));
        for (const auto& s : samples) ++counts[static_cast<std::size_t>(s.y_e)][static_cast<std::size_t>(s.y_c)];
        return counts;
    }

    /// Re-derive spec.cooccurrence from the realized samples (after moves,
    /// merges or resampling) so the counts invariant keeps holding.
    void refresh_cooccurrence() { spec.cooccurrence = cell_counts(); }
};

// ---- rendering --------------------------------------------------------------------

namespace detail {

/// Class templates with a per-sample thickness/size perturbation so no two
/// draws of a cell are near-duplicates.
inline double pattern_value(int emotion, int y, int x, int h, int w, int thick_delta) {
    const int cy = h / 2, cx = w / 2;
    const int band = std::max(1, h / 8 + thick_delta);
    switch (emotion % 6) {
        case 0:  // horizontal bar
            return (std::abs(y - cy) <= band) ? 1.0 : 0.0;
        case 1:  // vertical bar
            return (std::abs(x - cx) <= band) ? 1.0 : 0.0;
        case 2:  // main diagonal band
            return (std::abs((y * w) / h - x) <= band) ? 1.0 : 0.0;
        case 3:  // anti-diagonal band
            return (std::abs((y * w) / h - (w - 1 - x)) <= band) ? 1.0 : 0.0;
        case 4: {  // filled disk
            const double dy = y - cy + 0.5, dx = x - cx + 0.5;
            return (dy * dy + dx * dx <= (h * w) / 10.0 + thick_delta * h) ? 1.0 : 0.0;
        }
        default: {  // hollow frame
            const int margin = std::max(1, h / 4 - thick_delta);
            const int width = std::max(1, h / 8);
            const bool on_border =
                (y >= margin && y < h - margin && x >= margin && x < w - margin) &&
                !(y >= margin + width && y < h - margin - width && x >= margin + width &&
                  x < w - margin - width);
            return on_border ? 1.0 : 0.0;
        }
    }
}

inline void apply_blur(std::vector<double>& img, int h, int w, int c, double sigma) {
    if (sigma <= 0.0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += k[static_cast<std::size_t>(i + radius)];
    }
    for (auto& v : k) v /= ksum;
    // separable pass with edge renormalization
    std::vector<double> tmp(img.size());
    auto at = [&](const std::vector<double>& a, int y, int x, int ch) -> double {
        return a[(static_cast<std::size_t>(y) * w + x) * c + ch];
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0, wsum = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int xx = x + i;
                    if (xx < 0 || xx >= w) continue;
                    s += k[static_cast<std::size_t>(i + radius)] * at(img, y, xx, ch);
                    wsum += k[static_cast<std::size_t>(i + radius)];
                }
                tmp[(static_cast<std::size_t>(y) * w + x) * c + ch] = s / wsum;
            }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0, wsum = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int yy = y + i;
                    if (yy < 0 || yy >= h) continue;
                    s += k[static_cast<std::size_t>(i + radius)] * at(tmp, yy, x, ch);
                    wsum += k[static_cast<std::size_t>(i + radius)];
                }
                img[(static_cast<std::size_t>(y) * w + x) * c + ch] = s / wsum;
            }
}

inline double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace detail

/// Draw one sample: the emotion's template with positional/amplitude jitter
/// (pattern_rng), then the confounder's degradation operator (noise_rng).
/// Pixel values are rounded through 32-bit floats so in-memory data matches
/// the serialized form exactly.
inline Sample render_sample(int emotion, int confounder, const SyntheticSpec& spec,
                            Rng& pattern_rng, Rng& noise_rng) {
    if (emotion < 0 || emotion >= spec.n_emotions)
        throw ContractError("render_sample: emotion index out of range");
    if (confounder < 0 || confounder >= spec.n_confounders)
        throw ContractError("render_sample: confounder index out of range");
    const int h = spec.height, w = spec.width, c = spec.channels;

    const int shift_y = static_cast<int>(pattern_rng.uniform_int(7)) - 3;
    const int shift_x = static_cast<int>(pattern_rng.uniform_int(7)) - 3;
    const double amplitude = pattern_rng.uniform(0.55, 1.0);
    const int thick_delta = static_cast<int>(pattern_rng.uniform_int(3)) - 1;

    std::vector<double> img(static_cast<std::size_t>(h) * w * c, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            // toroidal shift keeps template mass independent of the jitter
            const int sy = ((y - shift_y) % h + h) % h;
            const int sx = ((x - shift_x) % w + w) % w;
            const double v = amplitude * detail::pattern_value(emotion, sy, sx, h, w, thick_delta);
            for (int ch = 0; ch < c; ++ch) img[(static_cast<std::size_t>(y) * w + x) * c + ch] = v;
        }

    const Degradation& deg = spec.degradations[static_cast<std::size_t>(confounder)];
    switch (deg.kind) {
        case Degradation::Kind::Identity:
            break;
        case Degradation::Kind::Blur:
            detail::apply_blur(img, h, w, c, deg.sigma);
            break;
        case Degradation::Kind::Noise:
            if (deg.sigma > 0.0)
                for (auto& v : img) v += noise_rng.normal(0.0, deg.sigma);
            break;
        case Degradation::Kind::Tint:
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int ch = 0; ch < c; ++ch)
                        img[(static_cast<std::size_t>(y) * w + x) * c + ch] += deg.tint[static_cast<std::size_t>(ch % 3)];
            break;
    }

    for (auto& v : img) v = detail::quantize_f32(v);
    Sample s;
    s.x = Tensor({h, w, c}, std::move(img));
    s.y_e = emotion;
    s.y_c = confounder;
    return s;
}

/// Deterministic dataset realization: exactly cooccurrence[e][c] samples per
/// cell. Every sample has its own (cell, index)-derived streams, so assembly
/// order never affects content.
inline ConfoundedDataset build_split(const SyntheticSpec& spec, const std::string& split_tag = "train") {
    spec.validate(split_tag == "train");
    ConfoundedDataset ds;
    ds.spec = spec;
    ds.split_tag = split_tag;
    for (int e = 0; e < spec.n_emotions; ++e)
        for (int c = 0; c < spec.n_confounders; ++c) {
            const int count = spec.cooccurrence[static_cast<std::size_t>(e)][static_cast<std::size_t>(c)];
            for (int i = 0; i < count; ++i) {
                Rng prng(derive_seed(spec.pattern_seed, static_cast<std::uint64_t>(e),
                                     static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)));
                Rng nrng(derive_seed(spec.noise_seed, static_cast<std::uint64_t>(e),
                                     static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)));
                ds.samples.push_back(render_sample(e, c, spec, prng, nrng));
            }
        }
    return ds;
}

// ---- three-fold mixed-source protocol ------------------------------------------------

/// fold index per (source dataset, emotion) cell, values in 1..n_folds.
struct FoldPlan {
    std::vector<std::vector<int>> assignment;  // [n_datasets][n_emotions]

    int n_datasets() const { return static_cast<int>(assignment.size()); }
    int n_emotions() const {
        return assignment.empty() ? 0 : static_cast<int>(assignment[0].size());
    }
    int max_fold() const {
        int m = 0;
        for (const auto& row : assignment)
            for (int v : row) m = std::max(m, v);
        return m;
    }

    /// The rotation used by the mixed-source protocol: three sources, six
    /// classes, each (source, emotion) cell tested in exactly one fold.
    static FoldPlan canonical_threefold() {
        return FoldPlan{{
            {1, 2, 3, 1, 2, 3},
            {3, 1, 2, 3, 1, 2},
            {2, 3, 1, 2, 3, 1},
        }};
    }
};

/// Split per-source datasets into (train, test) for one fold: test gets every
/// (source, emotion) cell whose plan entry equals `fold`, train the rest.
inline std::pair<ConfoundedDataset, ConfoundedDataset> make_threefold(
    const std::vector<ConfoundedDataset>& datasets, const FoldPlan& plan, int fold) {
    if (static_cast<int>(datasets.size()) != plan.n_datasets())
        throw ContractError("make_threefold: dataset count does not match the plan");
    if (fold < 1 || fold > plan.max_fold())
        throw ContractError("make_threefold: fold index outside plan values");
    ConfoundedDataset train, test;
    for (std::size_t di = 0; di < datasets.size(); ++di) {
        const ConfoundedDataset& ds = datasets[di];
        if (ds.spec.n_emotions != plan.n_emotions())
            throw ContractError("make_threefold: emotion count does not match the plan");
        for (const Sample& s : ds.samples) {
            if (plan.assignment[di][static_cast<std::size_t>(s.y_e)] == fold)
                test.samples.push_back(s);
            else
                train.samples.push_back(s);
        }
    }
    if (!datasets.empty()) {
        train.spec = datasets[0].spec;
        test.spec = datasets[0].spec;
    }
    train.split_tag = "train";
    test.split_tag = "test";
    if (train.samples.empty())
        throw ContractError("make_threefold: degenerate fold, training set is empty");
    train.refresh_cooccurrence();
    test.refresh_cooccurrence();
    return {train, test};
}

/// Move floor(fraction * cell size) samples per (emotion, confounder) test
/// cell into the training set; deterministic under the rng seed.
inline std::pair<ConfoundedDataset, ConfoundedDataset> move_fraction(const ConfoundedDataset& train,
                                                                     const ConfoundedDataset& test,
                                                                     double fraction, Rng& rng) {
    if (fraction < 0.0 || fraction >= 1.0)
        throw ContractError("move_fraction: fraction must lie in [0, 1)");
    ConfoundedDataset tr = train, te = test;
    if (fraction == 0.0) return {tr, te};

    std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < te.samples.size(); ++i)
        cells[{te.samples[i].y_e, te.samples[i].y_c}].push_back(i);

    std::vector<bool> moved(te.samples.size(), false);
    for (auto& [cell, idxs] : cells) {
        const auto k = static_cast<std::size_t>(fraction * static_cast<double>(idxs.size()));
        // partial Fisher-Yates draw of k distinct members
        std::vector<std::size_t> pool = idxs;
        for (std::size_t j = 0; j < k; ++j) {
            const auto pick = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(pool.size() - j))) + j;
            std::swap(pool[j], pool[pick]);
            moved[pool[j]] = true;
        }
    }
    std::vector<Sample> remaining;
    for (std::size_t i = 0; i < te.samples.size(); ++i) {
        if (moved[i])
            tr.samples.push_back(te.samples[i]);
        else
            remaining.push_back(te.samples[i]);
    }
    te.samples = std::move(remaining);
    tr.refresh_cooccurrence();
    te.refresh_cooccurrence();
    return {tr, te};
}

// ---- dataset serialization --------------------------------------------------------
// Manifest: structured text (spec, counts, seeds, format version). Blob: all
// sample arrays as 32-bit little-endian floats in manifest order, then y_e and
// y_c as 32-bit little-endian integers.

namespace detail {

inline void write_f32_le(std::ofstream& f, float v) {
    static_assert(sizeof(float) == 4);
    unsigned char b[4];
    std::memcpy(b, &v, 4);
    // this code targets little-endian hosts; bytes go out as stored
    f.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_i32_le(std::ofstream& f, std::int32_t v) {
    unsigned char b[4];
    std::memcpy(b, &v, 4);
    f.write(reinterpret_cast<const char*>(b), 4);
}

inline const char* degradation_name(Degradation::Kind k) {
    switch (k) {
        case Degradation::Kind::Identity: return "identity";
        case Degradation::Kind::Blur: return "blur";
        case Degradation::Kind::Noise: return "noise";
        case Degradation::Kind::Tint: return "tint";
    }
    return "identity";
}

inline Degradation::Kind degradation_from_name(const std::string& s) {
    if (s == "identity") return Degradation::Kind::Identity;
    if (s == "blur") return Degradation::Kind::Blur;
    if (s == "noise") return Degradation::Kind::Noise;
    if (s == "tint") return Degradation::Kind::Tint;
    throw IoError("unknown degradation kind: " + s);
}

}  // namespace detail

inline void save_dataset(const ConfoundedDataset& ds, const std::string& stem) {
    const std::string manifest_path = stem + ".manifest";
    const std::string blob_path = stem + ".bin";
    std::ofstream mf(manifest_path);
    if (!mf) throw IoError("save_dataset: cannot open " + manifest_path);
    mf.precision(17);
    mf << "iern-dataset v1\n";
    mf << "split " << ds.split_tag << '\n';
    mf << "image " << ds.spec.height << ' ' << ds.spec.width << ' ' << ds.spec.channels << '\n';
    mf << "classes " << ds.spec.n_emotions << ' ' << ds.spec.n_confounders << '\n';
    mf << "seeds " << ds.spec.pattern_seed << ' ' << ds.spec.noise_seed << '\n';
    mf << "degradations";
    for (const auto& d : ds.spec.degradations)
        mf << ' ' << detail::degradation_name(d.kind) << ':' << d.sigma << ':' << d.tint[0] << ':'
           << d.tint[1] << ':' << d.tint[2];
    mf << '\n';
    mf << "cooccurrence\n";
    for (const auto& row : ds.spec.cooccurrence) {
        for (int v : row) mf << v << ' ';
        mf << '\n';
    }
    mf << "samples " << ds.samples.size() << '\n';
    mf << "blob " << blob_path.substr(blob_path.find_last_of('/') + 1) << '\n';
    if (!mf) throw IoError("save_dataset: write failed for " + manifest_path);

    std::ofstream bf(blob_path, std::ios::binary);
    if (!bf) throw IoError("save_dataset: cannot open " + blob_path);
    for (const Sample& s : ds.samples)
        for (double v : s.x.data()) detail::write_f32_le(bf, static_cast<float>(v));
    for (const Sample& s : ds.samples) detail::write_i32_le(bf, s.y_e);
    for (const Sample& s : ds.samples) detail::write_i32_le(bf, s.y_c);
    if (!bf) throw IoError("save_dataset: write failed for " + blob_path);
}

inline ConfoundedDataset load_dataset(const std::string& stem) {
    const std::string manifest_path = stem + ".manifest";
    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("load_dataset: cannot open " + manifest_path);
    std::string magic, version;
    mf >> magic >> version;
    if (magic != "iern-dataset" || version != "v1")
        throw IoError("load_dataset: unrecognized header in " + manifest_path);

    ConfoundedDataset ds;
    std::string key;
    std::size_t n_samples = 0;
    std::string blob_name;
    while (mf >> key) {
        if (key == "split") {
            mf >> ds.split_tag;
        } else if (key == "image") {
            mf >> ds.spec.height >> ds.spec.width >> ds.spec.channels;
        } else if (key == "classes") {
            mf >> ds.spec.n_emotions >> ds.spec.n_confounders;
        } else if (key == "seeds") {
            mf >> ds.spec.pattern_seed >> ds.spec.noise_seed;
        } else if (key == "degradations") {
            ds.spec.degradations.clear();
            for (int i = 0; i < ds.spec.n_confounders; ++i) {
                std::string tok;
                mf >> tok;
                Degradation d;
                std::replace(tok.begin(), tok.end(), ':', ' ');
                std::istringstream is(tok);
                std::string kind;
                is >> kind >> d.sigma >> d.tint[0] >> d.tint[1] >> d.tint[2];
                d.kind = detail::degradation_from_name(kind);
                ds.spec.degradations.push_back(d);
            }
        } else if (key == "cooccurrence") {
            ds.spec.cooccurrence.assign(static_cast<std::size_t>(ds.spec.n_emotions),
                                        std::vector<int>(static_cast<std::size_t>(ds.spec.n_confounders)));
            for (auto& row : ds.spec.cooccurrence)
                for (auto& v : row) mf >> v;
        } else if (key == "samples") {
            mf >> n_samples;
        } else if (key == "blob") {
            mf >> blob_name;
        } else {
            throw IoError("load_dataset: unknown manifest key " + key);
        }
    }

    const auto slash = stem.find_last_of('/');
    const std::string dir = slash == std::string::npos ? "" : stem.substr(0, slash + 1);
    std::ifstream bf(dir + blob_name, std::ios::binary);
    if (!bf) throw IoError("load_dataset: cannot open blob " + dir + blob_name);
    const std::size_t pixels =
        static_cast<std::size_t>(ds.spec.height) * ds.spec.width * ds.spec.channels;
    std::vector<float> fbuf(pixels);
    ds.samples.resize(n_samples);
    for (auto& s : ds.samples) {
        bf.read(reinterpret_cast<char*>(fbuf.data()), static_cast<std::streamsize>(pixels * 4));
        std::vector<double> img(pixels);
        for (std::size_t i = 0; i < pixels; ++i) img[i] = static_cast<double>(fbuf[i]);
        s.x = Tensor({ds.spec.height, ds.spec.width, ds.spec.channels}, std::move(img));
    }
    std::vector<std::int32_t> labels(n_samples);
    bf.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(n_samples * 4));
    for (std::size_t i = 0; i < n_samples; ++i) ds.samples[i].y_e = labels[i];
    bf.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(n_samples * 4));
    for (std::size_t i = 0; i < n_samples; ++i) ds.samples[i].y_c = labels[i];
    if (!bf) throw IoError("load_dataset: blob truncated");
    return ds;
}

// ---- default toy benchmark -----------------------------------------------------------

/// Complementary-cells toy. Strata: 0 = clean, 1 = blur, 2 = noise. Every
/// emotion trains clean plus under one parity-assigned degradation and is
/// tested only under the other one, so every test cell pairs a pattern with a
/// degradation never seen together in training, while each degradation is
/// seen in training on the complementary half of the classes.
struct ToyBenchmark {
    SyntheticSpec train_spec;
    SyntheticSpec indist_spec;  // same support as train, fresh seeds
    SyntheticSpec ood_spec;     // the complementary held-out cells
};

inline ToyBenchmark default_toy_benchmark(std::uint64_t seed, int per_cell_train = 40,
                                          int per_cell_test = 20) {
    SyntheticSpec base;
    base.height = 16;
    base.width = 16;
    base.channels = 1;
    base.n_emotions = 6;
    base.n_confounders = 3;
    base.degradations = {Degradation::identity(), Degradation::blur(2.0),
                         Degradation::noise(1.0)};

    auto train_stratum = [](int e) { return e % 2 == 0 ? 1 : 2; };
    auto test_stratum = [](int e) { return e % 2 == 0 ? 2 : 1; };

    ToyBenchmark tb;
    tb.train_spec = base;
    tb.train_spec.pattern_seed = derive_seed(seed, "toy-train-pattern");
    tb.train_spec.noise_seed = derive_seed(seed, "toy-train-noise");
    tb.train_spec.cooccurrence.assign(6, std::vector<int>(3, 0));
    for (int e = 0; e < 6; ++e) {
        tb.train_spec.cooccurrence[static_cast<std::size_t>(e)][0] = per_cell_train;
        tb.train_spec.cooccurrence[static_cast<std::size_t>(e)][static_cast<std::size_t>(train_stratum(e))] = per_cell_train;
    }

    tb.indist_spec = tb.train_spec;
    tb.indist_spec.pattern_seed = derive_seed(seed, "toy-indist-pattern");
    tb.indist_spec.noise_seed = derive_seed(seed, "toy-indist-noise");
    tb.indist_spec.cooccurrence.assign(6, std::vector<int>(3, 0));
    for (int e = 0; e < 6; ++e) {
        tb.indist_spec.cooccurrence[static_cast<std::size_t>(e)][0] = per_cell_test / 2;
        tb.indist_spec.cooccurrence[static_cast<std::size_t>(e)][static_cast<std::size_t>(train_stratum(e))] = per_cell_test / 2;
    }

    tb.ood_spec = base;
    tb.ood_spec.pattern_seed = derive_seed(seed, "toy-ood-pattern");
    tb.ood_spec.noise_seed = derive_seed(seed, "toy-ood-noise");
    tb.ood_spec.cooccurrence.assign(6, std::vector<int>(3, 0));
    for (int e = 0; e < 6; ++e)
        tb.ood_spec.cooccurrence[static_cast<std::size_t>(e)][static_cast<std::size_t>(test_stratum(e))] = per_cell_test;
    return tb;
}

}  // namespace iern
