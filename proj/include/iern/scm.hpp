#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "iern/error.hpp"
#include "iern/ops.hpp"
#include "iern/rng.hpp"

// Exact finite-domain structural causal model over (D, X, Y) with D -> X,
// D -> Y, X -> Y. Ground truth for the intervention machinery: the
// observational conditional mixes strata by P(d|x), the interventional
// distribution mixes them by the marginal P(d).

namespace iern {

struct DiscreteSCM {
    std::vector<double> p_d;                                    // [n_d]
    std::vector<std::vector<double>> p_x_given_d;               // [n_d][n_x]
    std::vector<std::vector<std::vector<double>>> p_y_given_xd; // [n_x][n_d][n_y]

    int n_d() const { return static_cast<int>(p_d.size()); }
    int n_x() const { return n_d() > 0 ? static_cast<int>(p_x_given_d[0].size()) : 0; }
    int n_y() const {
        return (n_x() > 0 && n_d() > 0) ? static_cast<int>(p_y_given_xd[0][0].size()) : 0;
    }

    void validate(double tol = 1e-12) const {
        auto check_row = [tol](const std::vector<double>& row, const char* what) {
            double s = 0.0;
            for (double v : row) {
                if (!(v >= 0.0)) throw ContractError(std::string(what) + ": negative probability");
                s += v;
            }
            if (std::fabs(s - 1.0) > tol)
                throw ContractError(std::string(what) + ": row does not sum to 1");
        };
        if (p_d.empty()) throw ContractError("scm: empty P(D)");
        check_row(p_d, "P(D)");
        if (static_cast<int>(p_x_given_d.size()) != n_d())
            throw ContractError("scm: P(X|D) row count mismatch");
        for (const auto& row : p_x_given_d) {
            if (static_cast<int>(row.size()) != n_x())
                throw ContractError("scm: ragged P(X|D)");
            check_row(row, "P(X|D)");
        }
        if (static_cast<int>(p_y_given_xd.size()) != n_x())
            throw ContractError("scm: P(Y|X,D) x-dimension mismatch");
        for (const auto& block : p_y_given_xd) {
            if (static_cast<int>(block.size()) != n_d())
                throw ContractError("scm: P(Y|X,D) d-dimension mismatch");
            for (const auto& row : block) {
                if (static_cast<int>(row.size()) != n_y())
                    throw ContractError("scm: ragged P(Y|X,D)");
                check_row(row, "P(Y|X,D)");
            }
        }
    }
};

/// Observational P(Y | X = x) = sum_d P(Y|x,d) P(d|x), with P(d|x) by Bayes.
inline std::vector<double> conditional(const DiscreteSCM& scm, int x) {
    if (x < 0 || x >= scm.n_x()) throw ContractError("conditional: x out of range");
    double px = 0.0;
    for (int d = 0; d < scm.n_d(); ++d) px += scm.p_d[static_cast<std::size_t>(d)] * scm.p_x_given_d[static_cast<std::size_t>(d)][static_cast<std::size_t>(x)];
    if (px <= 0.0) throw ContractError("conditional: P(X=x) is zero, conditional undefined");
    std::vector<double> out(static_cast<std::size_t>(scm.n_y()), 0.0);
    for (int d = 0; d < scm.n_d(); ++d) {
        const double pdx = scm.p_d[static_cast<std::size_t>(d)] * scm.p_x_given_d[static_cast<std::size_t>(d)][static_cast<std::size_t>(x)] / px;
        for (int y = 0; y < scm.n_y(); ++y)
            out[static_cast<std::size_t>(y)] += scm.p_y_given_xd[static_cast<std::size_t>(x)][static_cast<std::size_t>(d)][static_cast<std::size_t>(y)] * pdx;
    }
    return out;
}

/// Interventional P(Y | do(X = x)) = sum_d P(Y|x,d) P(d).
inline std::vector<double> backdoor(const DiscreteSCM& scm, int x) {
    if (x < 0 || x >= scm.n_x()) throw ContractError("backdoor: x out of range");
    std::vector<double> out(static_cast<std::size_t>(scm.n_y()), 0.0);
    for (int d = 0; d < scm.n_d(); ++d)
        for (int y = 0; y < scm.n_y(); ++y)
            out[static_cast<std::size_t>(y)] += scm.p_y_given_xd[static_cast<std::size_t>(x)][static_cast<std::size_t>(d)][static_cast<std::size_t>(y)] * scm.p_d[static_cast<std::size_t>(d)];
    return out;
}

/// Monte Carlo intervention: draw d ~ P(d), then y ~ P(Y|x,d), n times.
inline std::vector<double> sample_do(const DiscreteSCM& scm, int x, std::int64_t n, Rng& rng) {
    if (x < 0 || x >= scm.n_x()) throw ContractError("sample_do: x out of range");
    if (n < 1) throw ContractError("sample_do: n must be >= 1");
    auto draw = [&rng](const std::vector<double>& p) {
        const double u = rng.uniform();
        double acc = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            acc += p[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(p.size()) - 1;
    };
    std::vector<std::int64_t> counts(static_cast<std::size_t>(scm.n_y()), 0);
    for (std::int64_t i = 0; i < n; ++i) {
        const int d = draw(scm.p_d);
        const int y = draw(scm.p_y_given_xd[static_cast<std::size_t>(x)][static_cast<std::size_t>(d)]);
        ++counts[static_cast<std::size_t>(y)];
    }
    std::vector<double> freq(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i)
        freq[i] = static_cast<double>(counts[i]) / static_cast<double>(n);
    return freq;
}

// ---- independent enumeration route --------------------------------------------
// Deliberately naive: materialize the full joint table P(d, x, y), then recover
// the queried quantities purely by marginalizing and conditioning it.

inline std::vector<std::vector<std::vector<double>>> joint_table(const DiscreteSCM& scm) {
    std::vector<std::vector<std::vector<double>>> j(
        static_cast<std::size_t>(scm.n_d()),
        std::vector<std::vector<double>>(static_cast<std::size_t>(scm.n_x()),
                                         std::vector<double>(static_cast<std::size_t>(scm.n_y()), 0.0)));
    for (int d = 0; d < scm.n_d(); ++d)
        for (int x = 0; x < scm.n_x(); ++x)
            for (int y = 0; y < scm.n_y(); ++y)
                j[static_cast<std::size_t>(d)][static_cast<std::size_t>(x)][static_cast<std::size_t>(y)] =
                    scm.p_d[static_cast<std::size_t>(d)] *
                    scm.p_x_given_d[static_cast<std::size_t>(d)][static_cast<std::size_t>(x)] *
                    scm.p_y_given_xd[static_cast<std::size_t>(x)][static_cast<std::size_t>(d)][static_cast<std::size_t>(y)];
    return j;
}

inline std::vector<double> conditional_by_enumeration(const DiscreteSCM& scm, int x) {
    const auto j = joint_table(scm);
    double px = 0.0;
    for (int d = 0; d < scm.n_d(); ++d)
        for (int y = 0; y < scm.n_y(); ++y) px += j[static_cast<std::size_t>(d)][static_cast<std::size_t>(x)][static_cast<std::size_t>(y)];
    if (px <= 0.0) throw ContractError("conditional_by_enumeration: P(X=x) is zero");
    std::vector<double> out(static_cast<std::size_t>(scm.n_y()), 0.0);
    for (int y = 0; y < scm.n_y(); ++y) {
        double s = 0.0;
        for (int d = 0; d < scm.n_d(); ++d) s += j[static_cast<std::size_t>(d)][static_cast<std::size_t>(x)][static_cast<std::size_t>(y)];
        out[static_cast<std::size_t>(y)] = s / px;
    }
    return out;
}

inline std::vector<double> backdoor_by_enumeration(const DiscreteSCM& scm, int x) {
    const auto j = joint_table(scm);
    std::vector<double> out(static_cast<std::size_t>(scm.n_y()), 0.0);
    for (int d = 0; d < scm.n_d(); ++d) {
        // recover P(d) and P(y|x,d) from the joint alone
        double pd = 0.0;
        for (int xx = 0; xx < scm.n_x(); ++xx)
            for (int y = 0; y < scm.n_y(); ++y) pd += j[static_cast<std::size_t>(d)][static_cast<std::size_t>(xx)][static_cast<std::size_t>(y)];
        double pxd = 0.0;
        for (int y = 0; y < scm.n_y(); ++y) pxd += j[static_cast<std::size_t>(d)][static_cast<std::size_t>(x)][static_cast<std::size_t>(y)];
        if (pxd <= 0.0) throw ContractError("backdoor_by_enumeration: P(x,d) is zero");
        for (int y = 0; y < scm.n_y(); ++y)
            out[static_cast<std::size_t>(y)] += pd * j[static_cast<std::size_t>(d)][static_cast<std::size_t>(x)][static_cast<std::size_t>(y)] / pxd;
    }
    return out;
}

// ---- fixtures -------------------------------------------------------------------

/// Strictly positive random SCM (every conditional well defined).
inline DiscreteSCM random_scm(int nd, int nx, int ny, Rng& rng) {
    auto random_row = [&rng](int n) {
        std::vector<double> row(static_cast<std::size_t>(n));
        double s = 0.0;
        for (auto& v : row) {
            v = 0.05 + rng.uniform();
            s += v;
        }
        for (auto& v : row) v /= s;
        // renormalize exactly against the 1e-12 row-sum contract
        double s2 = 0.0;
        for (double v : row) s2 += v;
        row.back() += 1.0 - s2;
        return row;
    };
    DiscreteSCM scm;
    scm.p_d = random_row(nd);
    scm.p_x_given_d.resize(static_cast<std::size_t>(nd));
    for (auto& r : scm.p_x_given_d) r = random_row(nx);
    scm.p_y_given_xd.assign(static_cast<std::size_t>(nx),
                            std::vector<std::vector<double>>(static_cast<std::size_t>(nd)));
    for (auto& block : scm.p_y_given_xd)
        for (auto& r : block) r = random_row(ny);
    scm.validate();
    return scm;
}

/// Pinned 2x2x2 instance exhibiting an argmax reversal between the
/// observational conditional and the interventional distribution at x = 1
/// (found by the grid search exercised in the test suite).
inline DiscreteSCM simpson_fixture() {
    DiscreteSCM scm;
    scm.p_d = {0.5, 0.5};
    scm.p_x_given_d = {{0.9, 0.1}, {0.1, 0.9}};
    scm.p_y_given_xd = {
        // x = 0
        {{0.9, 0.1}, {0.4, 0.6}},
        // x = 1: stratum 0 favors y=1 strongly, stratum 1 mildly favors y=0;
        // observing x=1 makes stratum 1 dominate, intervening weighs both equally
        {{0.1, 0.9}, {0.6, 0.4}},
    };
    scm.validate();
    return scm;
}

// ---- structured text serialization ----------------------------------------------

inline void save_scm(const DiscreteSCM& scm, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("save_scm: cannot open " + path);
    f.precision(17);
    f << "iern-scm v1\n";
    f << "dims " << scm.n_d() << ' ' << scm.n_x() << ' ' << scm.n_y() << '\n';
    f << "p_d\n";
    for (double v : scm.p_d) f << v << ' ';
    f << "\np_x_given_d\n";
    for (const auto& row : scm.p_x_given_d) {
        for (double v : row) f << v << ' ';
        f << '\n';
    }
    f << "p_y_given_xd\n";
    for (const auto& block : scm.p_y_given_xd)
        for (const auto& row : block) {
            for (double v : row) f << v << ' ';
            f << '\n';
        }
    if (!f) throw IoError("save_scm: write failed for " + path);
}

inline DiscreteSCM load_scm(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("load_scm: cannot open " + path);
    std::string magic, version;
    f >> magic >> version;
    if (magic != "iern-scm" || version != "v1")
        throw IoError("load_scm: unrecognized header in " + path);
    std::string key;
    int nd = 0, nx = 0, ny = 0;
    f >> key >> nd >> nx >> ny;
    if (key != "dims" || nd < 1 || nx < 1 || ny < 1) throw IoError("load_scm: bad dims");
    DiscreteSCM scm;
    f >> key;
    if (key != "p_d") throw IoError("load_scm: expected p_d");
    scm.p_d.resize(static_cast<std::size_t>(nd));
    for (auto& v : scm.p_d) f >> v;
    f >> key;
    if (key != "p_x_given_d") throw IoError("load_scm: expected p_x_given_d");
    scm.p_x_given_d.assign(static_cast<std::size_t>(nd), std::vector<double>(static_cast<std::size_t>(nx)));
    for (auto& row : scm.p_x_given_d)
        for (auto& v : row) f >> v;
    f >> key;
    if (key != "p_y_given_xd") throw IoError("load_scm: expected p_y_given_xd");
    scm.p_y_given_xd.assign(static_cast<std::size_t>(nx),
                            std::vector<std::vector<double>>(static_cast<std::size_t>(nd),
                                                             std::vector<double>(static_cast<std::size_t>(ny))));
    for (auto& block : scm.p_y_given_xd)
        for (auto& row : block)
            for (auto& v : row) f >> v;
    if (!f) throw IoError("load_scm: truncated file " + path);
    scm.validate(1e-9);  // text round-trip tolerance
    return scm;
}

// ---- oracle check battery --------------------------------------------------------

struct OracleCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

using InterventionFn = std::function<std::vector<double>(const DiscreteSCM&, int)>;

/// The fixture battery behind `iernlab oracle`. `intervention` is the routine
/// under test (the production backdoor by default; swapping in `conditional`
/// must fail the Simpson reversal check).
inline std::vector<OracleCheck> run_oracle_checks(std::uint64_t seed, int n_random_scms = 50,
                                                  std::int64_t mc_n = 1000000,
                                                  const InterventionFn& intervention = backdoor) {
    std::vector<OracleCheck> checks;
    Rng rng(derive_seed(seed, "oracle"));

    {
        OracleCheck c{"equivalence_vs_enumeration", true, ""};
        double worst = 0.0;
        for (int i = 0; i < n_random_scms; ++i) {
            const int nd = 2 + static_cast<int>(rng.uniform_int(3));
            const int nx = 2 + static_cast<int>(rng.uniform_int(3));
            const int ny = 2 + static_cast<int>(rng.uniform_int(3));
            DiscreteSCM scm = random_scm(nd, nx, ny, rng);
            for (int x = 0; x < nx; ++x) {
                const auto c1 = conditional(scm, x);
                const auto c2 = conditional_by_enumeration(scm, x);
                const auto b1 = intervention(scm, x);
                const auto b2 = backdoor_by_enumeration(scm, x);
                for (int y = 0; y < ny; ++y) {
                    worst = std::max(worst, std::fabs(c1[static_cast<std::size_t>(y)] - c2[static_cast<std::size_t>(y)]));
                    worst = std::max(worst, std::fabs(b1[static_cast<std::size_t>(y)] - b2[static_cast<std::size_t>(y)]));
                }
            }
        }
        c.pass = worst <= 1e-12;
        std::ostringstream os;
        os << "max |factored - enumerated| = " << worst << " over " << n_random_scms << " SCMs";
        c.detail = os.str();
        checks.push_back(c);
    }

    {
        OracleCheck c{"simpson_reversal", true, ""};
        const DiscreteSCM scm = simpson_fixture();
        const int x = 1;
        const auto obs = conditional(scm, x);
        const auto inter = intervention(scm, x);
        const auto truth = backdoor_by_enumeration(scm, x);
        const int a_obs = argmax(std::span<const double>(obs));
        const int a_int = argmax(std::span<const double>(inter));
        const int a_truth = argmax(std::span<const double>(truth));
        c.pass = (a_obs != a_truth) && (a_int == a_truth);
        std::ostringstream os;
        os << "argmax conditional=" << a_obs << " intervention=" << a_int
           << " enumerated do()=" << a_truth;
        c.detail = os.str();
        checks.push_back(c);
    }

    {
        OracleCheck c{"monte_carlo_convergence", true, ""};
        const DiscreteSCM scm = simpson_fixture();
        const int x = 1;
        const auto target = backdoor(scm, x);
        Rng mc(derive_seed(seed, "oracle-mc"));
        const auto freq = sample_do(scm, x, mc_n, mc);
        double worst_sigmas = 0.0;
        for (std::size_t y = 0; y < target.size(); ++y) {
            const double p = target[y];
            const double sigma = std::sqrt(std::max(p * (1.0 - p), 1e-300) / static_cast<double>(mc_n));
            worst_sigmas = std::max(worst_sigmas, std::fabs(freq[y] - p) / sigma);
        }
        c.pass = worst_sigmas <= 4.0;
        std::ostringstream os;
        os << "max deviation = " << worst_sigmas << " sigma at n = " << mc_n;
        c.detail = os.str();
        checks.push_back(c);
    }

    return checks;
}

}  // namespace iern
