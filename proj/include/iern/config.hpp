#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "iern/error.hpp"
#include "iern/model.hpp"
#include "iern/train.hpp"

// Experiment configuration: flat `key = value` text with a fixed schema,
// explicit defaults and strict validation. Unknown keys are rejected.

namespace iern {

struct ExperimentConfig {
    std::string method = "iern";  // baseline | disentangle | resample | nwgm | iern
    std::uint64_t seed = 1;
    std::string out_dir = "out";

    // data: either the built-in confounded toy or dataset files
    std::string data_source = "toy";  // toy | files
    int image_h = 16, image_w = 16, image_c = 1;
    int per_cell_train = 40;
    int per_cell_test = 20;
    double move_fraction = 0.0;
    std::string train_files;  // dataset stem (source = files)
    std::string eval_files;   // dataset stem for the evaluation split
    int fold = 0;             // three-fold protocol fold (0 = off)

    LossWeights weights;

    double lr = 2e-4;
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
    std::int64_t warmup_steps = -1;
    int epochs = 80;
    int batch_size = 32;
    int eval_every = 2;
    int base_channels = 32;

    int nwgm_trunk_epochs = -1;  // -1: same as epochs; must be >= 1 for method = nwgm
    int nwgm_head_epochs = 20;

    std::string eval_checkpoint;  // for the eval command
    std::string eval_data;

    std::vector<std::string> compare_methods = {"baseline", "resample", "nwgm", "iern"};
    std::vector<std::uint64_t> compare_seeds = {1, 2, 3};
    std::vector<double> lambda2_grid;  // non-empty: sweep iern over these values

    void validate() const {
        const std::vector<std::string> known = {"baseline", "disentangle", "resample", "nwgm",
                                                "iern"};
        if (std::find(known.begin(), known.end(), method) == known.end())
            throw ConfigError("config: unknown method " + method);
        if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("config: lr must be positive");
        if (move_fraction < 0.0 || move_fraction >= 1.0)
            throw ConfigError("config: move_fraction must lie in [0, 1)");
        weights.validate();
        if (data_source != "toy" && data_source != "files")
            throw ConfigError("config: data.source must be toy or files");
        if (data_source == "files") {
            for (const std::string& stem : {train_files, eval_files}) {
                if (stem.empty()) throw ConfigError("config: data.train/data.eval required");
                if (!std::filesystem::exists(stem + ".manifest"))
                    throw ConfigError("config: missing dataset manifest " + stem + ".manifest");
            }
        }
        if (method == "nwgm" && nwgm_trunk_epochs == 0)
            throw ConfigError("config: nwgm needs a trunk (nwgm.trunk_epochs >= 1)");
        for (const auto& m : compare_methods)
            if (std::find(known.begin(), known.end(), m) == known.end())
                throw ConfigError("config: unknown compare method " + m);
        if (compare_seeds.empty()) throw ConfigError("config: compare.seeds must be non-empty");
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.lr = lr;
        t.beta1 = beta1;
        t.beta2 = beta2;
        t.adam_eps = epsilon;
        t.warmup_steps = warmup_steps;
        t.weights = weights;
        t.seed = seed;
        t.eval_every = eval_every;
        return t;
    }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace detail

/// Key/value parsing with strict schema checking. Later keys override earlier
/// ones; the defaults are the struct's initial values.
inline ExperimentConfig parse_config_text(std::istream& in) {
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    bool versioned = false;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        // trim
        auto is_space = [](unsigned char c) { return std::isspace(c); };
        while (!line.empty() && is_space(static_cast<unsigned char>(line.back()))) line.pop_back();
        std::size_t start = 0;
        while (start < line.size() && is_space(static_cast<unsigned char>(line[start]))) ++start;
        line = line.substr(start);
        if (line.empty()) continue;
        if (!versioned) {
            if (line != "iernlab-config v1")
                throw ConfigError("config: first line must be 'iernlab-config v1'");
            versioned = true;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not key = value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        while (!key.empty() && is_space(static_cast<unsigned char>(key.back()))) key.pop_back();
        std::size_t vs = 0;
        while (vs < value.size() && is_space(static_cast<unsigned char>(value[vs]))) ++vs;
        value = value.substr(vs);
        if (key.empty() || value.empty())
            throw ConfigError("config: empty key or value on line " + std::to_string(lineno));

        auto as_int = [&](const std::string& v) {
            try {
                return std::stoll(v);
            } catch (...) {
                throw ConfigError("config: expected integer for " + key);
            }
        };
        auto as_double = [&](const std::string& v) {
            try {
                return std::stod(v);
            } catch (...) {
                throw ConfigError("config: expected number for " + key);
            }
        };

        if (key == "method") cfg.method = value;
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(as_int(value));
        else if (key == "out") cfg.out_dir = value;
        else if (key == "data.source") cfg.data_source = value;
        else if (key == "data.image_h") cfg.image_h = static_cast<int>(as_int(value));
        else if (key == "data.image_w") cfg.image_w = static_cast<int>(as_int(value));
        else if (key == "data.image_c") cfg.image_c = static_cast<int>(as_int(value));
        else if (key == "data.per_cell_train") cfg.per_cell_train = static_cast<int>(as_int(value));
        else if (key == "data.per_cell_test") cfg.per_cell_test = static_cast<int>(as_int(value));
        else if (key == "data.move_fraction") cfg.move_fraction = as_double(value);
        else if (key == "data.train") cfg.train_files = value;
        else if (key == "data.eval") cfg.eval_files = value;
        else if (key == "data.fold") cfg.fold = static_cast<int>(as_int(value));
        else if (key == "weights.lambda1") cfg.weights.lambda1 = as_double(value);
        else if (key == "weights.lambda2") cfg.weights.lambda2 = as_double(value);
        else if (key == "weights.lambda3") cfg.weights.lambda3 = as_double(value);
        else if (key == "opt.lr") cfg.lr = as_double(value);
        else if (key == "opt.beta1") cfg.beta1 = as_double(value);
        else if (key == "opt.beta2") cfg.beta2 = as_double(value);
        else if (key == "opt.epsilon") cfg.epsilon = as_double(value);
        else if (key == "opt.warmup_steps") cfg.warmup_steps = as_int(value);
        else if (key == "opt.epochs") cfg.epochs = static_cast<int>(as_int(value));
        else if (key == "opt.batch_size") cfg.batch_size = static_cast<int>(as_int(value));
        else if (key == "opt.eval_every") cfg.eval_every = static_cast<int>(as_int(value));
        else if (key == "model.base_channels") cfg.base_channels = static_cast<int>(as_int(value));
        else if (key == "nwgm.trunk_epochs") cfg.nwgm_trunk_epochs = static_cast<int>(as_int(value));
        else if (key == "nwgm.head_epochs") cfg.nwgm_head_epochs = static_cast<int>(as_int(value));
        else if (key == "eval.checkpoint") cfg.eval_checkpoint = value;
        else if (key == "eval.data") cfg.eval_data = value;
        else if (key == "compare.methods") cfg.compare_methods = detail::split_list(value);
        else if (key == "compare.seeds") {
            cfg.compare_seeds.clear();
            for (const auto& tok : detail::split_list(value))
                cfg.compare_seeds.push_back(static_cast<std::uint64_t>(std::stoull(tok)));
        } else if (key == "compare.lambda2_grid") {
            cfg.lambda2_grid.clear();
            for (const auto& tok : detail::split_list(value)) cfg.lambda2_grid.push_back(std::stod(tok));
        } else {
            throw ConfigError("config: unknown key " + key);
        }
    }
    if (!versioned) throw ConfigError("config: empty file (missing version line)");
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open " + path);
    try {
        return parse_config_text(f);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

/// The full defaults table, in loadable form.
inline std::string default_config_text() {
    const ExperimentConfig d;
    std::ostringstream os;
    os.precision(17);
    os << "iernlab-config v1\n";
    os << "method = " << d.method << "              # baseline | disentangle | resample | nwgm | iern\n";
    os << "seed = " << d.seed << '\n';
    os << "out = " << d.out_dir << '\n';
    os << "data.source = " << d.data_source << "          # toy | files\n";
    os << "data.image_h = " << d.image_h << '\n';
    os << "data.image_w = " << d.image_w << '\n';
    os << "data.image_c = " << d.image_c << '\n';
    os << "data.per_cell_train = " << d.per_cell_train << '\n';
    os << "data.per_cell_test = " << d.per_cell_test << '\n';
    os << "data.move_fraction = " << d.move_fraction << '\n';
    os << "#data.train = <stem>        # dataset files mode\n";
    os << "#data.eval = <stem>\n";
    os << "weights.lambda1 = " << d.weights.lambda1 << '\n';
    os << "weights.lambda2 = " << d.weights.lambda2 << '\n';
    os << "weights.lambda3 = " << d.weights.lambda3 << '\n';
    os << "opt.lr = " << d.lr << '\n';
    os << "opt.beta1 = " << d.beta1 << '\n';
    os << "opt.beta2 = " << d.beta2 << '\n';
    os << "opt.epsilon = " << d.epsilon << '\n';
    os << "opt.warmup_steps = " << d.warmup_steps << "       # -1: 5% of total steps\n";
    os << "opt.epochs = " << d.epochs << '\n';
    os << "opt.batch_size = " << d.batch_size << '\n';
    os << "opt.eval_every = " << d.eval_every << '\n';
    os << "model.base_channels = " << d.base_channels << '\n';
    os << "nwgm.trunk_epochs = " << d.nwgm_trunk_epochs << "     # -1: same as opt.epochs\n";
    os << "nwgm.head_epochs = " << d.nwgm_head_epochs << '\n';
    os << "#eval.checkpoint = <stem>\n";
    os << "#eval.data = <stem>\n";
    os << "compare.methods = baseline,resample,nwgm,iern\n";
    os << "compare.seeds = 1,2,3\n";
    os << "#compare.lambda2_grid = 1e-6,1e-4,5e-4,1e-3,1e-2,1\n";
    return os.str();
}

}  // namespace iern
