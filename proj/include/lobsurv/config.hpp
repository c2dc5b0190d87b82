#pragma once

// Flat key-value experiment configuration: one `key = value` per line, '#'
// comments, command-line flags override file entries. All randomness flows
// from the single master `seed`, split per stage.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lobsurv/attribution.hpp"
#include "lobsurv/featurizer.hpp"
#include "lobsurv/kanformer.hpp"
#include "lobsurv/metrics.hpp"
#include "lobsurv/sim.hpp"
#include "lobsurv/trainer.hpp"
#include "lobsurv/util.hpp"

namespace lobsurv {

class KeyValueConfig {
public:
    static KeyValueConfig parse_text(const std::string& text) {
        KeyValueConfig cfg;
        std::size_t line_no = 0;
        for (const auto& raw : split(text, '\n')) {
            ++line_no;
            std::string line = raw;
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config line " + std::to_string(line_no) +
                                            ": expected key = value");
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return cfg;
    }

    static KeyValueConfig parse_file(const std::string& path) {
        return parse_text(read_text_file(path));
    }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    std::string str(const std::string& key, const std::string& fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }
    std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : std::stoull(it->second);
    }
    std::size_t size(const std::string& key, std::size_t fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : std::stoul(it->second);
    }
    double real(const std::string& key, double fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : std::stod(it->second);
    }
    bool boolean(const std::string& key, bool fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw std::invalid_argument("config key " + key + ": expected boolean, got " + it->second);
    }

    const std::map<std::string, std::string>& all() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

// Chronological day ranges, written begin:end (end exclusive).
struct SplitSpec {
    std::size_t train_begin = 0, train_end = 6;
    std::size_t val_begin = 6, val_end = 8;
    std::size_t test_begin = 8, test_end = 10;

    static std::pair<std::size_t, std::size_t> parse_range(const std::string& s) {
        auto parts = split(s, ':');
        if (parts.size() != 2) throw std::invalid_argument("bad day range (want begin:end): " + s);
        return {std::stoul(trim(parts[0])), std::stoul(trim(parts[1]))};
    }

    void validate() const {
        auto ok = [](std::size_t b, std::size_t e) { return b < e; };
        if (!ok(train_begin, train_end) || !ok(val_begin, val_end) || !ok(test_begin, test_end))
            throw std::invalid_argument("split: empty day range");
        if (!(train_end <= val_begin && val_end <= test_begin))
            throw std::invalid_argument("split: day ranges must be chronological and non-overlapping");
    }
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    bool quiet = false;
    bool debug_export = false;

    SimConfig sim;
    FeaturizerConfig feat;
    SplitSpec split;
    ModelConfig model;
    TrainConfig train;
    std::size_t eval_horizons = 20;
    TieHandling tie_handling = TieHandling::FormulaAsWritten;
    AttributionConfig attrib;
    std::size_t explain_count = 32;

    static ExperimentConfig from_kv(const KeyValueConfig& kv) {
        ExperimentConfig c;
        c.seed = kv.u64("seed", 1);
        c.out_dir = kv.str("out", "out");
        c.quiet = kv.boolean("quiet", false);
        c.debug_export = kv.boolean("debug_export", false);

        c.sim.n_agents = kv.size("n_agents", 20);
        c.sim.session_seconds = kv.real("session_seconds", 600.0);
        c.sim.mean_event_rate = kv.real("mean_event_rate", 50.0);
        c.sim.n_days = kv.size("n_days", 10);
        c.sim.init_price = static_cast<std::int64_t>(kv.u64("init_price", 10000));
        c.sim.seed = derive_seed(c.seed, "sim");
        for (const auto& [key, value] : kv.all()) {
            if (key.rfind("agent.", 0) != 0) continue;
            auto parts = split(key, '.');
            if (parts.size() != 3) throw std::invalid_argument("bad agent override key: " + key);
            c.sim.overrides[{std::stoul(parts[1]), parts[2]}] = std::stod(value);
        }

        c.feat.lookback = kv.size("feat.lookback", 50);
        c.feat.per_day_quota = kv.size("feat.quota", 100);
        c.feat.max_draws = kv.size("feat.max_draws", 5);

        auto tr = SplitSpec::parse_range(kv.str("split.train_days", "0:6"));
        auto va = SplitSpec::parse_range(kv.str("split.val_days", "6:8"));
        auto te = SplitSpec::parse_range(kv.str("split.test_days", "8:10"));
        c.split = SplitSpec{tr.first, tr.second, va.first, va.second, te.first, te.second};
        c.split.validate();

        EncoderConfig& e = c.model.encoder;
        e.n_layers = kv.size("model.n_layers", 2);
        e.n_heads = kv.size("model.n_heads", 2);
        e.hidden_size = kv.size("model.hidden_size", 16);
        e.dropout_rate = kv.real("model.dropout", 0.1);
        e.use_kan = kv.boolean("model.use_kan", true);
        e.use_dcc = kv.boolean("model.use_dcc", true);
        e.dcc_kernel = kv.size("model.dcc_kernel", 3);
        e.dcc_dilation = kv.size("model.dcc_dilation", 1);
        e.grid_size = kv.size("model.grid_size", 5);
        e.spline_order = kv.size("model.spline_order", 3);
        e.use_positional = kv.boolean("model.use_positional", true);
        c.model.embed_dim = kv.size("model.embed_dim", 8);
        c.model.lookback = c.feat.lookback;
        c.model.use_action_type = kv.boolean("model.use_action_type", true);
        c.model.use_agent_features = kv.boolean("model.use_agent_features", true);
        c.model.use_queue = kv.boolean("model.use_queue", true);
        e.validate();

        c.train.lr0 = kv.real("train.lr0", 1e-3);
        c.train.decay_gamma = kv.real("train.decay_gamma", 0.9);
        c.train.max_epochs = kv.size("train.max_epochs", 200);
        c.train.patience = kv.size("train.patience", 10);
        c.train.batch_size = kv.size("train.batch_size", 256);
        c.train.weight_decay = kv.real("train.weight_decay", 1e-4);
        c.train.n_repeats = kv.size("train.n_repeats", 1);
        c.train.warm_init = kv.boolean("train.warm_init", true);
        c.train.seed = derive_seed(c.seed, "train");

        c.eval_horizons = kv.size("eval.n_horizons", 20);
        const std::string ties = kv.str("eval.tie_handling", "formula");
        if (ties == "formula") c.tie_handling = TieHandling::FormulaAsWritten;
        else if (ties == "half") c.tie_handling = TieHandling::HalfCredit;
        else throw std::invalid_argument("eval.tie_handling must be 'formula' or 'half'");

        c.attrib.background_size = kv.size("attrib.background_size", 64);
        c.attrib.n_path_samples = kv.size("attrib.n_path_samples", 32);
        c.attrib.seed = derive_seed(c.seed, "attrib");
        c.explain_count = kv.size("attrib.explain_count", 32);
        return c;
    }
};

}  // namespace lobsurv
