#pragma once

// The model: two KAN-Transformer encoders (agent actions; LOB snapshots with
// optional dilated-causal-conv Q/K/V projections), mean-pooled embeddings
// concatenated with the queue position, and a two-layer predictor emitting
// (log lambda, log k) of the Weibull time-to-fill distribution. Blocks are
// pre-norm with sinusoidal positions added after the input projection.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lobsurv/checkpoint.hpp"
#include "lobsurv/featurizer.hpp"
#include "lobsurv/kan.hpp"
#include "lobsurv/tensor.hpp"
#include "lobsurv/weibull.hpp"

namespace lobsurv {

struct EncoderConfig {
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t hidden_size = 16;
    double dropout_rate = 0.1;
    bool use_kan = true;
    bool use_dcc = false;  // LOB encoder only
    std::size_t dcc_kernel = 3;
    std::size_t dcc_dilation = 1;
    std::size_t grid_size = 5;
    std::size_t spline_order = 3;
    bool use_positional = true;

    void validate() const {
        if (n_heads == 0 || hidden_size % n_heads != 0)
            throw std::invalid_argument("encoder config: hidden_size must be divisible by n_heads");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw std::invalid_argument("encoder config: dropout_rate must be in [0,1)");
    }
};

struct ModelConfig {
    EncoderConfig encoder;
    std::size_t embed_dim = 8;  // action-type embedding width
    std::size_t lookback = 50;
    bool use_action_type = true;
    bool use_agent_features = true;
    bool use_queue = true;

    std::size_t action_width() const { return embed_dim + 5; }
    std::size_t lob_width() const { return kSnapshotWidth; }
    std::size_t predictor_input() const {
        return 2 * encoder.hidden_size + (use_queue ? 1 : 0);
    }
};

// Null embedding row used when the action type is ablated.
constexpr std::size_t kNullActionIndex = kActionVocab;

struct ModelState {
    ModelConfig config;
    ParamStore params;
    std::vector<double> pos_encoding;  // lookback x hidden, cached

    std::size_t n_parameters() const { return params.total_size(); }
};

inline std::vector<double> sinusoidal_positions(std::size_t length, std::size_t width) {
    std::vector<double> pe(length * width);
    for (std::size_t pos = 0; pos < length; ++pos)
        for (std::size_t i = 0; i < width; ++i) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, 2.0 * static_cast<double>(i / 2) / static_cast<double>(width));
            pe[pos * width + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

namespace detail {

inline void init_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                        std::mt19937_64& rng) {
    store.add(prefix + ".w", {in, out}, xavier_uniform(in, out, in * out, rng));
    store.add(prefix + ".b", {out}, std::vector<double>(out, 0.0));
}

inline void init_encoder(ParamStore& store, const std::string& prefix, std::size_t in_width,
                         const EncoderConfig& enc, bool dcc_active, std::mt19937_64& rng) {
    const std::size_t h = enc.hidden_size;
    init_linear(store, prefix + ".in_proj", in_width, h, rng);
    for (std::size_t l = 0; l < enc.n_layers; ++l) {
        const std::string lp = prefix + ".l" + std::to_string(l);
        store.add(lp + ".ln1.g", {h}, std::vector<double>(h, 1.0));
        store.add(lp + ".ln1.b", {h}, std::vector<double>(h, 0.0));
        store.add(lp + ".ln2.g", {h}, std::vector<double>(h, 1.0));
        store.add(lp + ".ln2.b", {h}, std::vector<double>(h, 0.0));
        if (dcc_active) {
            const std::size_t k = enc.dcc_kernel;
            for (const char* name : {"kq", "kk", "kv"})
                store.add(lp + ".attn." + std::string(name), {k, h, h},
                          xavier_uniform(k * h, h, k * h * h, rng));
        } else {
            for (const char* name : {"wq", "wk", "wv"})
                store.add(lp + ".attn." + std::string(name), {h, h},
                          xavier_uniform(h, h, h * h, rng));
        }
        for (const char* name : {"bq", "bk", "bv"})
            store.add(lp + ".attn." + std::string(name), {h}, std::vector<double>(h, 0.0));
        store.add(lp + ".attn.wo", {h, h}, xavier_uniform(h, h, h * h, rng));
        store.add(lp + ".attn.bo", {h}, std::vector<double>(h, 0.0));
        if (enc.use_kan) {
            init_kan_params(store, lp + ".kan",
                            KanLayerSpec{h, h, enc.grid_size, enc.spline_order}, rng);
        } else {
            init_linear(store, lp + ".ffn.fc1", h, h, rng);
            init_linear(store, lp + ".ffn.fc2", h, h, rng);
        }
    }
    store.add(prefix + ".final_ln.g", {h}, std::vector<double>(h, 1.0));
    store.add(prefix + ".final_ln.b", {h}, std::vector<double>(h, 0.0));
}

}  // namespace detail

inline ModelState init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.encoder.validate();
    ModelState model;
    model.config = cfg;
    std::mt19937_64 rng(derive_seed(seed, "model-init"));
    model.params.add("embed.table", {kActionVocab + 1, cfg.embed_dim},
                     normal_init((kActionVocab + 1) * cfg.embed_dim, 0.1, rng));
    detail::init_encoder(model.params, "act", cfg.action_width(), cfg.encoder, false, rng);
    detail::init_encoder(model.params, "lob", cfg.lob_width(), cfg.encoder, cfg.encoder.use_dcc, rng);
    detail::init_linear(model.params, "pred.fc1", cfg.predictor_input(), cfg.encoder.hidden_size, rng);
    detail::init_linear(model.params, "pred.fc2", cfg.encoder.hidden_size, 2, rng);
    model.pos_encoding = sinusoidal_positions(cfg.lookback, cfg.encoder.hidden_size);
    return model;
}

struct ForwardOptions {
    bool training = false;
    std::mt19937_64* dropout_rng = nullptr;
};

namespace detail {

inline void check_finite(Tape& tape, Tensor t, const char* layer) {
    for (double v : tape.val(t))
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite activation in ") + layer);
}

inline Tensor linear(Tape& tape, Tensor x, const BoundParams& bp, const std::string& prefix) {
    return tape.add(tape.matmul(x, bp.at(prefix + ".w")), bp.at(prefix + ".b"));
}

inline Tensor multi_head_attention(Tape& tape, Tensor q, Tensor k, Tensor v, std::size_t n_heads) {
    const std::size_t h = tape.node(q).shape[1];
    const std::size_t dh = h / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> heads;
    for (std::size_t head = 0; head < n_heads; ++head) {
        Tensor qh = tape.slice_cols(q, head * dh, dh);
        Tensor kh = tape.slice_cols(k, head * dh, dh);
        Tensor vh = tape.slice_cols(v, head * dh, dh);
        Tensor scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), scale);
        Tensor probs = tape.softmax_lastdim(scores);
        heads.push_back(tape.matmul(probs, vh));
    }
    return tape.concat(heads, 1);
}

}  // namespace detail

// One encoder tower: input projection, additive sinusoidal positions, then
// pre-norm blocks of attention and KAN (or feedforward) sublayers; the output
// embedding is the mean over the sequence positions.
inline Tensor encoder_forward(Tape& tape, Tensor seq, const ModelState& model, const BoundParams& bp,
                              const std::string& prefix, bool dcc_active,
                              const ForwardOptions& opts) {
    const EncoderConfig& enc = model.config.encoder;
    const auto& in_shape = tape.node(seq).shape;
    const std::size_t expect = model.params.at(prefix + ".in_proj.w").shape[0];
    if (in_shape.size() != 2 || in_shape[1] != expect)
        throw ShapeError("encoder " + prefix + ": input width " + shape_str(in_shape) +
                         " does not match configured width " + std::to_string(expect));

    Tensor x = detail::linear(tape, seq, bp, prefix + ".in_proj");
    if (enc.use_positional) {
        const std::size_t L = in_shape[0];
        std::vector<double> pe(model.pos_encoding.begin(),
                               model.pos_encoding.begin() +
                                   static_cast<std::ptrdiff_t>(L * enc.hidden_size));
        x = tape.add(x, tape.constant({L, enc.hidden_size}, std::move(pe)));
    }

    const bool drop = opts.training && enc.dropout_rate > 0.0 && opts.dropout_rng != nullptr;
    for (std::size_t l = 0; l < enc.n_layers; ++l) {
        const std::string lp = prefix + ".l" + std::to_string(l);
        Tensor h = tape.layer_norm(x, bp.at(lp + ".ln1.g"), bp.at(lp + ".ln1.b"));
        Tensor q, k, v;
        if (dcc_active) {
            q = tape.add(tape.dilated_causal_conv1d(h, bp.at(lp + ".attn.kq"), enc.dcc_dilation),
                         bp.at(lp + ".attn.bq"));
            k = tape.add(tape.dilated_causal_conv1d(h, bp.at(lp + ".attn.kk"), enc.dcc_dilation),
                         bp.at(lp + ".attn.bk"));
            v = tape.add(tape.dilated_causal_conv1d(h, bp.at(lp + ".attn.kv"), enc.dcc_dilation),
                         bp.at(lp + ".attn.bv"));
        } else {
            q = tape.add(tape.matmul(h, bp.at(lp + ".attn.wq")), bp.at(lp + ".attn.bq"));
            k = tape.add(tape.matmul(h, bp.at(lp + ".attn.wk")), bp.at(lp + ".attn.bk"));
            v = tape.add(tape.matmul(h, bp.at(lp + ".attn.wv")), bp.at(lp + ".attn.bv"));
        }
        Tensor att = detail::multi_head_attention(tape, q, k, v, enc.n_heads);
        att = tape.add(tape.matmul(att, bp.at(lp + ".attn.wo")), bp.at(lp + ".attn.bo"));
        if (drop) att = tape.dropout(att, enc.dropout_rate, *opts.dropout_rng);
        x = tape.add(x, att);

        Tensor h2 = tape.layer_norm(x, bp.at(lp + ".ln2.g"), bp.at(lp + ".ln2.b"));
        Tensor ff;
        if (enc.use_kan) {
            BSplineBasis basis(enc.grid_size, enc.spline_order);
            ff = kan_layer_forward(tape, h2, bp.at(lp + ".kan.coeffs"), bp.at(lp + ".kan.base_w"),
                                   bp.at(lp + ".kan.spline_w"), basis);
        } else {
            ff = detail::linear(tape, tape.silu(detail::linear(tape, h2, bp, lp + ".ffn.fc1")), bp,
                                lp + ".ffn.fc2");
        }
        if (drop) ff = tape.dropout(ff, enc.dropout_rate, *opts.dropout_rng);
        x = tape.add(x, ff);
    }
    x = tape.layer_norm(x, bp.at(prefix + ".final_ln.g"), bp.at(prefix + ".final_ln.b"));
    return tape.mean_rows(x);
}

struct WeibullOut {
    Tensor log_lambda;  // [1,1]
    Tensor log_k;       // [1,1]

    WeibullParams values() const {
        return WeibullParams{log_lambda.val()[0], log_k.val()[0]};
    }
};

// Forward from pre-built input tensors; attribution feeds interpolated inputs
// through this entry point.
inline WeibullOut model_forward_parts(Tape& tape, const ModelState& model, const BoundParams& bp,
                                      Tensor act_embed, Tensor ratios, Tensor lob, Tensor queue,
                                      const ForwardOptions& opts) {
    const ModelConfig& cfg = model.config;
    Tensor act_in = tape.concat({act_embed, ratios}, 1);
    Tensor z_a = encoder_forward(tape, act_in, model, bp, "act", false, opts);
    detail::check_finite(tape, z_a, "action_encoder");
    Tensor z_l = encoder_forward(tape, lob, model, bp, "lob", cfg.encoder.use_dcc, opts);
    detail::check_finite(tape, z_l, "lob_encoder");

    std::vector<Tensor> parts = {z_a, z_l};
    if (cfg.use_queue) parts.push_back(queue);
    Tensor z_c = tape.concat(parts, 1);

    Tensor hidden = tape.silu(detail::linear(tape, z_c, bp, "pred.fc1"));
    Tensor out = detail::linear(tape, hidden, bp, "pred.fc2");
    detail::check_finite(tape, out, "predictor");
    return WeibullOut{tape.slice_cols(out, 0, 1), tape.slice_cols(out, 1, 1)};
}

inline std::vector<std::size_t> action_indices(const ModelConfig& cfg, const OrderSample& s) {
    std::vector<std::size_t> idx(s.lookback, kNullActionIndex);
    if (cfg.use_action_type)
        for (std::size_t r = 0; r < s.lookback; ++r)
            idx[r] = static_cast<std::size_t>(s.action_code(r));
    return idx;
}

inline std::vector<double> ratio_matrix(const ModelConfig& cfg, const OrderSample& s) {
    std::vector<double> ratios(s.lookback * 5, 0.0);
    if (cfg.use_agent_features)
        for (std::size_t r = 0; r < s.lookback; ++r)
            for (std::size_t c = 0; c < 5; ++c)
                ratios[r * 5 + c] = s.a_actions[r * kActionCols + 1 + c];
    return ratios;
}

// Full forward pass for one (normalized) sample.
inline WeibullOut model_forward(Tape& tape, const ModelState& model, const BoundParams& bp,
                                const OrderSample& sample, const ForwardOptions& opts) {
    const ModelConfig& cfg = model.config;
    if (sample.lookback != cfg.lookback)
        throw ShapeError("sample lookback " + std::to_string(sample.lookback) +
                         " does not match model lookback " + std::to_string(cfg.lookback));
    Tensor act_embed = tape.embedding_rows(bp.at("embed.table"), action_indices(cfg, sample));
    Tensor ratios = tape.constant({sample.lookback, 5}, ratio_matrix(cfg, sample));
    Tensor lob = tape.constant({sample.lookback, kSnapshotWidth}, sample.x_lob);
    Tensor queue;
    if (cfg.use_queue) queue = tape.constant({1, 1}, {static_cast<double>(sample.queue)});
    return model_forward_parts(tape, model, bp, act_embed, ratios, lob, queue, opts);
}

// Inference-only convenience: predicts Weibull parameters without gradients.
inline WeibullParams predict(const ModelState& model, const OrderSample& sample) {
    Tape tape;
    BoundParams bp = bind_params(tape, model.params, false);
    ForwardOptions opts;
    return model_forward(tape, model, bp, sample, opts).values();
}

// ----------------------------- model config file -----------------------------

inline void save_model_config(const ModelConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write model config: " + path);
    const EncoderConfig& e = cfg.encoder;
    os << "n_layers = " << e.n_layers << "\n"
       << "n_heads = " << e.n_heads << "\n"
       << "hidden_size = " << e.hidden_size << "\n"
       << "dropout_rate = " << e.dropout_rate << "\n"
       << "use_kan = " << (e.use_kan ? "true" : "false") << "\n"
       << "use_dcc = " << (e.use_dcc ? "true" : "false") << "\n"
       << "dcc_kernel = " << e.dcc_kernel << "\n"
       << "dcc_dilation = " << e.dcc_dilation << "\n"
       << "grid_size = " << e.grid_size << "\n"
       << "spline_order = " << e.spline_order << "\n"
       << "use_positional = " << (e.use_positional ? "true" : "false") << "\n"
       << "embed_dim = " << cfg.embed_dim << "\n"
       << "lookback = " << cfg.lookback << "\n"
       << "use_action_type = " << (cfg.use_action_type ? "true" : "false") << "\n"
       << "use_agent_features = " << (cfg.use_agent_features ? "true" : "false") << "\n"
       << "use_queue = " << (cfg.use_queue ? "true" : "false") << "\n";
}

inline ModelConfig load_model_config(const std::string& path) {
    ModelConfig cfg;
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open model config: " + path);
    std::string line;
    auto to_bool = [](const std::string& v) { return v == "true" || v == "1"; };
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        EncoderConfig& e = cfg.encoder;
        if (key == "n_layers") e.n_layers = std::stoul(val);
        else if (key == "n_heads") e.n_heads = std::stoul(val);
        else if (key == "hidden_size") e.hidden_size = std::stoul(val);
        else if (key == "dropout_rate") e.dropout_rate = std::stod(val);
        else if (key == "use_kan") e.use_kan = to_bool(val);
        else if (key == "use_dcc") e.use_dcc = to_bool(val);
        else if (key == "dcc_kernel") e.dcc_kernel = std::stoul(val);
        else if (key == "dcc_dilation") e.dcc_dilation = std::stoul(val);
        else if (key == "grid_size") e.grid_size = std::stoul(val);
        else if (key == "spline_order") e.spline_order = std::stoul(val);
        else if (key == "use_positional") e.use_positional = to_bool(val);
        else if (key == "embed_dim") cfg.embed_dim = std::stoul(val);
        else if (key == "lookback") cfg.lookback = std::stoul(val);
        else if (key == "use_action_type") cfg.use_action_type = to_bool(val);
        else if (key == "use_agent_features") cfg.use_agent_features = to_bool(val);
        else if (key == "use_queue") cfg.use_queue = to_bool(val);
        else throw std::invalid_argument("unknown model config key: " + key);
    }
    return cfg;
}

inline ModelState load_model(const std::string& checkpoint_path, const std::string& config_path) {
    ModelState model;
    model.config = load_model_config(config_path);
    model.params = load_checkpoint(checkpoint_path);
    model.pos_encoding =
        sinusoidal_positions(model.config.lookback, model.config.encoder.hidden_size);
    return model;
}

}  // namespace lobsurv
