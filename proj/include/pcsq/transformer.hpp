#pragma once

// Stage D: causal transformer over token sequences. Each sequence position
// owns its codebook, so both the input embedding and the output head are
// separate per position. Sampling is nucleus (top-p) with temperature
// scaling; conditional generation prepends an encoded condition feature in
// place of the learned start vector.

#include <random>
#include <vector>

#include "pcsq/checkpoint.hpp"
#include "pcsq/config.hpp"
#include "pcsq/depth.hpp"
#include "pcsq/nn.hpp"

namespace pcsq {

inline Eigen::RowVectorXd apply_temperature(const Eigen::RowVectorXd& logits, double t) {
    if (t <= 0.0) throw DomainError("temperature must be positive");
    return logits / t;
}

inline Eigen::RowVectorXd softmax(const Eigen::RowVectorXd& logits) {
    Eigen::RowVectorXd e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

// Keep the smallest descending-probability prefix with cumulative mass >= p,
// zero the rest, renormalize. Probability ties favor the lower index.
inline Eigen::RowVectorXd nucleus_filter(const Eigen::RowVectorXd& probs, double p) {
    if (p <= 0.0 || p > 1.0) throw DomainError("nucleus_filter: p must be in (0, 1]");
    if (std::abs(probs.sum() - 1.0) > 1e-6) throw DomainError("nucleus_filter: input does not sum to 1");
    std::vector<int> order(static_cast<std::size_t>(probs.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs(a) > probs(b); });
    Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(probs.size());
    double mass = 0.0;
    for (int idx : order) {
        out(idx) = probs(idx);
        mass += probs(idx);
        if (mass >= p) break;
    }
    return out / out.sum();
}

inline Eigen::RowVectorXd top_k_filter(const Eigen::RowVectorXd& probs, long k) {
    if (k <= 0 || k >= probs.size()) return probs;
    std::vector<int> order(static_cast<std::size_t>(probs.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs(a) > probs(b); });
    Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(probs.size());
    for (long i = 0; i < k; ++i) out(order[static_cast<std::size_t>(i)]) = probs(order[static_cast<std::size_t>(i)]);
    return out / out.sum();
}

// Strided 3x3 convolution stack over a single-channel depth map, global mean
// pool, linear head to d_model. Stands in for a pretrained image backbone.
struct ConditionEncoder {
    long input_res = 32;
    std::vector<long> channels = {8, 16, 32};
    std::vector<nn::Linear> convs;
    nn::Linear head;

    ConditionEncoder() = default;
    ConditionEncoder(nn::ParamStore& store, const std::string& prefix, long input_res_, long d_model,
                     std::mt19937_64& rng)
        : input_res(input_res_) {
        long in = 1;
        for (std::size_t l = 0; l < channels.size(); ++l) {
            convs.emplace_back(store, prefix + ".conv" + std::to_string(l), 9 * in, channels[l], rng);
            in = channels[l];
        }
        head = nn::Linear(store, prefix + ".head", in, d_model, rng);
    }

    static std::vector<int> im2col_indices(long h, long w, long& ho, long& wo) {
        ho = (h - 1) / 2 + 1;  // kernel 3, stride 2, pad 1
        wo = (w - 1) / 2 + 1;
        std::vector<int> idx;
        idx.reserve(static_cast<std::size_t>(ho * wo * 9));
        for (long r = 0; r < ho; ++r)
            for (long c = 0; c < wo; ++c)
                for (long dr = -1; dr <= 1; ++dr)
                    for (long dc = -1; dc <= 1; ++dc) {
                        long rr = 2 * r + dr, cc = 2 * c + dc;
                        idx.push_back(rr < 0 || rr >= h || cc < 0 || cc >= w ? -1
                                                                             : static_cast<int>(rr * w + cc));
                    }
        return idx;
    }

    nn::Var operator()(nn::Tape& t, const nn::ParamStore& store, const DepthImage& img, bool frozen = false) const {
        if (img.height() <= 0 || img.width() <= 0) throw DomainError("condition encoder: empty image");
        long h = img.height(), w = img.width();
        nn::Mat flat(h * w, 1);
        for (long r = 0; r < h; ++r)
            for (long c = 0; c < w; ++c) flat(r * w + c, 0) = img.values(r, c);
        nn::Var x = t.constant(flat);
        for (const auto& conv : convs) {
            long ho, wo;
            auto idx = im2col_indices(h, w, ho, wo);
            nn::Var cols = t.gather_rows(x, idx);
            cols = t.reshape_rowmajor(cols, ho * wo, 9 * t.value(x).cols());
            x = t.relu(conv(t, store, cols, frozen));
            h = ho;
            w = wo;
        }
        nn::Var pooled = t.scale(t.colsum(x), 1.0 / static_cast<double>(h * w));
        return head(t, store, pooled, frozen);
    }
};

struct Transformer {
    long seq_len = 0;  // G
    long vocab = 50;
    long layers = 4;
    long heads = 4;
    long d_model = 128;
    bool learned_pos = true;
    bool conditional = false;
    std::uint64_t seed = 0;

    struct Block {
        int ln1_g = -1, ln1_b = -1, ln2_g = -1, ln2_b = -1;
        std::vector<int> wq, wk, wv;  // per head, d_model x d_head
        nn::Linear wo, mlp1, mlp2;
    };

    nn::ParamStore params;
    std::vector<int> embeddings;  // per position, vocab x d_model
    std::vector<nn::Linear> heads_out;
    int pos_emb = -1;  // learned G x d_model, or -1 when fixed
    nn::Mat fixed_pos;
    int start_vec = -1;
    std::vector<Block> blocks;
    int final_ln_g = -1, final_ln_b = -1;
    ConditionEncoder cond_encoder;
    std::vector<double> loss_history;

    static nn::Mat sinusoidal(long n, long d) {
        nn::Mat p(n, d);
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < d; ++j) {
                double angle = static_cast<double>(i) / std::pow(10000.0, 2.0 * static_cast<double>(j / 2) / static_cast<double>(d));
                p(i, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
            }
        return p;
    }

    static Transformer build(const PipelineConfig& cfg, long vocab_override = -1) {
        Transformer m;
        m.seq_len = cfg.integer("model.groups");
        m.vocab = vocab_override > 0 ? vocab_override : cfg.integer("vq.codebook_entries");
        m.layers = cfg.integer("tf.layers");
        m.heads = cfg.integer("tf.heads");
        m.d_model = cfg.integer("tf.d_model");
        m.learned_pos = cfg.flag("tf.learned_pos_emb");
        m.conditional = cfg.flag("tf.conditional");
        m.seed = cfg.seed("tf.seed");
        if (m.d_model % m.heads != 0) throw DomainError("tf: d_model must be divisible by heads");
        std::mt19937_64 rng(m.seed);
        for (long i = 0; i < m.seq_len; ++i)
            m.embeddings.push_back(m.params.add("tf.emb" + std::to_string(i),
                                                nn::gaussian(m.vocab, m.d_model, 0.02, rng)));
        if (m.learned_pos)
            m.pos_emb = m.params.add("tf.pos", nn::gaussian(m.seq_len, m.d_model, 0.02, rng));
        else
            m.fixed_pos = sinusoidal(m.seq_len, m.d_model);
        m.start_vec = m.params.add("tf.start", nn::gaussian(1, m.d_model, 0.02, rng));
        long dh = m.d_model / m.heads;
        for (long l = 0; l < m.layers; ++l) {
            Block b;
            std::string p = "tf.block" + std::to_string(l);
            b.ln1_g = m.params.add(p + ".ln1.g", nn::Mat::Ones(1, m.d_model));
            b.ln1_b = m.params.add(p + ".ln1.b", nn::Mat::Zero(1, m.d_model));
            b.ln2_g = m.params.add(p + ".ln2.g", nn::Mat::Ones(1, m.d_model));
            b.ln2_b = m.params.add(p + ".ln2.b", nn::Mat::Zero(1, m.d_model));
            for (long hh = 0; hh < m.heads; ++hh) {
                std::string hp = p + ".h" + std::to_string(hh);
                b.wq.push_back(m.params.add(hp + ".wq", nn::glorot(m.d_model, dh, rng)));
                b.wk.push_back(m.params.add(hp + ".wk", nn::glorot(m.d_model, dh, rng)));
                b.wv.push_back(m.params.add(hp + ".wv", nn::glorot(m.d_model, dh, rng)));
            }
            b.wo = nn::Linear(m.params, p + ".wo", m.d_model, m.d_model, rng);
            b.mlp1 = nn::Linear(m.params, p + ".mlp1", m.d_model, 2 * m.d_model, rng);
            b.mlp2 = nn::Linear(m.params, p + ".mlp2", 2 * m.d_model, m.d_model, rng);
            m.blocks.push_back(std::move(b));
        }
        m.final_ln_g = m.params.add("tf.final_ln.g", nn::Mat::Ones(1, m.d_model));
        m.final_ln_b = m.params.add("tf.final_ln.b", nn::Mat::Zero(1, m.d_model));
        for (long i = 0; i < m.seq_len; ++i) {
            m.heads_out.emplace_back(m.params, "tf.head" + std::to_string(i), m.d_model, m.vocab, rng);
            // Near-zero head weights give near-uniform logits at initialization.
            m.params[m.heads_out.back().w] = nn::gaussian(m.d_model, m.vocab, 0.02, rng);
        }
        if (m.conditional) {
            std::mt19937_64 crng(m.seed ^ 0xc2b2ae3d27d4eb4full);
            m.cond_encoder = ConditionEncoder(m.params, "tf.cond", cfg.integer("tf.depth_res"), m.d_model, crng);
        }
        return m;
    }

    nn::Var layer_norm(nn::Tape& t, const nn::ParamStore& store, nn::Var x, int g, int b, bool frozen) const {
        nn::Var gv = frozen ? store.use_frozen(t, g) : store.use(t, g);
        nn::Var bv = frozen ? store.use_frozen(t, b) : store.use(t, b);
        return t.add_rowvec(t.mul_rowvec(t.standardize_rows(x, 1e-5), gv), bv);
    }

    // Hidden states for input rows 0..n-1. Row 0 is the start vector (or the
    // condition feature); row t embeds token t-1. A strictly causal mask
    // keeps row i independent of rows > i.
    nn::Var hidden_states(nn::Tape& t, const nn::ParamStore& store, const std::vector<int>& prefix, long n,
                          nn::Var* condition, bool frozen) const {
        std::vector<nn::Var> rows;
        rows.reserve(static_cast<std::size_t>(n));
        rows.push_back(condition ? *condition
                                 : (frozen ? store.use_frozen(t, start_vec) : store.use(t, start_vec)));
        for (long i = 1; i < n; ++i) {
            int tok = prefix[static_cast<std::size_t>(i - 1)];
            if (tok < 0 || tok >= vocab) throw DomainError("tf: token out of range");
            nn::Var emb = frozen ? store.use_frozen(t, embeddings[static_cast<std::size_t>(i - 1)])
                                 : store.use(t, embeddings[static_cast<std::size_t>(i - 1)]);
            rows.push_back(t.gather_rows(emb, {tok}));
        }
        nn::Var x = t.vstack(rows);
        nn::Var pos;
        if (learned_pos) {
            nn::Var pe = frozen ? store.use_frozen(t, pos_emb) : store.use(t, pos_emb);
            pos = t.slice_rows(pe, 0, n);
        } else {
            pos = t.constant(fixed_pos.topRows(n));
        }
        x = t.add(x, pos);

        nn::Mat mask = nn::Mat::Zero(n, n);
        for (long i = 0; i < n; ++i)
            for (long j = i + 1; j < n; ++j) mask(i, j) = -1e9;
        nn::Var maskv = t.constant(mask);
        long dh = d_model / heads;
        double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (const auto& b : blocks) {
            nn::Var h = layer_norm(t, store, x, b.ln1_g, b.ln1_b, frozen);
            std::vector<nn::Var> head_outs;
            for (long hh = 0; hh < heads; ++hh) {
                auto W = [&](int idx) { return frozen ? store.use_frozen(t, idx) : store.use(t, idx); };
                nn::Var q = t.matmul(h, W(b.wq[static_cast<std::size_t>(hh)]));
                nn::Var k = t.matmul(h, W(b.wk[static_cast<std::size_t>(hh)]));
                nn::Var v = t.matmul(h, W(b.wv[static_cast<std::size_t>(hh)]));
                nn::Var att = t.rowwise_softmax(t.add(t.scale(t.matmul_nt(q, k), scale), maskv));
                head_outs.push_back(t.matmul(att, v));
            }
            nn::Var cat = head_outs.front();
            for (std::size_t hh = 1; hh < head_outs.size(); ++hh) cat = t.concat_cols(cat, head_outs[hh]);
            x = t.add(x, b.wo(t, store, cat, frozen));
            nn::Var m = layer_norm(t, store, x, b.ln2_g, b.ln2_b, frozen);
            x = t.add(x, b.mlp2(t, store, t.relu(b.mlp1(t, store, m, frozen)), frozen));
        }
        return layer_norm(t, store, x, final_ln_g, final_ln_b, frozen);
    }
};

// Logits for position i given tokens 0..i-1.
inline Eigen::RowVectorXd forward_logits(const Transformer& m, const std::vector<int>& prefix,
                                         const Eigen::RowVectorXd* condition = nullptr) {
    long i = static_cast<long>(prefix.size());
    if (i < 0 || i >= m.seq_len) throw DomainError("forward_logits: position out of range");
    nn::Tape t;
    nn::Var cond;
    nn::Var* condp = nullptr;
    if (condition) {
        cond = t.constant(*condition);
        condp = &cond;
    }
    nn::Var hid = m.hidden_states(t, m.params, prefix, i + 1, condp, true);
    nn::Var row = t.slice_rows(hid, i, 1);
    nn::Var logits = m.heads_out[static_cast<std::size_t>(i)](t, m.params, row, true);
    return t.value(logits).row(0);
}

inline Eigen::RowVectorXd encode_condition(const Transformer& m, const DepthImage& depth) {
    if (!m.conditional) throw DomainError("encode_condition: model is unconditional");
    nn::Tape t;
    return t.value(m.cond_encoder(t, m.params, depth, true)).row(0);
}

struct SamplingOptions {
    double top_p = 0.92;
    double temperature = 1.0;
    long top_k = 0;  // 0 disables
};

inline std::vector<int> sample_sequence(const Transformer& m, const SamplingOptions& opt, std::uint64_t seed,
                                        const Eigen::RowVectorXd* condition = nullptr) {
    std::mt19937_64 rng(seed);
    std::vector<int> tokens;
    tokens.reserve(static_cast<std::size_t>(m.seq_len));
    for (long i = 0; i < m.seq_len; ++i) {
        Eigen::RowVectorXd logits = forward_logits(m, tokens, condition);
        Eigen::RowVectorXd probs = softmax(apply_temperature(logits, opt.temperature));
        if (opt.top_k > 0) probs = top_k_filter(probs, opt.top_k);
        probs = nucleus_filter(probs, opt.top_p);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double r = u(rng), acc = 0.0;
        int pick = 0;
        for (int j = 0; j < probs.size(); ++j) {
            acc += probs(j);
            if (r <= acc) {
                pick = j;
                break;
            }
            pick = j;  // numeric slack: fall back to the last positive entry
        }
        tokens.push_back(pick);
    }
    return tokens;
}

// Teacher-forced negative log-likelihood over full sequences. Conditions,
// when given, are paired by index and trained jointly.
inline Transformer train_transformer(const std::vector<std::vector<int>>& sequences, const PipelineConfig& cfg,
                                     const std::vector<DepthImage>* conditions = nullptr, long vocab_override = -1) {
    if (sequences.empty()) throw DomainError("train_transformer: empty dataset");
    Transformer m = Transformer::build(cfg, vocab_override);
    for (const auto& s : sequences) {
        if (static_cast<long>(s.size()) != m.seq_len) throw DomainError("train_transformer: bad sequence length");
        for (int tok : s)
            if (tok < 0 || tok >= m.vocab) throw DomainError("train_transformer: token out of range");
    }
    if (conditions && conditions->size() != sequences.size())
        throw DomainError("train_transformer: condition/sequence count mismatch");
    const long epochs = cfg.integer("tf.epochs");
    nn::Adam opt;
    opt.lr = cfg.num("tf.lr");
    std::mt19937_64 order_rng(m.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(sequences.size());
    std::iota(order.begin(), order.end(), 0);
    for (long epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double epoch_loss = 0.0;
        for (std::size_t s : order) {
            nn::Tape t;
            nn::Var cond;
            nn::Var* condp = nullptr;
            if (conditions) {
                cond = m.cond_encoder(t, m.params, (*conditions)[s]);
                condp = &cond;
            }
            nn::Var hid = m.hidden_states(t, m.params, sequences[s], m.seq_len, condp, false);
            std::vector<nn::Var> logit_rows;
            for (long i = 0; i < m.seq_len; ++i)
                logit_rows.push_back(
                    m.heads_out[static_cast<std::size_t>(i)](t, m.params, t.slice_rows(hid, i, 1)));
            nn::Var logits = t.vstack(logit_rows);
            nn::Var loss = t.nll_rows(t.rowwise_log_softmax(logits), sequences[s]);
            double lv = t.value(loss)(0, 0);
            if (!std::isfinite(lv)) throw TrainingError("tf: non-finite loss at epoch " + std::to_string(epoch));
            t.backward(loss);
            opt.apply(m.params, t);
            epoch_loss += lv;
        }
        m.loss_history.push_back(epoch_loss / static_cast<double>(sequences.size()));
    }
    return m;
}

inline void save_transformer(const Transformer& m, const PipelineConfig& cfg, const std::string& path) {
    Checkpoint ck;
    ck.kind = "transformer";
    ck.seed = m.seed;
    ck.config = cfg.all();
    ck.loss_history = m.loss_history;
    ck.params = m.params;
    ck.config["tf.vocab"] = std::to_string(m.vocab);
    save_checkpoint(ck, path);
}

inline Transformer load_transformer(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "transformer") throw ParseError("not a transformer checkpoint: " + path);
    long vocab = -1;
    auto it = ck.config.find("tf.vocab");
    if (it != ck.config.end()) {
        vocab = std::stol(it->second);
        ck.config.erase(it);
    }
    PipelineConfig cfg;
    for (const auto& [k, v] : ck.config) cfg.set(k, v);
    Transformer m = Transformer::build(cfg, vocab);
    copy_params_by_name(m.params, ck.params);
    m.loss_history = ck.loss_history;
    return m;
}

}  // namespace pcsq
