#pragma once

// Stage C: grouped vector-quantized auto-encoder. Point features are pooled
// per shape composition, projected 256 -> 4, snapped to the nearest entry of
// that group's codebook, projected back up and decoded against the sphere.
// Codebooks are maintained by exponential moving averages; the encoder sees
// gradients through the straight-through estimator.

#include <random>
#include <vector>

#include "pcsq/grouping.hpp"

namespace pcsq {

struct TokenSequence {
    std::vector<int> tokens;  // one per group, in group order
};

struct GroupFeature {
    nn::Mat z;               // G x latent, group-id order
    std::vector<bool> mask;  // true where the group is nonempty
};

struct QuantizeResult {
    std::vector<int> tokens;  // per group id
    nn::Mat z_hat;            // G x code_dim, down-projected features
    nn::Mat z_q_low;          // G x code_dim, selected codes
    nn::Mat z_q;              // G x latent, up-projected codes
};

struct VqCodec {
    long groups = 0;
    long entries = 50;
    long code_dim = 4;
    long latent = 256;
    double ema_decay = 0.99;
    double ema_eps = 1e-5;
    bool shared_codebook = false;
    bool per_group_projections = false;
    bool use_emd = true;
    long sphere_points = 0;
    std::uint64_t seed = 0;

    nn::ParamStore params;
    EdgeConvEncoder encoder;
    SphereDecoder decoder;
    nn::Linear down, up;                  // shared projections
    std::vector<nn::Linear> down_g, up_g;  // per-group projections (flag)
    int codebook = -1;      // rows x code_dim; rows = G*entries (grouped) or entries pool (shared)
    int ema_size = -1;      // rows x 1
    int ema_sum = -1;       // rows x code_dim
    int dead_steps = -1;    // rows x 1, consecutive low-usage steps
    std::vector<double> loss_history;

    long codebook_rows() const { return shared_codebook ? groups * entries : groups * entries; }
    long vocab() const { return shared_codebook ? groups * entries : entries; }

    static VqCodec build(const PipelineConfig& cfg) {
        VqCodec c;
        c.groups = cfg.integer("model.groups");
        c.entries = cfg.integer("vq.codebook_entries");
        c.code_dim = cfg.integer("vq.code_dim");
        c.latent = cfg.integer("model.latent_dim");
        c.ema_decay = cfg.num("vq.ema_decay");
        c.ema_eps = cfg.num("vq.ema_eps");
        c.shared_codebook = cfg.flag("vq.shared_codebook");
        c.per_group_projections = cfg.flag("vq.per_group_projections");
        c.use_emd = cfg.flag("vq.use_emd_loss");
        c.sphere_points = cfg.integer("model.sphere_points");
        c.seed = cfg.seed("vq.seed");
        std::mt19937_64 rng(c.seed);
        c.encoder = EdgeConvEncoder(c.params, "vq.enc", cfg.int_list("vq.enc_widths"), c.latent,
                                    cfg.integer("model.knn"), rng);
        c.decoder = SphereDecoder(c.params, "vq.dec", c.latent, cfg.integer("vq.dec_hidden"), false, rng);
        if (c.per_group_projections) {
            for (long g = 0; g < c.groups; ++g) {
                c.down_g.emplace_back(c.params, "vq.down" + std::to_string(g), c.latent, c.code_dim, rng);
                c.up_g.emplace_back(c.params, "vq.up" + std::to_string(g), c.code_dim, c.latent, rng);
            }
        } else {
            c.down = nn::Linear(c.params, "vq.down", c.latent, c.code_dim, rng);
            c.up = nn::Linear(c.params, "vq.up", c.code_dim, c.latent, rng);
        }
        long rows = c.codebook_rows();
        c.codebook = c.params.add("vq.codebook", nn::gaussian(rows, c.code_dim, 0.5, rng), false);
        c.ema_size = c.params.add("vq.ema_size", nn::Mat::Zero(rows, 1), false);
        c.ema_sum = c.params.add("vq.ema_sum", nn::Mat::Zero(rows, c.code_dim), false);
        c.dead_steps = c.params.add("vq.dead_steps", nn::Mat::Zero(rows, 1), false);
        return c;
    }

    // Codebook row range searched for group g.
    std::pair<long, long> search_range(long g) const {
        if (shared_codebook) return {0, groups * entries};
        return {g * entries, (g + 1) * entries};
    }
};

// Group id of each input point: label of its traced sphere point.
inline std::vector<int> point_groups(const Correspondence& corr, const GroupAssignment& ga) {
    std::vector<int> out(corr.forward.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ga.labels[corr.forward[i]];
    return out;
}

inline GroupFeature encode_groups(const VqCodec& codec, const PointCloud& pc, const GroupAssignment& ga,
                                  const Correspondence& corr) {
    nn::Tape t;
    nn::Var pw = codec.encoder.pointwise(t, codec.params, pc, true);
    std::vector<int> seg = point_groups(corr, ga);
    nn::Var pooled = t.segment_max(pw, seg, static_cast<int>(codec.groups));
    GroupFeature gf;
    gf.z = t.value(pooled);
    gf.mask.assign(static_cast<std::size_t>(codec.groups), false);
    for (int g : seg) gf.mask[static_cast<std::size_t>(g)] = true;
    return gf;
}

// Nearest-entry lookup per group; ties go to the lower index within the
// searched range.
inline int nearest_code(const nn::Mat& codebook, long lo, long hi, const Eigen::RowVectorXd& zhat) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (long r = lo; r < hi; ++r) {
        double d = (codebook.row(r) - zhat).squaredNorm();
        if (d < bd) {
            bd = d;
            best = static_cast<int>(r - lo);
        }
    }
    return best;
}

inline QuantizeResult quantize(const VqCodec& codec, const GroupFeature& gf) {
    nn::Tape t;
    nn::Var z = t.constant(gf.z);
    nn::Mat zhat(codec.groups, codec.code_dim);
    if (codec.per_group_projections) {
        for (long g = 0; g < codec.groups; ++g)
            zhat.row(g) = t.value(codec.down_g[static_cast<std::size_t>(g)](t, codec.params,
                                                                            t.slice_rows(z, g, 1), true));
    } else {
        zhat = t.value(codec.down(t, codec.params, z, true));
    }
    const nn::Mat& cb = codec.params[codec.codebook];
    QuantizeResult q;
    q.z_hat = zhat;
    q.z_q_low.resize(codec.groups, codec.code_dim);
    q.tokens.resize(static_cast<std::size_t>(codec.groups));
    for (long g = 0; g < codec.groups; ++g) {
        auto [lo, hi] = codec.search_range(g);
        int tok = nearest_code(cb, lo, hi, zhat.row(g));
        q.tokens[static_cast<std::size_t>(g)] = tok;
        q.z_q_low.row(g) = cb.row(lo + tok);
    }
    nn::Var low = t.constant(q.z_q_low);
    if (codec.per_group_projections) {
        q.z_q.resize(codec.groups, codec.latent);
        for (long g = 0; g < codec.groups; ++g)
            q.z_q.row(g) =
                t.value(codec.up_g[static_cast<std::size_t>(g)](t, codec.params, t.slice_rows(low, g, 1), true));
    } else {
        q.z_q = t.value(codec.up(t, codec.params, low, true));
    }
    return q;
}

// Decode at the resolution of `sphere`: each sphere point takes the quantized
// feature of its group label.
inline PointCloud decode_groups(const VqCodec& codec, const CanonicalSphere& sphere, const nn::Mat& z_q,
                                const std::vector<int>& sphere_labels) {
    if (z_q.rows() != codec.groups) throw DomainError("decode_groups: feature row count != G");
    if (sphere_labels.size() != sphere.size()) throw DomainError("decode_groups: label count != sphere size");
    nn::Tape t;
    nn::Var zq = t.constant(z_q);
    nn::Var rows = t.gather_rows(zq, sphere_labels);
    nn::Var style = t.scale(t.colsum(zq), 1.0 / static_cast<double>(codec.groups));
    nn::Var out = codec.decoder.decode_rows(t, codec.params, sphere, rows, style, true);
    return PointCloud::from_matrix(t.value(out));
}

struct EmaBatchItem {
    long group = 0;
    Eigen::RowVectorXd z_hat;
    int token = 0;
};

// Decay statistics, fold in the batch, and refresh entries that received
// assignments. Unassigned entries keep their value. Entries whose cluster
// size stays below threshold for 100 consecutive updates are re-seeded from
// a random batch feature.
inline void ema_update(VqCodec& codec, const std::vector<EmaBatchItem>& batch, std::mt19937_64* revival_rng = nullptr) {
    nn::Mat& cb = codec.params[codec.codebook];
    nn::Mat& cs = codec.params[codec.ema_size];
    nn::Mat& es = codec.params[codec.ema_sum];
    nn::Mat& dead = codec.params[codec.dead_steps];
    const double g = codec.ema_decay;
    cs *= g;
    es *= g;
    std::vector<char> touched(static_cast<std::size_t>(cb.rows()), 0);
    for (const auto& item : batch) {
        auto [lo, hi] = codec.search_range(item.group);
        long r = lo + item.token;
        cs(r, 0) += (1.0 - g);
        es.row(r) += (1.0 - g) * item.z_hat;
        touched[static_cast<std::size_t>(r)] = 1;
    }
    // Laplace smoothing is applied within each group's slice of the table.
    long slice = codec.shared_codebook ? cb.rows() : codec.entries;
    for (long base = 0; base < cb.rows(); base += slice) {
        double n = cs.middleRows(base, slice).sum();
        for (long r = base; r < base + slice; ++r) {
            if (!touched[static_cast<std::size_t>(r)]) continue;
            double denom = (cs(r, 0) + codec.ema_eps) / (n + static_cast<double>(slice) * codec.ema_eps) * n;
            cb.row(r) = es.row(r) / std::max(denom, 1e-12);
        }
    }
    for (long r = 0; r < cb.rows(); ++r) {
        dead(r, 0) = cs(r, 0) < 1e-3 ? dead(r, 0) + 1.0 : 0.0;
        if (dead(r, 0) >= 100.0 && revival_rng && !batch.empty()) {
            std::uniform_int_distribution<std::size_t> d(0, batch.size() - 1);
            cb.row(r) = batch[d(*revival_rng)].z_hat;
            cs(r, 0) = 1.0;
            es.row(r) = cb.row(r);
            dead(r, 0) = 0.0;
        }
    }
}

// Percentage of (position, entry) pairs seen at least once.
inline double codebook_usage(long groups, long vocab, const std::vector<TokenSequence>& sequences) {
    if (sequences.empty()) throw DomainError("codebook_usage: empty dataset");
    std::vector<char> used(static_cast<std::size_t>(groups * vocab), 0);
    for (const auto& s : sequences) {
        if (static_cast<long>(s.tokens.size()) != groups) throw DomainError("codebook_usage: bad sequence length");
        for (long p = 0; p < groups; ++p)
            used[static_cast<std::size_t>(p * vocab + s.tokens[static_cast<std::size_t>(p)])] = 1;
    }
    long count = 0;
    for (char u : used) count += u;
    return 100.0 * static_cast<double>(count) / static_cast<double>(groups * vocab);
}

inline TokenSequence encode_to_tokens(const CanonicalAE& cae, const GroupingNet& grouping_net,
                                      const GroupAssignment& ga, const VqCodec& codec, const PointCloud& pc) {
    CanonicalSphere sphere = fibonacci_sphere(static_cast<std::size_t>(codec.sphere_points));
    Correspondence corr = trace_correspondence(cae, pc, sphere);
    GroupFeature gf = encode_groups(codec, pc, ga, corr);
    QuantizeResult q = quantize(codec, gf);
    TokenSequence s;
    s.tokens.reserve(static_cast<std::size_t>(codec.groups));
    for (int g : ga.group_order) s.tokens.push_back(q.tokens[static_cast<std::size_t>(g)]);
    return s;
}

// Quantized features in group-id order from a sequence in group order.
inline nn::Mat tokens_to_features(const VqCodec& codec, const GroupAssignment& ga, const TokenSequence& seq) {
    nn::Mat low(codec.groups, codec.code_dim);
    const nn::Mat& cb = codec.params[codec.codebook];
    for (long p = 0; p < codec.groups; ++p) {
        long g = ga.group_order[static_cast<std::size_t>(p)];
        auto [lo, hi] = codec.search_range(g);
        low.row(g) = cb.row(lo + seq.tokens[static_cast<std::size_t>(p)]);
    }
    nn::Tape t;
    nn::Var lv = t.constant(low);
    if (codec.per_group_projections) {
        nn::Mat zq(codec.groups, codec.latent);
        for (long g = 0; g < codec.groups; ++g)
            zq.row(g) = t.value(codec.up_g[static_cast<std::size_t>(g)](t, codec.params, t.slice_rows(lv, g, 1), true));
        return zq;
    }
    return t.value(codec.up(t, codec.params, lv, true));
}

inline VqCodec train_vqvae(const std::vector<PointCloud>& dataset, const CanonicalAE& cae,
                           const GroupAssignment& ga, const PipelineConfig& cfg) {
    if (dataset.empty()) throw DomainError("train_vqvae: empty dataset");
    VqCodec codec = VqCodec::build(cfg);
    CanonicalSphere sphere = fibonacci_sphere(static_cast<std::size_t>(codec.sphere_points));

    // Frozen upstream stages fix each shape's point-group segmentation.
    std::vector<std::vector<int>> segs;
    segs.reserve(dataset.size());
    for (const auto& pc : dataset) segs.push_back(point_groups(trace_correspondence(cae, pc, sphere), ga));
    std::vector<int> sphere_labels = ga.labels;

    const long epochs = cfg.integer("vq.epochs");
    nn::Adam opt;
    opt.lr = cfg.num("vq.lr");
    std::mt19937_64 order_rng(codec.seed ^ 0x9e3779b97f4a7c15ull);
    std::mt19937_64 revival_rng(codec.seed ^ 0x5851f42d4c957f2dull);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (long epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double epoch_loss = 0.0;
        for (std::size_t s : order) {
            const PointCloud& x = dataset[s];
            nn::Tape t;
            nn::Var pw = codec.encoder.pointwise(t, codec.params, x);
            nn::Var z = t.segment_max(pw, segs[s], static_cast<int>(codec.groups));
            nn::Var zhat;
            if (codec.per_group_projections) {
                std::vector<nn::Var> rows;
                for (long g = 0; g < codec.groups; ++g)
                    rows.push_back(codec.down_g[static_cast<std::size_t>(g)](t, codec.params, t.slice_rows(z, g, 1)));
                zhat = t.vstack(rows);
            } else {
                zhat = codec.down(t, codec.params, z);
            }
            // Nearest-code lookup on current values.
            const nn::Mat& cb = codec.params[codec.codebook];
            nn::Mat zhat_v = t.value(zhat);
            nn::Mat z_q_low(codec.groups, codec.code_dim);
            std::vector<EmaBatchItem> ema_batch;
            for (long g = 0; g < codec.groups; ++g) {
                auto [lo, hi] = codec.search_range(g);
                int tok = nearest_code(cb, lo, hi, zhat_v.row(g));
                z_q_low.row(g) = cb.row(lo + tok);
                ema_batch.push_back({g, zhat_v.row(g), tok});
            }
            // Straight-through across the lookup; commitment pulls zhat
            // toward the (gradient-stopped) chosen code.
            nn::Var st = t.straight_through(zhat, z_q_low);
            nn::Var zq;
            if (codec.per_group_projections) {
                std::vector<nn::Var> rows;
                for (long g = 0; g < codec.groups; ++g)
                    rows.push_back(codec.up_g[static_cast<std::size_t>(g)](t, codec.params, t.slice_rows(st, g, 1)));
                zq = t.vstack(rows);
            } else {
                zq = codec.up(t, codec.params, st);
            }
            nn::Var z_rows = t.gather_rows(zq, sphere_labels);
            nn::Var style = t.scale(t.colsum(zq), 1.0 / static_cast<double>(codec.groups));
            nn::Var xhat = codec.decoder.decode_rows(t, codec.params, sphere, z_rows, style);
            nn::Var loss = t.chamfer_loss(xhat, x);
            if (codec.use_emd) {
                if (x.size() != sphere.size())
                    throw DomainError("vq: EMD loss needs sphere_points == points_per_shape");
                loss = t.add(loss, t.emd_loss(xhat, x));
            }
            nn::Var resid = t.sub(zhat, t.constant(z_q_low));
            nn::Var commit = t.scale(t.sum_all(t.cmul(resid, resid)), 1.0 / static_cast<double>(codec.groups));
            loss = t.add(loss, commit);
            double lv = t.value(loss)(0, 0);
            if (!std::isfinite(lv)) throw TrainingError("vq: non-finite loss at epoch " + std::to_string(epoch));
            t.backward(loss);
            opt.apply(codec.params, t);
            ema_update(codec, ema_batch, &revival_rng);
            epoch_loss += lv;
        }
        codec.loss_history.push_back(epoch_loss / static_cast<double>(dataset.size()));
    }
    return codec;
}

inline void save_vq(const VqCodec& codec, const PipelineConfig& cfg, const std::string& path) {
    Checkpoint ck;
    ck.kind = "vq";
    ck.seed = codec.seed;
    ck.config = cfg.all();
    ck.loss_history = codec.loss_history;
    ck.params = codec.params;
    save_checkpoint(ck, path);
}

inline VqCodec load_vq(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "vq") throw ParseError("not a vq checkpoint: " + path);
    VqCodec codec = VqCodec::build(config_from_checkpoint(ck));
    copy_params_by_name(codec.params, ck.params);
    codec.loss_history = ck.loss_history;
    return codec;
}

// Token sequences as comma-separated integers, one shape per line.
inline void save_token_sequences(const std::vector<TokenSequence>& seqs, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    for (const auto& s : seqs) {
        for (std::size_t i = 0; i < s.tokens.size(); ++i) f << (i ? "," : "") << s.tokens[i];
        f << '\n';
    }
}

inline std::vector<TokenSequence> load_token_sequences(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::vector<TokenSequence> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        TokenSequence s;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) s.tokens.push_back(std::stoi(tok));
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace pcsq
