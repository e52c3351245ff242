#pragma once

// Stage A: canonical auto-encoder. An edge-convolution encoder compresses a
// cloud into one global latent; a per-point decoder maps canonical sphere
// points, conditioned on that latent, back to the shape. Correspondences
// between a cloud and the sphere are traced through the reconstruction.

#include <random>
#include <vector>

#include "pcsq/checkpoint.hpp"
#include "pcsq/config.hpp"
#include "pcsq/geometry.hpp"
#include "pcsq/nn.hpp"

namespace pcsq {

// k nearest neighbors by Euclidean distance, self excluded, ties by index.
inline std::vector<int> knn_indices(const std::vector<Vec3>& pts, std::size_t center, std::size_t k) {
    std::vector<std::pair<double, int>> d;
    d.reserve(pts.size() - 1);
    for (std::size_t j = 0; j < pts.size(); ++j) {
        if (j == center) continue;
        d.emplace_back((pts[j] - pts[center]).squaredNorm(), static_cast<int>(j));
    }
    std::partial_sort(d.begin(), d.begin() + static_cast<long>(std::min(k, d.size())), d.end());
    std::vector<int> out;
    for (std::size_t t = 0; t < std::min(k, d.size()); ++t) out.push_back(d[t].second);
    return out;
}

struct Correspondence {
    std::vector<std::size_t> forward;  // input point index -> sphere index
    std::vector<std::size_t> inverse;  // sphere index -> input point index
};

// Stack of edge convolutions: per point, neighbor feature differences pass
// through a shared linear+relu and are max-reduced. A final per-point linear
// yields the point-wise feature; the global latent is a linear map of the
// max pool over points.
struct EdgeConvEncoder {
    std::vector<long> widths;
    long latent = 0;
    long knn = 20;
    std::vector<nn::Linear> convs;
    nn::Linear to_point;
    nn::Linear to_global;

    EdgeConvEncoder() = default;
    EdgeConvEncoder(nn::ParamStore& store, const std::string& prefix, std::vector<long> widths_, long latent_,
                    long knn_, std::mt19937_64& rng)
        : widths(std::move(widths_)), latent(latent_), knn(knn_) {
        long in = 3;
        for (std::size_t l = 0; l < widths.size(); ++l) {
            convs.emplace_back(store, prefix + ".conv" + std::to_string(l), 2 * in, widths[l], rng);
            in = widths[l];
        }
        to_point = nn::Linear(store, prefix + ".to_point", in, latent, rng);
        to_global = nn::Linear(store, prefix + ".to_global", latent, latent, rng);
    }

    // M x latent point-wise features. The k-NN graph is built once on input
    // coordinates (static graph variant).
    nn::Var pointwise(nn::Tape& t, const nn::ParamStore& store, const PointCloud& pc, bool frozen = false) const {
        const std::size_t n = pc.size();
        if (n < static_cast<std::size_t>(knn) + 1) throw DomainError("encoder: cloud too small for k-NN graph");
        std::vector<int> centers, neighbors;
        centers.reserve(n * static_cast<std::size_t>(knn));
        neighbors.reserve(n * static_cast<std::size_t>(knn));
        std::vector<int> seg(n * static_cast<std::size_t>(knn));
        for (std::size_t i = 0; i < n; ++i) {
            auto nb = knn_indices(pc.points, i, static_cast<std::size_t>(knn));
            for (int j : nb) {
                centers.push_back(static_cast<int>(i));
                neighbors.push_back(j);
            }
        }
        for (std::size_t e = 0; e < seg.size(); ++e) seg[e] = centers[e];

        nn::Var h = t.constant(pc.matrix());
        for (const auto& conv : convs) {
            nn::Var hc = t.gather_rows(h, centers);
            nn::Var hn = t.gather_rows(h, neighbors);
            nn::Var edge = t.concat_cols(hc, t.sub(hn, hc));
            nn::Var act = t.relu(conv(t, store, edge, frozen));
            h = t.segment_max(act, seg, static_cast<int>(n));
        }
        return to_point(t, store, h, frozen);
    }

    // 1 x latent global code: max pool over point-wise features + linear.
    nn::Var global(nn::Tape& t, const nn::ParamStore& store, nn::Var point_features, bool frozen = false) const {
        std::vector<int> seg(static_cast<std::size_t>(t.value(point_features).rows()), 0);
        nn::Var pooled = t.segment_max(point_features, seg, 1);
        return to_global(t, store, pooled, frozen);
    }
};

// Per-point decoder on [sphere point (+) latent] with two rounds of
// latent-derived feature-wise affine modulation. An optional graph-attention
// block over the sphere's k-NN graph refines the spatial branch.
struct SphereDecoder {
    long latent = 0;
    long hidden = 0;
    bool graph_attention = false;
    long ga_knn = 8;
    nn::Linear lin_in, lin_mid, lin_out;
    nn::Linear style1_gain, style1_bias, style2_gain, style2_bias;
    nn::Linear ga_proj;
    int ga_attn = -1;  // 2*hidden x 1 attention vector

    SphereDecoder() = default;
    SphereDecoder(nn::ParamStore& store, const std::string& prefix, long latent_, long hidden_, bool graph_attention_,
                  std::mt19937_64& rng)
        : latent(latent_), hidden(hidden_), graph_attention(graph_attention_) {
        lin_in = nn::Linear(store, prefix + ".in", 3 + latent, hidden, rng);
        lin_mid = nn::Linear(store, prefix + ".mid", hidden, hidden, rng);
        lin_out = nn::Linear(store, prefix + ".out", hidden, 3, rng);
        style1_gain = nn::Linear(store, prefix + ".style1_gain", latent, hidden, rng);
        style1_bias = nn::Linear(store, prefix + ".style1_bias", latent, hidden, rng);
        style2_gain = nn::Linear(store, prefix + ".style2_gain", latent, hidden, rng);
        style2_bias = nn::Linear(store, prefix + ".style2_bias", latent, hidden, rng);
        if (graph_attention) {
            ga_proj = nn::Linear(store, prefix + ".ga_proj", hidden, hidden, rng);
            ga_attn = store.add(prefix + ".ga_attn", nn::glorot(2 * hidden, 1, rng));
        }
    }

    nn::Var modulate(nn::Tape& t, const nn::ParamStore& store, nn::Var h, nn::Var z, const nn::Linear& gain,
                     const nn::Linear& bias, bool frozen) const {
        nn::Var g = gain(t, store, z, frozen);  // 1 x hidden
        nn::Var b = bias(t, store, z, frozen);
        nn::Var ones = t.constant(nn::Mat::Ones(1, hidden));
        return t.add_rowvec(t.mul_rowvec(h, t.add(ones, g)), b);
    }

    // Decode with a per-group feature matrix: row i of `z_rows` conditions
    // sphere point i. The canonical auto-encoder passes the same global
    // latent for every row.
    nn::Var decode_rows(nn::Tape& t, const nn::ParamStore& store, const CanonicalSphere& sphere, nn::Var z_rows,
                        nn::Var z_style, bool frozen = false) const {
        nn::Var coords = t.constant(sphere.as_cloud().matrix());
        nn::Var h = t.relu(lin_in(t, store, t.concat_cols(coords, z_rows), frozen));
        if (graph_attention) h = attention_block(t, store, h, sphere, frozen);
        h = modulate(t, store, h, z_style, style1_gain, style1_bias, frozen);
        h = t.relu(lin_mid(t, store, h, frozen));
        h = modulate(t, store, h, z_style, style2_gain, style2_bias, frozen);
        return lin_out(t, store, h, frozen);
    }

    nn::Var decode_global(nn::Tape& t, const nn::ParamStore& store, const CanonicalSphere& sphere, nn::Var z,
                          bool frozen = false) const {
        nn::Var ones = t.constant(nn::Mat::Ones(static_cast<Eigen::Index>(sphere.size()), 1));
        return decode_rows(t, store, sphere, t.matmul(ones, z), z, frozen);
    }

private:
    nn::Var attention_block(nn::Tape& t, const nn::ParamStore& store, nn::Var h, const CanonicalSphere& sphere,
                            bool frozen) const {
        const std::size_t n = sphere.size();
        const std::size_t k = std::min(static_cast<std::size_t>(ga_knn), n - 1);
        std::vector<int> centers, neighbors;
        for (std::size_t i = 0; i < n; ++i) {
            auto nb = knn_indices(sphere.points, i, k);
            for (int j : nb) {
                centers.push_back(static_cast<int>(i));
                neighbors.push_back(j);
            }
        }
        nn::Var hw = ga_proj(t, store, h, frozen);
        nn::Var src = t.gather_rows(hw, centers);
        nn::Var dst = t.gather_rows(hw, neighbors);
        nn::Var a = frozen ? store.use_frozen(t, ga_attn) : store.use(t, ga_attn);
        nn::Var scores = t.leaky_relu(t.matmul(t.concat_cols(src, dst), a), 0.2);
        nn::Var alpha = t.rowwise_softmax(
            t.reshape_rowmajor(scores, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)));
        return t.relu(t.weighted_neighbor_sum(alpha, dst));
    }
};

struct CanonicalAE {
    long sphere_points = 0;
    long latent = 0;
    long knn = 20;
    std::vector<long> enc_widths;
    long dec_hidden = 0;
    bool use_emd = true;
    bool graph_attention = false;
    std::uint64_t seed = 0;

    nn::ParamStore params;
    EdgeConvEncoder encoder;
    SphereDecoder decoder;
    std::vector<double> loss_history;

    static CanonicalAE build(const PipelineConfig& cfg) {
        CanonicalAE ae;
        ae.sphere_points = cfg.integer("model.sphere_points");
        ae.latent = cfg.integer("model.latent_dim");
        ae.knn = cfg.integer("model.knn");
        ae.enc_widths = cfg.int_list("cae.enc_widths");
        ae.dec_hidden = cfg.integer("cae.dec_hidden");
        ae.use_emd = cfg.flag("cae.use_emd_loss");
        ae.graph_attention = cfg.flag("cae.graph_attention");
        ae.seed = cfg.seed("cae.seed");
        std::mt19937_64 rng(ae.seed);
        ae.encoder = EdgeConvEncoder(ae.params, "enc", ae.enc_widths, ae.latent, ae.knn, rng);
        ae.decoder = SphereDecoder(ae.params, "dec", ae.latent, ae.dec_hidden, ae.graph_attention, rng);
        return ae;
    }
};

inline Eigen::RowVectorXd encode_shape(const CanonicalAE& ae, const PointCloud& pc) {
    nn::Tape t;
    nn::Var pw = ae.encoder.pointwise(t, ae.params, pc, true);
    nn::Var z = ae.encoder.global(t, ae.params, pw, true);
    return t.value(z).row(0);
}

inline PointCloud decode_from_sphere(const CanonicalAE& ae, const CanonicalSphere& sphere,
                                     const Eigen::RowVectorXd& z) {
    nn::Tape t;
    nn::Var zv = t.constant(z);
    nn::Var out = ae.decoder.decode_global(t, ae.params, sphere, zv, true);
    return PointCloud::from_matrix(t.value(out));
}

inline PointCloud reconstruct(const CanonicalAE& ae, const CanonicalSphere& sphere, const PointCloud& pc) {
    return decode_from_sphere(ae, sphere, encode_shape(ae, pc));
}

// Forward: sphere index of the reconstructed point nearest each input point.
// Inverse: input point index nearest each reconstructed point. Reconstructed
// points are in sphere order, so their indices are sphere indices.
inline Correspondence trace_correspondence(const CanonicalAE& ae, const PointCloud& pc,
                                           const CanonicalSphere& sphere) {
    PointCloud recon = reconstruct(ae, sphere, pc);
    Correspondence corr;
    corr.forward.resize(pc.size());
    corr.inverse.resize(recon.size());
    for (std::size_t i = 0; i < pc.size(); ++i) {
        std::size_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < recon.size(); ++j) {
            double d = (pc.points[i] - recon.points[j]).squaredNorm();
            if (d < bd) {
                bd = d;
                best = j;
            }
        }
        corr.forward[i] = best;
    }
    for (std::size_t j = 0; j < recon.size(); ++j) {
        std::size_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < pc.size(); ++i) {
            double d = (pc.points[i] - recon.points[j]).squaredNorm();
            if (d < bd) {
                bd = d;
                best = i;
            }
        }
        corr.inverse[j] = best;
    }
    return corr;
}

inline CanonicalAE train_canonical_ae(const std::vector<PointCloud>& dataset, const PipelineConfig& cfg) {
    if (dataset.empty()) throw DomainError("train_canonical_ae: empty dataset");
    for (const auto& pc : dataset)
        if (pc.size() != dataset.front().size()) throw DomainError("train_canonical_ae: unequal cloud sizes");
    CanonicalAE ae = CanonicalAE::build(cfg);
    CanonicalSphere sphere = fibonacci_sphere(static_cast<std::size_t>(ae.sphere_points));
    const long epochs = cfg.integer("cae.epochs");
    const long batch = std::max(1L, cfg.integer("cae.batch"));
    nn::Adam opt;
    opt.lr = cfg.num("cae.lr");
    std::mt19937_64 order_rng(ae.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (long epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double epoch_loss = 0.0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch)) {
            nn::Tape t;
            nn::Var total = t.constant(nn::Mat::Zero(1, 1));
            std::size_t in_batch = 0;
            for (std::size_t b = at; b < std::min(order.size(), at + static_cast<std::size_t>(batch)); ++b) {
                const PointCloud& x = dataset[order[b]];
                nn::Var pw = ae.encoder.pointwise(t, ae.params, x);
                nn::Var z = ae.encoder.global(t, ae.params, pw);
                nn::Var xhat = ae.decoder.decode_global(t, ae.params, sphere, z);
                nn::Var loss = t.chamfer_loss(xhat, x);
                if (ae.use_emd) {
                    if (x.size() != sphere.size())
                        throw DomainError("cae: EMD loss needs sphere_points == points_per_shape");
                    loss = t.add(loss, t.emd_loss(xhat, x));
                }
                total = t.add(total, loss);
                ++in_batch;
            }
            total = t.scale(total, 1.0 / static_cast<double>(in_batch));
            double lv = t.value(total)(0, 0);
            if (!std::isfinite(lv)) throw TrainingError("cae: non-finite loss at epoch " + std::to_string(epoch));
            t.backward(total);
            opt.apply(ae.params, t);
            epoch_loss += lv * static_cast<double>(in_batch);
        }
        ae.loss_history.push_back(epoch_loss / static_cast<double>(dataset.size()));
    }
    return ae;
}

// --- checkpoint glue --------------------------------------------------------

inline void save_cae(const CanonicalAE& ae, const PipelineConfig& cfg, const std::string& path) {
    Checkpoint ck;
    ck.kind = "cae";
    ck.seed = ae.seed;
    ck.config = cfg.all();
    ck.loss_history = ae.loss_history;
    ck.params = ae.params;
    save_checkpoint(ck, path);
}

inline CanonicalAE load_cae(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "cae") throw ParseError("not a cae checkpoint: " + path);
    CanonicalAE ae = CanonicalAE::build(config_from_checkpoint(ck));
    copy_params_by_name(ae.params, ck.params);
    ae.loss_history = ck.loss_history;
    return ae;
}

}  // namespace pcsq
