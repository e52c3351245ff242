#pragma once

// Four-stage pipeline orchestration. Each stage trains against the synthetic
// dataset described by the config, consumes the upstream checkpoints from the
// artifact directory, and leaves its own checkpoint plus a loss-history
// sidecar behind.

#include <filesystem>
#include <string>
#include <vector>

#include "pcsq/metrics.hpp"
#include "pcsq/transformer.hpp"
#include "pcsq/vq.hpp"

namespace pcsq {

struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Stage { A, B, C, D };

inline Stage stage_from_string(const std::string& s) {
    if (s == "A" || s == "a" || s == "cae") return Stage::A;
    if (s == "B" || s == "b" || s == "group") return Stage::B;
    if (s == "C" || s == "c" || s == "vq") return Stage::C;
    if (s == "D" || s == "d" || s == "transformer") return Stage::D;
    throw DomainError("unknown stage: " + s);
}

namespace paths {
inline std::string cae(const std::string& dir) { return dir + "/cae.ckpt"; }
inline std::string group(const std::string& dir) { return dir + "/group.ckpt"; }
inline std::string vq(const std::string& dir) { return dir + "/vq.ckpt"; }
inline std::string transformer(const std::string& dir) { return dir + "/transformer.ckpt"; }
inline std::string tokens(const std::string& dir) { return dir + "/tokens.csv"; }
}  // namespace paths

namespace detail {
inline void require_checkpoint(const std::string& path, const std::string& stage) {
    if (!std::filesystem::exists(path))
        throw DependencyError("missing stage " + stage + " checkpoint: " + path + " (run stage " + stage +
                              " first)");
}

inline void write_loss_sidecar(const std::vector<double>& history, const std::string& ckpt_path) {
    std::ofstream f(ckpt_path + ".loss.txt");
    if (!f) throw IoError("cannot write loss sidecar for " + ckpt_path);
    f.precision(10);
    for (double v : history) f << v << '\n';
}
}  // namespace detail

inline std::vector<PointCloud> pipeline_train_set(const PipelineConfig& cfg) {
    return synth_dataset(shape_family_from_string(cfg.str("data.family")),
                         static_cast<std::size_t>(cfg.integer("data.train_count")),
                         static_cast<std::size_t>(cfg.integer("data.points_per_shape")), cfg.seed("data.seed"))
        .samples;
}

inline std::vector<PointCloud> pipeline_test_set(const PipelineConfig& cfg) {
    return synth_dataset(shape_family_from_string(cfg.str("data.family")),
                         static_cast<std::size_t>(cfg.integer("data.test_count")),
                         static_cast<std::size_t>(cfg.integer("data.points_per_shape")),
                         cfg.seed("data.seed") ^ 0x7f4a7c15u, "test")
        .samples;
}

// The canonical-sphere decomposition for any resolution. The grouping net is
// a function of sphere coordinates, so labels are recomputable at arbitrary
// M; the uniform baseline redraws centers with the stage-B seed.
inline GroupAssignment pipeline_assignment(GroupingNet& net, const PipelineConfig& cfg,
                                           const CanonicalSphere& sphere) {
    GroupOrderKind order = group_order_from_string(cfg.str("group.order"));
    std::uint64_t seed = cfg.seed("group.seed");
    if (cfg.flag("group.uniform_baseline"))
        return uniform_grouping(sphere, static_cast<int>(cfg.integer("model.groups")), seed, order);
    return assign_groups(grouping_forward(net, sphere), order, seed);
}

inline std::string run_stage(Stage stage, const PipelineConfig& cfg, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::vector<PointCloud> train = pipeline_train_set(cfg);
    switch (stage) {
        case Stage::A: {
            CanonicalAE ae = train_canonical_ae(train, cfg);
            save_cae(ae, cfg, paths::cae(dir));
            detail::write_loss_sidecar(ae.loss_history, paths::cae(dir));
            return paths::cae(dir);
        }
        case Stage::B: {
            detail::require_checkpoint(paths::cae(dir), "A");
            CanonicalAE ae = load_cae(paths::cae(dir));
            GroupingNet net = train_grouping(train, ae, cfg);
            save_grouping(net, cfg, paths::group(dir));
            detail::write_loss_sidecar(net.loss_history, paths::group(dir));
            return paths::group(dir);
        }
        case Stage::C: {
            detail::require_checkpoint(paths::cae(dir), "A");
            detail::require_checkpoint(paths::group(dir), "B");
            CanonicalAE ae = load_cae(paths::cae(dir));
            GroupingNet net = load_grouping(paths::group(dir));
            CanonicalSphere sphere = fibonacci_sphere(static_cast<std::size_t>(ae.sphere_points));
            GroupAssignment ga = pipeline_assignment(net, cfg, sphere);
            VqCodec codec = train_vqvae(train, ae, ga, cfg);
            save_vq(codec, cfg, paths::vq(dir));
            detail::write_loss_sidecar(codec.loss_history, paths::vq(dir));
            std::vector<TokenSequence> seqs;
            for (const auto& pc : train) seqs.push_back(encode_to_tokens(ae, net, ga, codec, pc));
            save_token_sequences(seqs, paths::tokens(dir));
            return paths::vq(dir);
        }
        case Stage::D: {
            detail::require_checkpoint(paths::cae(dir), "A");
            detail::require_checkpoint(paths::group(dir), "B");
            detail::require_checkpoint(paths::vq(dir), "C");
            VqCodec codec = load_vq(paths::vq(dir));
            std::vector<TokenSequence> seqs = load_token_sequences(paths::tokens(dir));
            std::vector<std::vector<int>> data;
            for (const auto& s : seqs) data.push_back(s.tokens);
            std::vector<DepthImage> depths;
            const std::vector<DepthImage>* cond = nullptr;
            if (cfg.flag("tf.conditional")) {
                long res = cfg.integer("tf.depth_res");
                for (const auto& pc : train) depths.push_back(render_depth(pc, res));
                if (depths.size() != data.size())
                    throw DependencyError("stage D: token/shape count mismatch; rerun stage C");
                cond = &depths;
            }
            Transformer tf = train_transformer(data, cfg, cond, codec.vocab());
            save_transformer(tf, cfg, paths::transformer(dir));
            detail::write_loss_sidecar(tf.loss_history, paths::transformer(dir));
            return paths::transformer(dir);
        }
    }
    throw DomainError("run_stage: bad stage");
}

// Everything needed for sampling and reconstruction after training.
struct PipelineModels {
    PipelineConfig cfg;
    CanonicalAE cae;
    GroupingNet grouping;
    VqCodec vq;
    Transformer tf;
    GroupAssignment ga;  // at the training resolution
};

inline PipelineModels load_pipeline(const std::string& dir, bool need_transformer = true) {
    detail::require_checkpoint(paths::cae(dir), "A");
    detail::require_checkpoint(paths::group(dir), "B");
    detail::require_checkpoint(paths::vq(dir), "C");
    if (need_transformer) detail::require_checkpoint(paths::transformer(dir), "D");
    PipelineModels m;
    m.cae = load_cae(paths::cae(dir));
    m.grouping = load_grouping(paths::group(dir));
    m.vq = load_vq(paths::vq(dir));
    m.cfg = config_from_checkpoint(load_checkpoint(paths::vq(dir)));
    if (need_transformer) m.tf = load_transformer(paths::transformer(dir));
    CanonicalSphere sphere = fibonacci_sphere(static_cast<std::size_t>(m.cae.sphere_points));
    m.ga = pipeline_assignment(m.grouping, m.cfg, sphere);
    return m;
}

// Sequence -> quantized group features -> decoder at the requested output
// resolution. Labels for a non-training resolution come from re-evaluating
// the grouping on that sphere.
inline PointCloud decode_tokens(PipelineModels& m, const TokenSequence& seq, std::size_t resolution) {
    nn::Mat z_q = tokens_to_features(m.vq, m.ga, seq);
    CanonicalSphere sphere = fibonacci_sphere(resolution);
    std::vector<int> labels = resolution == static_cast<std::size_t>(m.cae.sphere_points)
                                  ? m.ga.labels
                                  : pipeline_assignment(m.grouping, m.cfg, sphere).labels;
    return decode_groups(m.vq, sphere, z_q, labels);
}

inline PointCloud generate_shape(PipelineModels& m, const SamplingOptions& opt, std::uint64_t seed,
                                 std::size_t resolution, const Eigen::RowVectorXd* condition = nullptr) {
    TokenSequence seq;
    seq.tokens = sample_sequence(m.tf, opt, seed, condition);
    return decode_tokens(m, seq, resolution);
}

// Full-pipeline reconstruction: encode to tokens, decode back.
inline PointCloud reconstruct_quantized(PipelineModels& m, const PointCloud& pc, std::size_t resolution) {
    TokenSequence seq = encode_to_tokens(m.cae, m.grouping, m.ga, m.vq, pc);
    return decode_tokens(m, seq, resolution);
}

}  // namespace pcsq
