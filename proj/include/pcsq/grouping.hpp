#pragma once

// Stage B: self-supervised decomposition of the canonical sphere into G
// shape compositions. A shared MLP scores each sphere point; structure
// points (group-weighted averages of mapped input points) are pulled toward
// the input cloud by a Chamfer loss. Group assignment and the spiral group
// order induce the sequentialization used by all later stages.

#include <random>
#include <vector>

#include "pcsq/canonical_ae.hpp"

namespace pcsq {

struct GroupProbabilities {
    nn::Mat raw;        // M x G scores
    nn::Mat per_point;  // rows sum to 1 (softmax over groups)
    nn::Mat per_group;  // columns sum to 1 (per-group renormalization)
};

struct GroupAssignment {
    std::vector<int> labels;      // per sphere point, in [0, G)
    std::vector<int> group_order;  // permutation of [0, G)
    int groups = 0;
};

enum class GroupOrderKind { Spiral, SpiralStar, Random };

inline GroupOrderKind group_order_from_string(const std::string& s) {
    if (s == "spiral") return GroupOrderKind::Spiral;
    if (s == "spiral_star" || s == "spiral-star") return GroupOrderKind::SpiralStar;
    if (s == "random") return GroupOrderKind::Random;
    throw DomainError("unknown group order: " + s);
}

namespace detail {

inline GroupProbabilities views_from_raw(nn::Mat raw) {
    GroupProbabilities p;
    p.per_point.resize(raw.rows(), raw.cols());
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
        Eigen::RowVectorXd e = (raw.row(r).array() - raw.row(r).maxCoeff()).exp();
        p.per_point.row(r) = e / e.sum();
    }
    Eigen::RowVectorXd colsum = p.per_point.colwise().sum();
    p.per_group = p.per_point.array().rowwise() / colsum.array().max(1e-300);
    p.raw = std::move(raw);
    return p;
}

}  // namespace detail

struct GroupingNet {
    long groups = 0;
    long hidden = 128;
    bool use_point_input = false;  // [x_i, pi_i] ablation input
    std::uint64_t seed = 0;
    GroupOrderKind order = GroupOrderKind::Spiral;

    nn::ParamStore params;
    nn::Linear l1, l2, l3;
    nn::BatchNorm bn1, bn2;
    std::vector<double> loss_history;

    static GroupingNet build(const PipelineConfig& cfg) {
        GroupingNet g;
        g.groups = cfg.integer("model.groups");
        g.hidden = cfg.integer("group.hidden");
        g.use_point_input = cfg.str("group.input") == "sphere_and_point";
        g.seed = cfg.seed("group.seed");
        g.order = group_order_from_string(cfg.str("group.order"));
        std::mt19937_64 rng(g.seed);
        long in = g.use_point_input ? 6 : 3;
        g.l1 = nn::Linear(g.params, "grp.l1", in, g.hidden, rng);
        g.bn1 = nn::BatchNorm(g.params, "grp.bn1", g.hidden);
        g.l2 = nn::Linear(g.params, "grp.l2", g.hidden, g.hidden, rng);
        g.bn2 = nn::BatchNorm(g.params, "grp.bn2", g.hidden);
        g.l3 = nn::Linear(g.params, "grp.l3", g.hidden, g.groups, rng);
        return g;
    }

    nn::Var raw_scores(nn::Tape& t, nn::ParamStore& store, nn::Var input, bool training) const {
        nn::Var h = t.relu(bn1(t, store, l1(t, store, input), training));
        h = t.relu(bn2(t, store, l2(t, store, h), training));
        return l3(t, store, h);
    }
};

// Instance-independent scores from sphere coordinates. When the ablation
// input flag is on, `mapped` supplies the paired input points (defaults to
// the sphere coordinates themselves).
inline GroupProbabilities grouping_forward(GroupingNet& net, const CanonicalSphere& sphere,
                                           const nn::Mat* mapped = nullptr) {
    nn::Tape t;
    nn::Mat coords = sphere.as_cloud().matrix();
    nn::Mat input = coords;
    if (net.use_point_input) {
        nn::Mat m = mapped ? *mapped : coords;
        input.resize(coords.rows(), 6);
        input << m, coords;
    }
    nn::Var raw = net.raw_scores(t, net.params, t.constant(input), false);
    return detail::views_from_raw(t.value(raw));
}

// Eq.-1 structure points: K_j is the per-group-normalized P-weighted average
// of the mapped points.
inline std::vector<Vec3> structure_points(const GroupProbabilities& p, const std::vector<Vec3>& mapped) {
    if (static_cast<Eigen::Index>(mapped.size()) != p.per_group.rows())
        throw DomainError("structure_points: size mismatch");
    nn::Mat m(mapped.size(), 3);
    for (std::size_t i = 0; i < mapped.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = mapped[i].transpose();
    nn::Mat k = p.per_group.transpose() * m;
    std::vector<Vec3> out(static_cast<std::size_t>(k.rows()));
    for (Eigen::Index j = 0; j < k.rows(); ++j) out[static_cast<std::size_t>(j)] = k.row(j).transpose();
    return out;
}

// Argmax assignment (ties to the lower group id) plus the spiral group
// order: groups sorted by their minimum member sphere index, empty groups
// last by id. The star order reverses the traversal; random is seeded.
inline std::vector<int> compute_group_order(const std::vector<int>& labels, int groups, GroupOrderKind kind,
                                            std::uint64_t seed) {
    const int m = static_cast<int>(labels.size());
    std::vector<int> key(static_cast<std::size_t>(groups), m);   // min spiral index, m = empty
    std::vector<int> key_star(static_cast<std::size_t>(groups), m);
    for (int i = 0; i < m; ++i) {
        int g = labels[static_cast<std::size_t>(i)];
        if (key[static_cast<std::size_t>(g)] == m) key[static_cast<std::size_t>(g)] = i;
        key_star[static_cast<std::size_t>(g)] = m - 1 - i;  // last index becomes the smallest star key
    }
    for (int g = 0; g < groups; ++g)
        if (key[static_cast<std::size_t>(g)] == m) key_star[static_cast<std::size_t>(g)] = m;
    std::vector<int> order(static_cast<std::size_t>(groups));
    std::iota(order.begin(), order.end(), 0);
    switch (kind) {
        case GroupOrderKind::Spiral:
            std::stable_sort(order.begin(), order.end(),
                             [&](int a, int b) { return key[static_cast<std::size_t>(a)] < key[static_cast<std::size_t>(b)]; });
            break;
        case GroupOrderKind::SpiralStar:
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                return key_star[static_cast<std::size_t>(a)] < key_star[static_cast<std::size_t>(b)];
            });
            break;
        case GroupOrderKind::Random: {
            std::mt19937_64 rng(seed);
            std::shuffle(order.begin(), order.end(), rng);
            break;
        }
    }
    return order;
}

inline GroupAssignment assign_groups(const GroupProbabilities& p, GroupOrderKind kind = GroupOrderKind::Spiral,
                                     std::uint64_t seed = 0) {
    GroupAssignment ga;
    ga.groups = static_cast<int>(p.per_point.cols());
    ga.labels.resize(static_cast<std::size_t>(p.per_point.rows()));
    for (Eigen::Index r = 0; r < p.per_point.rows(); ++r) {
        int best = 0;
        double bv = p.per_point(r, 0);
        for (Eigen::Index c = 1; c < p.per_point.cols(); ++c)
            if (p.per_point(r, c) > bv) {
                bv = p.per_point(r, c);
                best = static_cast<int>(c);
            }
        ga.labels[static_cast<std::size_t>(r)] = best;
    }
    ga.group_order = compute_group_order(ga.labels, ga.groups, kind, seed);
    return ga;
}

// Ablation baseline: G centers drawn uniformly from the sphere's own points,
// every point labeled by its nearest center.
inline GroupAssignment uniform_grouping(const CanonicalSphere& sphere, int groups, std::uint64_t seed,
                                        GroupOrderKind kind = GroupOrderKind::Spiral) {
    if (groups < 1 || static_cast<std::size_t>(groups) > sphere.size())
        throw DomainError("uniform_grouping: need 1 <= G <= M");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> idx(sphere.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (int g = 0; g < groups; ++g) {
        std::uniform_int_distribution<std::size_t> d(static_cast<std::size_t>(g), idx.size() - 1);
        std::swap(idx[static_cast<std::size_t>(g)], idx[d(rng)]);
    }
    GroupAssignment ga;
    ga.groups = groups;
    ga.labels.resize(sphere.size());
    for (std::size_t i = 0; i < sphere.size(); ++i) {
        int best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int g = 0; g < groups; ++g) {
            double d = (sphere.points[i] - sphere.points[idx[static_cast<std::size_t>(g)]]).squaredNorm();
            if (d < bd) {
                bd = d;
                best = g;
            }
        }
        ga.labels[i] = best;
    }
    ga.group_order = compute_group_order(ga.labels, groups, kind, seed);
    return ga;
}

// Partition the input cloud into per-group subsets, listed in group order.
// Point x_i joins the group of its traced sphere point.
inline std::vector<PointCloud> sequentialize(const PointCloud& pc, const Correspondence& corr,
                                             const GroupAssignment& ga) {
    if (corr.forward.size() != pc.size()) throw DomainError("sequentialize: correspondence does not cover cloud");
    std::vector<PointCloud> by_id(static_cast<std::size_t>(ga.groups));
    for (std::size_t i = 0; i < pc.size(); ++i) {
        int g = ga.labels[corr.forward[i]];
        by_id[static_cast<std::size_t>(g)].points.push_back(pc.points[i]);
    }
    std::vector<PointCloud> out;
    out.reserve(by_id.size());
    for (int g : ga.group_order) out.push_back(std::move(by_id[static_cast<std::size_t>(g)]));
    return out;
}

// Mapped points for a shape: row i holds the input point traced back from
// sphere index i.
inline nn::Mat mapped_points(const PointCloud& pc, const Correspondence& corr) {
    nn::Mat m(static_cast<Eigen::Index>(corr.inverse.size()), 3);
    for (std::size_t j = 0; j < corr.inverse.size(); ++j)
        m.row(static_cast<Eigen::Index>(j)) = pc.points[corr.inverse[j]].transpose();
    return m;
}

inline GroupingNet train_grouping(const std::vector<PointCloud>& dataset, const CanonicalAE& cae,
                                  const PipelineConfig& cfg) {
    if (dataset.empty()) throw DomainError("train_grouping: empty dataset");
    GroupingNet net = GroupingNet::build(cfg);
    CanonicalSphere sphere = fibonacci_sphere(static_cast<std::size_t>(cae.sphere_points));
    nn::Mat coords = sphere.as_cloud().matrix();

    // The auto-encoder is frozen, so each shape's mapped points are fixed.
    std::vector<nn::Mat> mapped;
    mapped.reserve(dataset.size());
    for (const auto& pc : dataset) mapped.push_back(mapped_points(pc, trace_correspondence(cae, pc, sphere)));

    const long epochs = cfg.integer("group.epochs");
    nn::Adam opt;
    opt.lr = cfg.num("group.lr");
    std::mt19937_64 order_rng(net.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    for (long epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double epoch_loss = 0.0;
        for (std::size_t s : order) {
            nn::Tape t;
            nn::Var input;
            if (net.use_point_input) {
                nn::Mat in(coords.rows(), 6);
                in << mapped[s], coords;
                input = t.constant(in);
            } else {
                input = t.constant(coords);
            }
            nn::Var raw = net.raw_scores(t, net.params, input, true);
            nn::Var per_point = t.rowwise_softmax(raw);
            nn::Var per_group = t.div_rowvec(per_point, t.colsum(per_point));
            nn::Var k = t.matmul_tn(per_group, t.constant(mapped[s]));  // G x 3
            nn::Var loss = t.chamfer_loss(k, dataset[s]);
            double lv = t.value(loss)(0, 0);
            if (!std::isfinite(lv))
                throw TrainingError("grouping: non-finite loss at epoch " + std::to_string(epoch));
            t.backward(loss);
            opt.apply(net.params, t);
            epoch_loss += lv;
        }
        net.loss_history.push_back(epoch_loss / static_cast<double>(dataset.size()));
    }
    return net;
}

// Optional export: xyz text with a fourth integer group-label column.
inline void save_labeled_sphere(const CanonicalSphere& sphere, const GroupAssignment& ga, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    f.precision(6);
    for (std::size_t i = 0; i < sphere.size(); ++i) {
        const Vec3& p = sphere.points[i];
        f << p.x() << ' ' << p.y() << ' ' << p.z() << ' ' << ga.labels[i] << '\n';
    }
}

inline void save_grouping(const GroupingNet& net, const PipelineConfig& cfg, const std::string& path) {
    Checkpoint ck;
    ck.kind = "group";
    ck.seed = net.seed;
    ck.config = cfg.all();
    ck.loss_history = net.loss_history;
    ck.params = net.params;
    save_checkpoint(ck, path);
}

inline GroupingNet load_grouping(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "group") throw ParseError("not a grouping checkpoint: " + path);
    GroupingNet net = GroupingNet::build(config_from_checkpoint(ck));
    copy_params_by_name(net.params, ck.params);
    net.loss_history = ck.loss_history;
    return net;
}

}  // namespace pcsq
