#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "pcsq/grouping.hpp"

using namespace pcsq;

namespace {

PipelineConfig tiny_cfg() {
    PipelineConfig cfg;
    cfg.set("data.points_per_shape", "48");
    cfg.set("model.sphere_points", "48");
    cfg.set("model.latent_dim", "16");
    cfg.set("model.knn", "6");
    cfg.set("model.groups", "8");
    cfg.set("cae.enc_widths", "16,16");
    cfg.set("cae.dec_hidden", "24");
    cfg.set("cae.epochs", "8");
    cfg.set("cae.use_emd_loss", "false");
    cfg.set("group.epochs", "10");
    cfg.set("group.hidden", "32");
    return cfg;
}

GroupProbabilities random_probs(std::mt19937_64& rng, int m, int g) {
    std::normal_distribution<double> n(0.0, 1.0);
    nn::Mat raw(m, g);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < g; ++j) raw(i, j) = n(rng);
    return detail::views_from_raw(raw);
}

}  // namespace

TEST_CASE("probability views: rows of per_point and columns of per_group sum to 1") {
    std::mt19937_64 rng(1);
    GroupProbabilities p = random_probs(rng, 20, 5);
    for (Eigen::Index r = 0; r < 20; ++r) CHECK(p.per_point.row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
    for (Eigen::Index c = 0; c < 5; ++c) CHECK(p.per_group.col(c).sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("structure points equal the weighted-sum oracle and stay in the bbox") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        int m = 12, g = 4;
        GroupProbabilities p = random_probs(rng, m, g);
        std::vector<Vec3> mapped;
        for (int i = 0; i < m; ++i) mapped.emplace_back(u(rng), u(rng), u(rng));
        std::vector<Vec3> k = structure_points(p, mapped);
        REQUIRE(static_cast<int>(k.size()) == g);
        Vec3 lo = mapped[0], hi = mapped[0];
        for (const auto& q : mapped) {
            lo = lo.cwiseMin(q);
            hi = hi.cwiseMax(q);
        }
        for (int j = 0; j < g; ++j) {
            Vec3 expect = Vec3::Zero();
            for (int i = 0; i < m; ++i) expect += p.per_group(i, j) * mapped[static_cast<std::size_t>(i)];
            CHECK((k[static_cast<std::size_t>(j)] - expect).norm() < 1e-9);
            for (int c = 0; c < 3; ++c) {
                CHECK(k[static_cast<std::size_t>(j)][c] >= lo[c] - 1e-9);
                CHECK(k[static_cast<std::size_t>(j)][c] <= hi[c] + 1e-9);
            }
        }
    }
    GroupProbabilities p = random_probs(rng, 4, 2);
    CHECK_THROWS_AS(structure_points(p, std::vector<Vec3>(3)), DomainError);
}

TEST_CASE("argmax assignment breaks ties toward the lower group id") {
    nn::Mat raw(2, 3);
    raw << 1.0, 1.0, 0.0,  // tie between groups 0 and 1
        0.0, 0.0, 2.0;
    GroupAssignment ga = assign_groups(detail::views_from_raw(raw));
    CHECK(ga.labels[0] == 0);
    CHECK(ga.labels[1] == 2);
}

TEST_CASE("spiral group order sorts by first-member index, empty groups last") {
    // Sphere indices: 0->g2, 1->g2, 2->g0, 3->g0, 4->g3; g1 is empty.
    std::vector<int> labels = {2, 2, 0, 0, 3};
    std::vector<int> order = compute_group_order(labels, 4, GroupOrderKind::Spiral, 0);
    CHECK(order == std::vector<int>{2, 0, 3, 1});

    // Star order walks the spiral backwards: last occurrences first.
    std::vector<int> star = compute_group_order(labels, 4, GroupOrderKind::SpiralStar, 0);
    CHECK(star == std::vector<int>{3, 0, 2, 1});

    // Random order is a seeded permutation covering every group.
    std::vector<int> r1 = compute_group_order(labels, 4, GroupOrderKind::Random, 9);
    std::vector<int> r2 = compute_group_order(labels, 4, GroupOrderKind::Random, 9);
    CHECK(r1 == r2);
    std::vector<int> sorted = r1;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3});

    CHECK_THROWS_AS(group_order_from_string("zigzag"), DomainError);
}

TEST_CASE("uniform grouping labels every point by its nearest center") {
    CanonicalSphere sphere = fibonacci_sphere(32);
    GroupAssignment ga = uniform_grouping(sphere, 5, 7);
    REQUIRE(ga.labels.size() == 32);
    for (int l : ga.labels) {
        CHECK(l >= 0);
        CHECK(l < 5);
    }
    GroupAssignment again = uniform_grouping(sphere, 5, 7);
    CHECK(ga.labels == again.labels);
    CHECK_THROWS_AS(uniform_grouping(sphere, 33, 7), DomainError);
}

TEST_CASE("sequentialize partitions the cloud in group order") {
    PointCloud pc;
    for (int i = 0; i < 6; ++i) pc.points.emplace_back(i, 0, 0);
    Correspondence corr;
    corr.forward = {0, 1, 2, 3, 4, 5};
    GroupAssignment ga;
    ga.groups = 3;
    ga.labels = {1, 1, 0, 0, 2, 2};
    ga.group_order = {2, 0, 1};
    auto parts = sequentialize(pc, corr, ga);
    REQUIRE(parts.size() == 3);
    CHECK(parts[0].size() == 2);  // group 2 first
    CHECK(parts[0][0].x() == 4.0);
    CHECK(parts[1][0].x() == 2.0);
    CHECK(parts[2][0].x() == 0.0);

    corr.forward.pop_back();
    CHECK_THROWS_AS(sequentialize(pc, corr, ga), DomainError);
}

TEST_CASE("grouping trains against a frozen auto-encoder") {
    PipelineConfig cfg = tiny_cfg();
    auto data = synth_dataset(ShapeFamily::Ellipsoid, 2, 48, 23).samples;
    CanonicalAE ae = train_canonical_ae(data, cfg);
    GroupingNet net = train_grouping(data, ae, cfg);
    REQUIRE(net.loss_history.size() == 10);
    for (double v : net.loss_history) CHECK(std::isfinite(v));
    CHECK(net.loss_history.back() < net.loss_history.front() * 1.5);

    CanonicalSphere sphere = fibonacci_sphere(48);
    GroupProbabilities p = grouping_forward(net, sphere);
    CHECK(p.per_point.rows() == 48);
    CHECK(p.per_point.cols() == 8);

    std::string path = "group_roundtrip.ckpt";
    save_grouping(net, cfg, path);
    GroupingNet back = load_grouping(path);
    std::remove(path.c_str());
    GroupProbabilities q = grouping_forward(back, sphere);
    CHECK((p.per_point - q.per_point).norm() < 1e-15);
}

TEST_CASE("ablation input flag widens the net input") {
    PipelineConfig cfg = tiny_cfg();
    cfg.set("group.input", "sphere_and_point");
    GroupingNet net = GroupingNet::build(cfg);
    CanonicalSphere sphere = fibonacci_sphere(48);
    nn::Mat mapped = nn::Mat::Random(48, 3);
    GroupProbabilities p = grouping_forward(net, sphere, &mapped);
    CHECK(p.per_point.rows() == 48);
}
