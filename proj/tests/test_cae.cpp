#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "pcsq/canonical_ae.hpp"

using namespace pcsq;

namespace {

PipelineConfig tiny_cfg() {
    PipelineConfig cfg;
    cfg.set("data.points_per_shape", "48");
    cfg.set("model.sphere_points", "48");
    cfg.set("model.latent_dim", "16");
    cfg.set("model.knn", "6");
    cfg.set("cae.enc_widths", "16,16");
    cfg.set("cae.dec_hidden", "24");
    cfg.set("cae.epochs", "15");
    cfg.set("cae.use_emd_loss", "false");
    return cfg;
}

std::vector<PointCloud> tiny_data(std::size_t count = 2) {
    return synth_dataset(ShapeFamily::Ellipsoid, count, 48, 21).samples;
}

}  // namespace

TEST_CASE("knn_indices excludes self and sorts by distance then index") {
    std::vector<Vec3> pts = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(1, 0, 0)};
    auto nb = knn_indices(pts, 0, 2);
    REQUIRE(nb.size() == 2);
    CHECK(nb[0] == 1);  // distance tie with index 3 resolves low
    CHECK(nb[1] == 3);
}

TEST_CASE("training reduces reconstruction loss on a tiny overfit set") {
    PipelineConfig cfg = tiny_cfg();
    auto data = tiny_data();
    CanonicalAE ae = train_canonical_ae(data, cfg);
    REQUIRE(ae.loss_history.size() == 15);
    for (double v : ae.loss_history) CHECK(std::isfinite(v));
    CHECK(ae.loss_history.back() < ae.loss_history.front());
}

TEST_CASE("reconstruction decodes at the sphere resolution deterministically") {
    PipelineConfig cfg = tiny_cfg();
    auto data = tiny_data();
    CanonicalAE ae = train_canonical_ae(data, cfg);
    CanonicalSphere sphere = fibonacci_sphere(48);
    PointCloud r1 = reconstruct(ae, sphere, data[0]);
    PointCloud r2 = reconstruct(ae, sphere, data[0]);
    REQUIRE(r1.size() == 48);
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);

    // Arbitrary resolution: same latent, denser sphere.
    PointCloud dense = decode_from_sphere(ae, fibonacci_sphere(96), encode_shape(ae, data[0]));
    CHECK(dense.size() == 96);
}

TEST_CASE("correspondence covers both directions with valid indices") {
    PipelineConfig cfg = tiny_cfg();
    auto data = tiny_data();
    CanonicalAE ae = train_canonical_ae(data, cfg);
    CanonicalSphere sphere = fibonacci_sphere(48);
    Correspondence corr = trace_correspondence(ae, data[0], sphere);
    REQUIRE(corr.forward.size() == data[0].size());
    REQUIRE(corr.inverse.size() == sphere.size());
    for (std::size_t s : corr.forward) CHECK(s < sphere.size());
    for (std::size_t i : corr.inverse) CHECK(i < data[0].size());
}

TEST_CASE("checkpoint round trip reproduces the model exactly") {
    PipelineConfig cfg = tiny_cfg();
    auto data = tiny_data();
    CanonicalAE ae = train_canonical_ae(data, cfg);
    std::string path = "cae_roundtrip.ckpt";
    save_cae(ae, cfg, path);
    CanonicalAE back = load_cae(path);
    std::remove(path.c_str());
    REQUIRE(back.params.entries.size() == ae.params.entries.size());
    for (std::size_t i = 0; i < ae.params.entries.size(); ++i)
        CHECK(back.params.entries[i].value == ae.params.entries[i].value);
    CanonicalSphere sphere = fibonacci_sphere(48);
    PointCloud a = reconstruct(ae, sphere, data[1]);
    PointCloud b = reconstruct(back, sphere, data[1]);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("training contract errors") {
    PipelineConfig cfg = tiny_cfg();
    CHECK_THROWS_AS(train_canonical_ae({}, cfg), DomainError);

    auto data = tiny_data();
    data[1].points.pop_back();  // unequal sizes
    CHECK_THROWS_AS(train_canonical_ae(data, cfg), DomainError);

    // EMD loss requires matching sphere / cloud cardinality.
    PipelineConfig bad = tiny_cfg();
    bad.set("cae.use_emd_loss", "true");
    bad.set("model.sphere_points", "32");
    CHECK_THROWS_AS(train_canonical_ae(tiny_data(), bad), DomainError);
}

TEST_CASE("encoder rejects clouds smaller than the k-NN graph") {
    PipelineConfig cfg = tiny_cfg();
    CanonicalAE ae = CanonicalAE::build(cfg);
    PointCloud small;
    for (int i = 0; i < 5; ++i) small.points.emplace_back(i, 0, 0);
    CHECK_THROWS_AS(encode_shape(ae, small), DomainError);
}

TEST_CASE("graph attention flag changes the decoder but keeps contracts") {
    PipelineConfig cfg = tiny_cfg();
    cfg.set("cae.graph_attention", "true");
    cfg.set("cae.epochs", "3");
    auto data = tiny_data();
    CanonicalAE ae = train_canonical_ae(data, cfg);
    for (double v : ae.loss_history) CHECK(std::isfinite(v));
    CHECK(reconstruct(ae, fibonacci_sphere(48), data[0]).size() == 48);
}
