// Acceptance gate: twelve criteria, one pass/fail line each. Exit status is
// the number of failed criteria.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>

#include "pcsq/pipeline.hpp"

using namespace pcsq;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int idx, const char* name, bool pass, const std::string& detail = "") {
    std::printf("[%s] %2d %s%s%s\n", pass ? "PASS" : "FAIL", idx, name, detail.empty() ? "" : " -- ",
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, Vec3 offset = Vec3::Zero()) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    PointCloud pc;
    for (std::size_t i = 0; i < n; ++i) pc.points.push_back(offset + Vec3(u(rng), u(rng), u(rng)));
    return pc;
}

double emd_bruteforce(const PointCloud& x, const PointCloud& y) {
    std::vector<int> perm(x.size());
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            total += (x.points[i] - y.points[static_cast<std::size_t>(perm[i])]).norm();
        best = std::min(best, total / static_cast<double>(x.size()));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

double chamfer_bruteforce(const PointCloud& x, const PointCloud& y) {
    double sx = 0.0, sy = 0.0;
    for (const auto& xi : x.points) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& yj : y.points) best = std::min(best, (xi - yj).squaredNorm());
        sx += best;
    }
    for (const auto& yj : y.points) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& xi : x.points) best = std::min(best, (xi - yj).squaredNorm());
        sy += best;
    }
    return sx / static_cast<double>(x.size()) + sy / static_cast<double>(y.size());
}

// Toy config shared by the stage-level criteria (5-7).
PipelineConfig overfit_cfg() {
    PipelineConfig cfg;
    cfg.set("data.train_count", "8");
    cfg.set("data.test_count", "8");
    cfg.set("data.points_per_shape", "512");
    cfg.set("model.sphere_points", "512");
    cfg.set("model.latent_dim", "64");
    cfg.set("model.knn", "10");
    cfg.set("model.groups", "16");
    cfg.set("cae.enc_widths", "32,64");
    cfg.set("cae.dec_hidden", "64");
    cfg.set("cae.epochs", "60");
    cfg.set("cae.batch", "4");
    cfg.set("cae.lr", "2e-3");
    cfg.set("cae.use_emd_loss", "false");
    cfg.set("group.epochs", "30");
    cfg.set("group.hidden", "64");
    cfg.set("vq.enc_widths", "32,64");
    cfg.set("vq.dec_hidden", "64");
    cfg.set("vq.epochs", "60");
    cfg.set("vq.lr", "2e-3");
    cfg.set("vq.use_emd_loss", "false");
    return cfg;
}

// Structured token sequences a small model can actually learn: arithmetic
// progressions mod vocab.
std::vector<std::vector<int>> progression_sequences(std::size_t count, long len, long vocab, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> base(0, static_cast<int>(vocab) - 1);
    std::uniform_int_distribution<int> step(1, 2);
    std::vector<std::vector<int>> out;
    for (std::size_t s = 0; s < count; ++s) {
        int b = base(rng), d = step(rng);
        std::vector<int> seq(static_cast<std::size_t>(len));
        for (long p = 0; p < len; ++p) seq[static_cast<std::size_t>(p)] = (b + d * static_cast<int>(p)) % static_cast<int>(vocab);
        out.push_back(std::move(seq));
    }
    return out;
}

PipelineConfig tf_cfg(long groups, long vocab, long epochs) {
    PipelineConfig cfg;
    cfg.set("model.groups", std::to_string(groups));
    cfg.set("vq.codebook_entries", std::to_string(vocab));
    cfg.set("tf.layers", "2");
    cfg.set("tf.heads", "2");
    cfg.set("tf.d_model", "64");
    cfg.set("tf.epochs", std::to_string(epochs));
    cfg.set("tf.lr", "3e-3");
    return cfg;
}

}  // namespace

// 1. Exact EMD equals full permutation enumeration on 200 tiny pairs.
void criterion1() {
    auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<std::size_t> size(1, 6);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t n = size(rng);
        PointCloud a = random_cloud(rng, n), b = random_cloud(rng, n);
        worst = std::max(worst, std::abs(emd(a, b) - emd_bruteforce(a, b)));
    }
    double dt = seconds_since(t0);
    char buf[96];
    std::snprintf(buf, sizeof buf, "max |diff| %.2e, %.1fs", worst, dt);
    report(1, "EMD oracle equivalence (200 pairs, n<=6)", worst < 1e-9 && dt < 10.0, buf);
}

// 2. Chamfer symmetry, identity on multisets, brute-force equality.
void criterion2() {
    std::mt19937_64 rng(102);
    bool ok = true;
    for (int trial = 0; trial < 100; ++trial) {
        PointCloud a = random_cloud(rng, 10), b = random_cloud(rng, 10);
        ok = ok && std::abs(chamfer_distance(a, b) - chamfer_distance(b, a)) < 1e-9;
        ok = ok && std::abs(chamfer_distance(a, b) - chamfer_bruteforce(a, b)) < 1e-9;
        PointCloud dup = a;
        dup.points.push_back(a.points[0]);  // multiset with a repeat
        ok = ok && chamfer_distance(dup, dup) < 1e-12;
    }
    report(2, "Chamfer properties and brute-force equality (100 pairs)", ok);
}

// 3. Fibonacci sphere contracts at three resolutions.
void criterion3() {
    bool ok = true;
    for (std::size_t m : {16ul, 128ul, 2048ul}) {
        CanonicalSphere s = fibonacci_sphere(m);
        for (std::size_t i = 0; i < m; ++i) {
            ok = ok && std::abs(s[i].norm() - 1.0) < 1e-6;
            ok = ok && (i == 0 || s[i].z() < s[i - 1].z());
            ok = ok && spiral_rank(s, s[i]) == i;
        }
    }
    report(3, "Fibonacci sphere: unit norms, z-monotone, spiral_rank identity (M=16,128,2048)", ok);
}

// 4. Eq.-1 view invariants and the weighted-sum oracle.
void criterion4() {
    std::mt19937_64 rng(104);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    bool ok = true;
    for (int trial = 0; trial < 50; ++trial) {
        int m = 15, g = 5;
        nn::Mat raw(m, g);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < g; ++j) raw(i, j) = n(rng);
        GroupProbabilities p = detail::views_from_raw(raw);
        for (int c = 0; c < g; ++c) ok = ok && std::abs(p.per_group.col(c).sum() - 1.0) < 1e-6;
        std::vector<Vec3> mapped;
        for (int i = 0; i < m; ++i) mapped.emplace_back(u(rng), u(rng), u(rng));
        Vec3 lo = mapped[0], hi = mapped[0];
        for (const auto& q : mapped) {
            lo = lo.cwiseMin(q);
            hi = hi.cwiseMax(q);
        }
        std::vector<Vec3> k = structure_points(p, mapped);
        for (int j = 0; j < g; ++j) {
            Vec3 expect = Vec3::Zero();
            for (int i = 0; i < m; ++i) expect += p.per_group(i, j) * mapped[static_cast<std::size_t>(i)];
            ok = ok && (k[static_cast<std::size_t>(j)] - expect).norm() < 1e-9;
            for (int c = 0; c < 3; ++c)
                ok = ok && k[static_cast<std::size_t>(j)][c] >= lo[c] - 1e-9 &&
                     k[static_cast<std::size_t>(j)][c] <= hi[c] + 1e-9;
        }
    }
    report(4, "Eq.1 invariants: column sums, bounding box, weighted-sum oracle (50 instances)", ok);
}

// 5-7 share one trained stack; returns it for reuse.
struct ToyStack {
    PipelineConfig cfg = overfit_cfg();
    std::vector<PointCloud> train, test;
    CanonicalAE ae;
    GroupingNet net;
    GroupAssignment ga;
    CanonicalSphere sphere = fibonacci_sphere(512);
};

void criterion5(ToyStack& stack) {
    stack.train = pipeline_train_set(stack.cfg);
    stack.test = pipeline_test_set(stack.cfg);
    auto t0 = std::chrono::steady_clock::now();
    stack.ae = train_canonical_ae(stack.train, stack.cfg);
    double dt = seconds_since(t0);
    double first = stack.ae.loss_history.front(), last = stack.ae.loss_history.back();
    char buf[96];
    std::snprintf(buf, sizeof buf, "CD %.4f -> %.4f (x%.3f), %.0fs", first, last, last / first, dt);
    report(5, "Stage-A overfit: final CD <= 0.1 x initial within 200 epochs, < 15 min", last <= 0.1 * first && dt < 900.0,
           buf);
}

void criterion6(ToyStack& stack) {
    stack.net = train_grouping(stack.train, stack.ae, stack.cfg);
    stack.ga = pipeline_assignment(stack.net, stack.cfg, stack.sphere);
    VqCodec codec = train_vqvae(stack.train, stack.ae, stack.ga, stack.cfg);

    double cd_plain = 0.0, cd_quant = 0.0;
    bool tokens_ok = true;
    for (const auto& x : stack.train) {
        cd_plain += chamfer_distance(x, reconstruct(stack.ae, stack.sphere, x));
        TokenSequence seq = encode_to_tokens(stack.ae, stack.net, stack.ga, codec, x);
        tokens_ok = tokens_ok && static_cast<long>(seq.tokens.size()) == codec.groups;
        for (int tok : seq.tokens) tokens_ok = tokens_ok && tok >= 0 && tok < 50;
        nn::Mat z_q = tokens_to_features(codec, stack.ga, seq);
        cd_quant += chamfer_distance(x, decode_groups(codec, stack.sphere, z_q, stack.ga.labels));
    }
    cd_plain /= static_cast<double>(stack.train.size());
    cd_quant /= static_cast<double>(stack.train.size());
    char buf[96];
    std::snprintf(buf, sizeof buf, "CD plain %.4f, quantized %.4f (x%.2f)", cd_plain, cd_quant, cd_quant / cd_plain);
    report(6, "Stage-C quantized reconstruction <= 2 x non-quantized; tokens length G in [0,50)",
           cd_quant <= 2.0 * cd_plain && tokens_ok, buf);

    // Keep the grouped codec for criterion 7 via save/load-free reuse.
    save_vq(codec, stack.cfg, (fs::temp_directory_path() / "pcsq_accept_vq.ckpt").string());
}

void criterion7(ToyStack& stack) {
    VqCodec grouped = load_vq((fs::temp_directory_path() / "pcsq_accept_vq.ckpt").string());
    fs::remove(fs::temp_directory_path() / "pcsq_accept_vq.ckpt");
    PipelineConfig shared_cfg = stack.cfg;
    shared_cfg.set("vq.shared_codebook", "true");
    VqCodec shared = train_vqvae(stack.train, stack.ae, stack.ga, shared_cfg);

    auto usage_of = [&](const VqCodec& codec) {
        std::vector<TokenSequence> seqs;
        for (const auto& x : stack.test) seqs.push_back(encode_to_tokens(stack.ae, stack.net, stack.ga, codec, x));
        return codebook_usage(codec.groups, codec.vocab(), seqs);
    };
    double ug = usage_of(grouped), us = usage_of(shared);

    // Hand-counted usage fixtures (2 groups x 50 entries).
    std::vector<TokenSequence> two = {{{3, 7}}};
    std::vector<TokenSequence> six = {{{0, 0}}, {{1, 1}}, {{2, 2}}};
    std::vector<TokenSequence> all;
    for (int v = 0; v < 50; ++v) all.push_back({{v, v}});
    bool hand = std::abs(codebook_usage(2, 50, two) - 2.0) < 1e-12 &&
                std::abs(codebook_usage(2, 50, six) - 6.0) < 1e-12 &&
                std::abs(codebook_usage(2, 50, all) - 100.0) < 1e-12;

    char buf[96];
    std::snprintf(buf, sizeof buf, "grouped %.2f%% >= shared %.2f%%; hand cases ok=%d", ug, us, hand ? 1 : 0);
    report(7, "Codebook behavior: grouped usage >= shared; hand-counted usage cases", ug >= us && hand, buf);
}

// 8. Straight-through estimator: analytic tape gradient vs finite differences
// of the differentiable surrogate (quantized offset held fixed).
void criterion8() {
    std::mt19937_64 rng(108);
    std::normal_distribution<double> n(0.0, 1.0);
    nn::Mat x(2, 3), W0(3, 2), U0(2, 3), q0(2, 2);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    for (int i = 0; i < W0.size(); ++i) W0.data()[i] = n(rng);
    for (int i = 0; i < U0.size(); ++i) U0.data()[i] = n(rng);
    for (int i = 0; i < q0.size(); ++i) q0.data()[i] = n(rng) * 2.0;  // away from zhat: no ties

    // Loss with the straight-through op, gradients w.r.t. W.
    auto st_loss = [&](const nn::Mat& W, nn::Mat* grad_out) {
        nn::Tape t;
        nn::Var Wv = t.leaf(W);
        nn::Var zhat = t.matmul(t.constant(x), Wv);
        nn::Var st = t.straight_through(zhat, q0);
        nn::Var out = t.matmul(st, t.constant(U0));
        nn::Var resid = t.sub(zhat, t.constant(q0));
        nn::Var loss = t.add(t.sum_all(t.cmul(out, out)), t.sum_all(t.cmul(resid, resid)));
        if (grad_out) {
            t.backward(loss);
            *grad_out = t.grad(Wv);
        }
        return t.value(loss)(0, 0);
    };
    // Differentiable surrogate: the quantized value moves with zhat by the
    // fixed offset q0 - zhat(W_0), matching the real forward at W_0.
    nn::Mat offset = q0 - x * W0;
    auto surrogate = [&](const nn::Mat& W) {
        nn::Mat zhat = x * W;
        nn::Mat out = (zhat + offset) * U0;
        nn::Mat resid = zhat - q0;
        return out.squaredNorm() + resid.squaredNorm();
    };

    nn::Mat g;
    st_loss(W0, &g);
    double h = 1e-5, worst = 0.0;
    for (Eigen::Index i = 0; i < W0.rows(); ++i)
        for (Eigen::Index j = 0; j < W0.cols(); ++j) {
            nn::Mat Wp = W0, Wm = W0;
            Wp(i, j) += h;
            Wm(i, j) -= h;
            double fd = (surrogate(Wp) - surrogate(Wm)) / (2.0 * h);
            worst = std::max(worst, std::abs(g(i, j) - fd) / std::max(1.0, std::abs(fd)));
        }
    char buf[64];
    std::snprintf(buf, sizeof buf, "max relative error %.2e", worst);
    report(8, "Straight-through gradient check vs central finite differences", worst < 1e-4, buf);
}

// 9. Transformer training behaviors.
void criterion9() {
    // Single-sequence memorization.
    PipelineConfig cfg1 = tf_cfg(16, 50, 400);
    auto one = progression_sequences(1, 16, 50, 7);
    Transformer m1 = train_transformer(one, cfg1);
    double mem = m1.loss_history.back();

    // 64-sequence toy set.
    PipelineConfig cfg64 = tf_cfg(16, 50, 200);
    auto seqs = progression_sequences(64, 16, 50, 9);
    Transformer m64 = train_transformer(seqs, cfg64);
    double first = m64.loss_history.front(), last = m64.loss_history.back();

    // Causality: position-i logits are invariant to suffix changes.
    std::mt19937_64 rng(109);
    std::uniform_int_distribution<int> tok(0, 49);
    std::uniform_int_distribution<long> pos(0, 15);
    bool causal = true;
    for (int trial = 0; trial < 100; ++trial) {
        long i = pos(rng);
        std::vector<int> a(16), b(16);
        for (long p = 0; p < 16; ++p) {
            a[static_cast<std::size_t>(p)] = tok(rng);
            b[static_cast<std::size_t>(p)] = p < i ? a[static_cast<std::size_t>(p)] : tok(rng);
        }
        auto row_logits = [&](const std::vector<int>& seq) {
            nn::Tape t;
            nn::Var hid = m64.hidden_states(t, m64.params, seq, 16, nullptr, true);
            return Eigen::RowVectorXd(
                t.value(m64.heads_out[static_cast<std::size_t>(i)](t, m64.params, t.slice_rows(hid, i, 1), true))
                    .row(0));
        };
        causal = causal && (row_logits(a) - row_logits(b)).norm() < 1e-9;
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "memorized %.4f nats/token; 64-seq %.3f -> %.3f; causal=%d", mem, first, last,
                  causal ? 1 : 0);
    report(9, "Transformer training: memorization, 64-seq NLL drop, causality (100 prefixes)",
           mem <= 0.05 && last <= 0.7 * first && causal, buf);
}

// 10. Sampling contracts.
void criterion10() {
    Eigen::RowVectorXd p(3);
    p << 0.5, 0.3, 0.2;
    Eigen::RowVectorXd f = nucleus_filter(p, 0.7);
    bool unit = std::abs(f(0) - 0.625) < 1e-12 && std::abs(f(1) - 0.375) < 1e-12 && f(2) == 0.0;

    Eigen::RowVectorXd logits(5);
    logits << 1.2, -0.4, 0.9, 2.3, 0.0;
    bool argmax_ok = true;
    for (double t : {0.1, 1.0, 10.0}) {
        Eigen::RowVectorXd q = softmax(apply_temperature(logits, t));
        Eigen::Index am;
        q.maxCoeff(&am);
        argmax_ok = argmax_ok && am == 3;
    }

    PipelineConfig cfg = tf_cfg(16, 50, 60);
    Transformer m = train_transformer(progression_sequences(16, 16, 50, 11), cfg);
    SamplingOptions opt;  // top_p 0.92, t = 1
    bool in_nucleus = true;
    int counted = 0;
    for (std::uint64_t seed = 0; counted < 1000; ++seed) {
        std::vector<int> toks = sample_sequence(m, opt, seed);
        std::vector<int> prefix;
        for (int tok : toks) {
            Eigen::RowVectorXd probs =
                nucleus_filter(softmax(apply_temperature(forward_logits(m, prefix), opt.temperature)), opt.top_p);
            in_nucleus = in_nucleus && probs(tok) > 0.0;
            prefix.push_back(tok);
            ++counted;
        }
    }
    bool stable = sample_sequence(m, opt, 77) == sample_sequence(m, opt, 77);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d tokens checked; unit=%d argmax=%d stable=%d", counted, unit ? 1 : 0,
                  argmax_ok ? 1 : 0, stable ? 1 : 0);
    report(10, "Sampling contracts: nucleus unit case, membership, temperature argmax, seed stability",
           unit && argmax_ok && in_nucleus && stable, buf);
}

// 11. Metric suite facts and distributional behavior.
void criterion11() {
    std::mt19937_64 rng(111);
    std::vector<PointCloud> set;
    for (int i = 0; i < 4; ++i) set.push_back(random_cloud(rng, 8));
    bool facts = true;
    facts = facts && mmd(set, set, MetricDistance::CD) < 1e-12;
    facts = facts && cov(set, set, MetricDistance::CD) == 1.0;
    facts = facts && one_nna(set, set, MetricDistance::CD) == 0.0;  // duplicated pairs
    facts = facts && tmd(std::vector<PointCloud>(3, set[0])) < 1e-12;

    std::vector<PointCloud> far;
    for (int i = 0; i < 4; ++i) far.push_back(random_cloud(rng, 8, Vec3(100, 0, 0)));
    bool separated = one_nna(set, far, MetricDistance::CD, true) == 1.0;

    // Two independent 100-sample draws from the same toy generator.
    auto draw = [&](std::uint64_t seed) {
        return synth_dataset(ShapeFamily::Ellipsoid, 100, 32, seed).samples;
    };
    double nna = one_nna(draw(1), draw(2), MetricDistance::CD);
    bool same_dist = nna >= 0.4 && nna <= 0.6;

    // Brute-force tables on small sets, both distances.
    std::vector<PointCloud> gen, ref;
    for (int i = 0; i < 5; ++i) {
        gen.push_back(random_cloud(rng, 6));
        ref.push_back(random_cloud(rng, 6));
    }
    bool tables = true;
    for (MetricDistance dist : {MetricDistance::CD, MetricDistance::EMD}) {
        std::vector<PointCloud> g, r;
        for (const auto& pc : gen) g.push_back(normalize_unit_sphere(pc));
        for (const auto& pc : ref) r.push_back(normalize_unit_sphere(pc));
        auto d = [&](const PointCloud& a, const PointCloud& b) {
            return dist == MetricDistance::CD ? chamfer_distance(a, b) : emd(a, b);
        };
        double mmd_expect = 0.0;
        std::vector<char> matched(r.size(), 0);
        for (const auto& rr : r) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& gg : g) best = std::min(best, d(gg, rr));
            mmd_expect += best;
        }
        mmd_expect /= static_cast<double>(r.size());
        for (const auto& gg : g) {
            std::size_t best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < r.size(); ++j)
                if (d(gg, r[j]) < bd) {
                    bd = d(gg, r[j]);
                    best = j;
                }
            matched[best] = 1;
        }
        double cov_expect = std::count(matched.begin(), matched.end(), 1) / static_cast<double>(r.size());
        std::vector<PointCloud> all = g;
        all.insert(all.end(), r.begin(), r.end());
        long correct = 0;
        for (std::size_t i = 0; i < all.size(); ++i) {
            std::size_t best = i == 0 ? 1 : 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < all.size(); ++j) {
                if (j == i) continue;
                if (d(all[i], all[j]) < bd) {
                    bd = d(all[i], all[j]);
                    best = j;
                }
            }
            if ((best < g.size()) == (i < g.size())) ++correct;
        }
        double nna_expect = static_cast<double>(correct) / static_cast<double>(all.size());
        tables = tables && std::abs(mmd(gen, ref, dist) - mmd_expect) < 1e-12;
        tables = tables && std::abs(cov(gen, ref, dist) - cov_expect) < 1e-12;
        tables = tables && std::abs(one_nna(gen, ref, dist) - nna_expect) < 1e-12;
    }
    double tmd_expect = 0.0;
    {
        std::vector<PointCloud> n;
        for (const auto& pc : gen) n.push_back(normalize_unit_sphere(pc));
        for (std::size_t i = 0; i < n.size(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n.size(); ++j)
                if (j != i) s += chamfer_distance(n[i], n[j]);
            tmd_expect += s / static_cast<double>(n.size() - 1);
        }
    }
    tables = tables && std::abs(tmd(gen) - tmd_expect) < 1e-12;

    char buf[96];
    std::snprintf(buf, sizeof buf, "same-distribution 1-NNA %.3f", nna);
    report(11, "Metric suite: identical-set facts, separation, same-distribution 1-NNA, brute-force tables",
           facts && separated && same_dist && tables, buf);
}

// 12. End-to-end pipeline at desk scale.
void criterion12() {
    auto t0 = std::chrono::steady_clock::now();
    fs::path dir = fs::temp_directory_path() / "pcsq_accept_pipeline";
    fs::remove_all(dir);
    PipelineConfig cfg;
    cfg.set("data.train_count", "8");
    cfg.set("data.test_count", "8");
    cfg.set("data.points_per_shape", "128");
    cfg.set("model.sphere_points", "128");
    cfg.set("model.latent_dim", "32");
    cfg.set("model.knn", "8");
    cfg.set("model.groups", "12");
    cfg.set("cae.enc_widths", "16,32");
    cfg.set("cae.dec_hidden", "32");
    cfg.set("cae.epochs", "40");
    cfg.set("cae.use_emd_loss", "false");
    cfg.set("group.epochs", "20");
    cfg.set("group.hidden", "48");
    cfg.set("vq.enc_widths", "16,32");
    cfg.set("vq.dec_hidden", "32");
    cfg.set("vq.epochs", "40");
    cfg.set("vq.use_emd_loss", "false");
    cfg.set("tf.layers", "2");
    cfg.set("tf.heads", "2");
    cfg.set("tf.d_model", "48");
    cfg.set("tf.epochs", "120");
    cfg.set("tf.lr", "3e-3");

    for (Stage s : {Stage::A, Stage::B, Stage::C, Stage::D}) run_stage(s, cfg, dir.string());
    PipelineModels m = load_pipeline(dir.string());
    bool finite = true;
    for (const auto* h : {&m.cae.loss_history, &m.grouping.loss_history, &m.vq.loss_history, &m.tf.loss_history}) {
        finite = finite && !h->empty();
        for (double v : *h) finite = finite && std::isfinite(v);
    }

    SamplingOptions opt;
    std::vector<PointCloud> gen;
    std::vector<std::vector<int>> seqs;
    for (int i = 0; i < 16; ++i) {
        std::vector<int> toks = sample_sequence(m.tf, opt, static_cast<std::uint64_t>(1000 + i));
        seqs.push_back(toks);
        TokenSequence seq;
        seq.tokens = toks;
        gen.push_back(decode_tokens(m, seq, 128));
    }
    std::sort(seqs.begin(), seqs.end());
    std::size_t distinct = static_cast<std::size_t>(std::unique(seqs.begin(), seqs.end()) - seqs.begin());

    // Fixed-seed generation is byte-stable through serialization.
    std::stringstream s1, s2;
    save_pointcloud(generate_shape(m, opt, 123, 128), s1, CloudFormat::PcsqBinary);
    save_pointcloud(generate_shape(m, opt, 123, 128), s2, CloudFormat::PcsqBinary);
    bool stable = s1.str() == s2.str();

    MetricReport rep = evaluate_sets(gen, pipeline_test_set(cfg));
    bool metrics_ok = std::isfinite(rep.mmd_cd) && std::isfinite(rep.mmd_emd) && rep.cov_cd >= 0.0 &&
                      rep.cov_cd <= 1.0 && rep.nna_cd >= 0.0 && rep.nna_cd <= 1.0;
    double dt = seconds_since(t0);
    fs::remove_all(dir);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu distinct sequences; MMD-CD(x1e3) %.2f, 1-NNA-CD %.2f; %.0fs", distinct,
                  rep.mmd_cd * 1e3, rep.nna_cd, dt);
    report(12, "End-to-end pipeline: stages A-D, 16 samples, eval under 30 min",
           finite && distinct >= 2 && stable && metrics_ok && dt < 1800.0, buf);
}

int main() {
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    ToyStack stack;
    criterion5(stack);
    criterion6(stack);
    criterion7(stack);
    criterion8();
    criterion9();
    criterion10();
    criterion11();
    criterion12();
    std::printf("%s (%d/12 criteria passed)\n", failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
                12 - failures);
    return failures;
}
