// Command-line front end for the four-stage point-cloud generation pipeline.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "pcsq/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pcsq;

namespace {

std::string numbered(const std::string& dir, const std::string& stem, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03zu.xyz", stem.c_str(), i);
    return dir + "/" + buf;
}

std::vector<PointCloud> load_cloud_dir(const std::string& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        auto ext = e.path().extension();
        if (ext == ".xyz" || ext == ".pcsq") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no .xyz/.pcsq files in " + dir);
    std::vector<PointCloud> out;
    for (const auto& p : files)
        out.push_back(load_pointcloud(p.string(),
                                      p.extension() == ".pcsq" ? CloudFormat::PcsqBinary : CloudFormat::XyzText));
    return out;
}

void print_report(const MetricReport& r) {
    // Table convention: CD scaled by 1e3, EMD by 1e2.
    std::printf("%-12s %12s %12s\n", "metric", "CD(x1e3)", "EMD(x1e2)");
    std::printf("%-12s %12.4f %12.4f\n", "MMD", r.mmd_cd * 1e3, r.mmd_emd * 1e2);
    std::printf("%-12s %12.4f %12.4f\n", "COV", r.cov_cd, r.cov_emd);
    std::printf("%-12s %12.4f %12.4f\n", "1-NNA", r.nna_cd, r.nna_emd);
    if (r.has_tmd) std::printf("%-12s %12.4f\n", "TMD", r.tmd_value);
    std::printf("emd_mode: %s (gen=%zu, ref=%zu)\n", r.emd_mode.c_str(), r.gen_count, r.ref_count);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pcsq: canonical-mapping point cloud generation pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    long long seed_flag = -1;
    app.add_option("--config", config_path, "pipeline config file (dotted keys)");
    app.add_option("--out", out_dir, "artifact directory");
    app.add_option("--seed", seed_flag, "override the command's seed");

    auto* c_synth = app.add_subcommand("synth-data", "write the synthetic train/test splits");
    auto* c_cae = app.add_subcommand("train-cae", "stage A: canonical auto-encoder");
    auto* c_group = app.add_subcommand("train-group", "stage B: sphere grouping");
    auto* c_vq = app.add_subcommand("train-vqvae", "stage C: grouped vector quantization");
    auto* c_tf = app.add_subcommand("train-transformer", "stage D: autoregressive prior");

    auto* c_recon = app.add_subcommand("reconstruct", "auto-encode a cloud");
    std::string recon_input, recon_output = "recon.xyz";
    bool recon_quantized = false;
    c_recon->add_option("--input", recon_input, "input cloud (.xyz)")->required();
    c_recon->add_option("--output", recon_output, "output path");
    c_recon->add_flag("--quantized", recon_quantized, "route through the VQ codebook");

    auto* c_gen = app.add_subcommand("generate", "sample shapes from the trained prior");
    long gen_n = 4, gen_res = 0, gen_topk = -1;
    double gen_topp = -1.0, gen_temp = -1.0;
    c_gen->add_option("--n", gen_n, "number of shapes");
    c_gen->add_option("--resolution", gen_res, "output points per shape (default: training resolution)");
    c_gen->add_option("--top-p", gen_topp, "nucleus mass");
    c_gen->add_option("--temperature", gen_temp, "softmax temperature");
    c_gen->add_option("--top-k", gen_topk, "top-k cutoff (0 disables)");

    auto* c_complete = app.add_subcommand("complete", "depth-conditioned generation");
    std::string complete_depth;
    long complete_k = 4, complete_res = 0;
    double complete_temp = -1.0;
    c_complete->add_option("--depth", complete_depth, "depth image (.pgm)")->required();
    c_complete->add_option("--k", complete_k, "completions to sample");
    c_complete->add_option("--resolution", complete_res, "output points per shape");
    c_complete->add_option("--temperature", complete_temp, "softmax temperature");

    auto* c_eval = app.add_subcommand("eval", "metric report for generated vs reference clouds");
    std::string eval_gen, eval_ref, eval_report = "report.txt";
    bool eval_raw = false;
    c_eval->add_option("--gen", eval_gen, "directory of generated clouds")->required();
    c_eval->add_option("--ref", eval_ref, "directory of reference clouds")->required();
    c_eval->add_option("--report", eval_report, "report file name (inside --out)");
    c_eval->add_flag("--raw", eval_raw, "skip unit-sphere pre-normalization");

    auto* c_usage = app.add_subcommand("usage-report", "codebook usage on the test split");

    CLI11_PARSE(app, argc, argv);

    try {
        PipelineConfig cfg = config_path.empty() ? PipelineConfig() : PipelineConfig::load(config_path);
        auto seed_or = [&](const char* key) {
            return seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag) : cfg.seed(key);
        };

        if (c_synth->parsed()) {
            if (seed_flag >= 0) cfg.set("data.seed", std::to_string(seed_flag));
            fs::create_directories(out_dir + "/train");
            fs::create_directories(out_dir + "/test");
            auto train = pipeline_train_set(cfg);
            auto test = pipeline_test_set(cfg);
            for (std::size_t i = 0; i < train.size(); ++i)
                save_pointcloud(train[i], numbered(out_dir + "/train", "shape", i), CloudFormat::XyzText);
            for (std::size_t i = 0; i < test.size(); ++i)
                save_pointcloud(test[i], numbered(out_dir + "/test", "shape", i), CloudFormat::XyzText);
            std::printf("wrote %zu train / %zu test clouds to %s\n", train.size(), test.size(), out_dir.c_str());
        } else if (c_cae->parsed() || c_group->parsed() || c_vq->parsed() || c_tf->parsed()) {
            Stage stage = c_cae->parsed()   ? Stage::A
                          : c_group->parsed() ? Stage::B
                          : c_vq->parsed()    ? Stage::C
                                              : Stage::D;
            if (seed_flag >= 0) {
                const char* key = stage == Stage::A   ? "cae.seed"
                                  : stage == Stage::B ? "group.seed"
                                  : stage == Stage::C ? "vq.seed"
                                                      : "tf.seed";
                cfg.set(key, std::to_string(seed_flag));
            }
            std::string path = run_stage(stage, cfg, out_dir);
            std::printf("wrote %s\n", path.c_str());
        } else if (c_recon->parsed()) {
            PointCloud x = load_pointcloud(recon_input, CloudFormat::XyzText);
            PointCloud y;
            if (recon_quantized) {
                PipelineModels m = load_pipeline(out_dir, false);
                y = reconstruct_quantized(m, x, x.size());
            } else {
                detail::require_checkpoint(paths::cae(out_dir), "A");
                CanonicalAE ae = load_cae(paths::cae(out_dir));
                y = reconstruct(ae, fibonacci_sphere(static_cast<std::size_t>(ae.sphere_points)), x);
            }
            save_pointcloud(y, out_dir + "/" + recon_output, CloudFormat::XyzText);
            std::printf("CD(input, recon) = %.6f -> %s/%s\n", chamfer_distance(x, y), out_dir.c_str(),
                        recon_output.c_str());
        } else if (c_gen->parsed()) {
            PipelineModels m = load_pipeline(out_dir);
            SamplingOptions opt;
            opt.top_p = gen_topp > 0 ? gen_topp : m.cfg.num("sample.top_p");
            opt.temperature = gen_temp > 0 ? gen_temp : m.cfg.num("sample.temperature");
            opt.top_k = gen_topk >= 0 ? gen_topk : m.cfg.integer("sample.top_k");
            std::size_t res = gen_res > 0 ? static_cast<std::size_t>(gen_res)
                                          : static_cast<std::size_t>(m.cae.sphere_points);
            std::uint64_t base = seed_or("data.seed");
            fs::create_directories(out_dir + "/gen");
            for (long i = 0; i < gen_n; ++i) {
                PointCloud pc = generate_shape(m, opt, base + static_cast<std::uint64_t>(i), res);
                save_pointcloud(pc, numbered(out_dir + "/gen", "gen", static_cast<std::size_t>(i)),
                                CloudFormat::XyzText);
            }
            std::printf("wrote %ld shapes (%zu points each) to %s/gen\n", gen_n, res, out_dir.c_str());
        } else if (c_complete->parsed()) {
            PipelineModels m = load_pipeline(out_dir);
            DepthImage depth = load_depth_pgm(complete_depth);
            Eigen::RowVectorXd cond = encode_condition(m.tf, depth);
            SamplingOptions opt;
            opt.top_p = m.cfg.num("sample.top_p");
            opt.temperature = complete_temp > 0 ? complete_temp : m.cfg.num("sample.temperature");
            std::size_t res = complete_res > 0 ? static_cast<std::size_t>(complete_res)
                                               : static_cast<std::size_t>(m.cae.sphere_points);
            std::uint64_t base = seed_or("data.seed");
            fs::create_directories(out_dir + "/complete");
            std::vector<PointCloud> outs;
            for (long i = 0; i < complete_k; ++i) {
                outs.push_back(generate_shape(m, opt, base + static_cast<std::uint64_t>(i), res, &cond));
                save_pointcloud(outs.back(), numbered(out_dir + "/complete", "comp", static_cast<std::size_t>(i)),
                                CloudFormat::XyzText);
            }
            if (outs.size() >= 2) std::printf("TMD = %.6f\n", tmd(outs));
            std::printf("wrote %ld completions to %s/complete\n", complete_k, out_dir.c_str());
        } else if (c_eval->parsed()) {
            auto gen = load_cloud_dir(eval_gen);
            auto ref = load_cloud_dir(eval_ref);
            MetricReport rep = evaluate_sets(gen, ref, eval_raw);
            if (gen.size() >= 2) {
                rep.tmd_value = tmd(gen, eval_raw);
                rep.has_tmd = true;
            }
            fs::create_directories(out_dir);
            rep.save(out_dir + "/" + eval_report);
            print_report(rep);
        } else if (c_usage->parsed()) {
            PipelineModels m = load_pipeline(out_dir, false);
            auto test = pipeline_test_set(m.cfg);
            std::vector<TokenSequence> seqs;
            for (const auto& pc : test) seqs.push_back(encode_to_tokens(m.cae, m.grouping, m.ga, m.vq, pc));
            double usage = codebook_usage(m.vq.groups, m.vq.vocab(), seqs);
            std::printf("codebook usage on %zu test shapes: %.2f%%\n", test.size(), usage);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
