#pragma once

// Flat configuration of dotted keys and scalar values. Unknown keys are
// rejected so hyperparameter typos fail loudly.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "pcsq/pcio.hpp"

namespace pcsq {

class PipelineConfig {
    std::map<std::string, std::string> values_;

    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> d = {
            // dataset
            {"data.family", "ellipsoid"},
            {"data.train_count", "8"},
            {"data.test_count", "8"},
            {"data.points_per_shape", "512"},
            {"data.seed", "1"},
            // shared geometry
            {"model.sphere_points", "512"},
            {"model.groups", "128"},        // G
            {"model.latent_dim", "256"},
            {"model.knn", "20"},
            // stage A: canonical auto-encoder
            {"cae.epochs", "200"},
            {"cae.lr", "1e-3"},
            {"cae.batch", "8"},
            {"cae.seed", "11"},
            {"cae.enc_widths", "64,64,128"},
            {"cae.dec_hidden", "128"},
            {"cae.use_emd_loss", "true"},
            {"cae.graph_attention", "false"},
            // stage B: grouping network
            {"group.epochs", "200"},
            {"group.lr", "1e-3"},
            {"group.seed", "13"},
            {"group.hidden", "128"},
            {"group.input", "sphere"},       // sphere | sphere_and_point
            {"group.order", "spiral"},       // spiral | spiral_star | random
            {"group.uniform_baseline", "false"},
            // stage C: vector-quantized codec
            {"vq.epochs", "300"},
            {"vq.lr", "1e-3"},
            {"vq.seed", "17"},
            {"vq.codebook_entries", "50"},
            {"vq.code_dim", "4"},
            {"vq.ema_decay", "0.99"},
            {"vq.ema_eps", "1e-5"},
            {"vq.shared_codebook", "false"},  // ablation: single shared codebook
            {"vq.per_group_projections", "false"},
            {"vq.enc_widths", "64,64,128"},
            {"vq.dec_hidden", "128"},
            {"vq.use_emd_loss", "true"},
            // stage D: transformer
            {"tf.epochs", "200"},
            {"tf.lr", "1e-3"},
            {"tf.seed", "19"},
            {"tf.layers", "4"},
            {"tf.heads", "4"},
            {"tf.d_model", "128"},
            {"tf.learned_pos_emb", "true"},
            {"tf.conditional", "false"},
            {"tf.depth_res", "32"},
            // sampling
            {"sample.top_p", "0.92"},
            {"sample.temperature", "1.0"},
            {"sample.top_k", "0"},  // 0 disables
        };
        return d;
    }

public:
    PipelineConfig() : values_(defaults()) {}

    void set(const std::string& key, const std::string& value) {
        if (!defaults().count(key)) throw DomainError("unknown config key: " + key);
        values_[key] = value;
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw DomainError("unknown config key: " + key);
        return it->second;
    }
    double num(const std::string& key) const { return std::stod(str(key)); }
    long integer(const std::string& key) const { return std::stol(str(key)); }
    std::uint64_t seed(const std::string& key) const { return static_cast<std::uint64_t>(std::stoull(str(key))); }
    bool flag(const std::string& key) const {
        const std::string& v = str(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw DomainError("config key " + key + " is not a boolean: " + v);
    }
    std::vector<long> int_list(const std::string& key) const {
        std::vector<long> out;
        std::stringstream ss(str(key));
        std::string tok;
        while (std::getline(ss, tok, ',')) out.push_back(std::stol(tok));
        return out;
    }

    const std::map<std::string, std::string>& all() const { return values_; }

    static PipelineConfig parse(std::istream& is) {
        PipelineConfig cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ParseError("config: missing '=' at line " + std::to_string(lineno));
            auto trim = [](std::string s) {
                auto a = s.find_first_not_of(" \t\r");
                auto b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return cfg;
    }

    static PipelineConfig load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open config " + path);
        return parse(f);
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw IoError("cannot write config " + path);
        for (const auto& [k, v] : values_) f << k << " = " << v << '\n';
    }
};

}  // namespace pcsq
