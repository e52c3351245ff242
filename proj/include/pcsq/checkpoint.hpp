#pragma once

// Versioned checkpoint container: a JSON metadata block (kind, config, seed,
// loss history) followed by named parameter tensors. Round trips are exact.

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcsq/config.hpp"
#include "pcsq/nn.hpp"
#include "pcsq/pcio.hpp"

namespace pcsq {

struct Checkpoint {
    std::string kind;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> config;
    std::vector<double> loss_history;
    nn::ParamStore params;
};

namespace detail {
constexpr char kCkptMagic[8] = {'P', 'C', 'S', 'Q', 'C', 'K', 'P', '1'};

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t get_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw ParseError("checkpoint: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}
}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(detail::kCkptMagic, 8);
    nlohmann::json meta;
    meta["kind"] = ck.kind;
    meta["seed"] = ck.seed;
    meta["config"] = ck.config;
    meta["loss_history"] = ck.loss_history;
    std::string js = meta.dump();
    detail::put_u64_le(f, js.size());
    f.write(js.data(), static_cast<std::streamsize>(js.size()));
    detail::put_u64_le(f, ck.params.entries.size());
    for (const auto& e : ck.params.entries) {
        detail::put_u64_le(f, e.name.size());
        f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::put_u64_le(f, static_cast<std::uint64_t>(e.value.rows()));
        detail::put_u64_le(f, static_cast<std::uint64_t>(e.value.cols()));
        f.put(e.trainable ? 1 : 0);
        f.write(reinterpret_cast<const char*>(e.value.data()),
                static_cast<std::streamsize>(sizeof(double)) * e.value.size());
    }
    f.flush();
    if (!f) throw IoError("write failure: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, detail::kCkptMagic, 8) != 0) throw ParseError("checkpoint: bad magic");
    std::uint64_t jlen = detail::get_u64_le(f);
    std::string js(jlen, '\0');
    f.read(js.data(), static_cast<std::streamsize>(jlen));
    if (!f) throw ParseError("checkpoint: truncated metadata");
    nlohmann::json meta = nlohmann::json::parse(js);
    Checkpoint ck;
    ck.kind = meta.at("kind").get<std::string>();
    ck.seed = meta.at("seed").get<std::uint64_t>();
    ck.config = meta.at("config").get<std::map<std::string, std::string>>();
    ck.loss_history = meta.at("loss_history").get<std::vector<double>>();
    std::uint64_t n = detail::get_u64_le(f);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::uint64_t nlen = detail::get_u64_le(f);
        std::string name(nlen, '\0');
        f.read(name.data(), static_cast<std::streamsize>(nlen));
        std::uint64_t rows = detail::get_u64_le(f);
        std::uint64_t cols = detail::get_u64_le(f);
        int trainable = f.get();
        nn::Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        f.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols));
        if (!f) throw ParseError("checkpoint: truncated tensor " + name);
        ck.params.add(name, std::move(m), trainable == 1);
    }
    return ck;
}

inline void copy_params_by_name(nn::ParamStore& dst, const nn::ParamStore& src) {
    for (auto& e : dst.entries) {
        bool found = false;
        for (const auto& s : src.entries) {
            if (s.name == e.name) {
                if (s.value.rows() != e.value.rows() || s.value.cols() != e.value.cols())
                    throw ParseError("checkpoint tensor shape mismatch: " + e.name);
                e.value = s.value;
                found = true;
                break;
            }
        }
        if (!found) throw ParseError("checkpoint missing tensor: " + e.name);
    }
}

inline PipelineConfig config_from_checkpoint(const Checkpoint& ck) {
    PipelineConfig cfg;
    for (const auto& [k, v] : ck.config) cfg.set(k, v);
    return cfg;
}

}  // namespace pcsq
