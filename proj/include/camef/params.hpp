#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "camef/common.hpp"
#include "camef/tensor.hpp"

namespace camef {

/// Named parameter store. Names are hierarchical ("text.block0.attn.wq") and
/// unique; each carries a trainable flag. Iteration order is lexicographic
/// (std::map), which keeps every downstream consumer deterministic.
class ParameterSet {
public:
    Tensor& add(const std::string& name, Tensor t, bool trainable = true) {
        if (params_.count(name)) throw ContractError("duplicate parameter name: " + name);
        trainable_[name] = trainable;
        return params_.emplace(name, std::move(t)).first->second;
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }

    Tensor& get(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter: " + name);
        return it->second;
    }

    bool trainable(const std::string& name) const {
        auto it = trainable_.find(name);
        if (it == trainable_.end()) throw ContractError("unknown parameter: " + name);
        return it->second;
    }
    void set_trainable(const std::string& name, bool flag) {
        if (!params_.count(name)) throw ContractError("unknown parameter: " + name);
        trainable_[name] = flag;
    }

    /// Mark every parameter whose name starts with `prefix` as frozen.
    void freeze_prefix(const std::string& prefix) {
        for (auto& [name, t] : params_)
            if (name.rfind(prefix, 0) == 0) trainable_[name] = false;
    }

    const std::map<std::string, Tensor>& all() const { return params_; }
    std::map<std::string, Tensor>& all() { return params_; }
    std::size_t count() const { return params_.size(); }

    // ---- checkpoint archive ----------------------------------------------
    // Layout: magic, entry count, then per entry (sorted by name):
    //   name, trainable flag, rank, extents, little-endian float32 payload.
    // The textual manifest written alongside lists names, shapes and flags.

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot open checkpoint for write: " + path);
        const char magic[8] = {'C', 'A', 'M', 'E', 'F', 'P', 'K', '1'};
        out.write(magic, 8);
        write_u64(out, params_.size());
        for (const auto& [name, t] : params_) {
            write_u64(out, name.size());
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            out.put(trainable_.at(name) ? 1 : 0);
            write_u64(out, t.rank());
            for (std::size_t e : t.shape()) write_u64(out, e);
            for (double v : t.data()) write_f32(out, static_cast<float>(v));
        }
        if (!out) throw DataError("checkpoint write failed: " + path);
    }

    void save_manifest(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("cannot open manifest for write: " + path);
        for (const auto& [name, t] : params_) {
            out << name << " " << t.shape_str() << " "
                << (trainable_.at(name) ? "trainable" : "frozen") << "\n";
        }
    }

    static ParameterSet load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open checkpoint: " + path);
        char magic[8];
        in.read(magic, 8);
        if (!in || std::string(magic, 8) != "CAMEFPK1")
            throw DataError("bad checkpoint magic in " + path);
        ParameterSet ps;
        std::uint64_t n = read_u64(in);
        for (std::uint64_t i = 0; i < n; ++i) {
            std::uint64_t name_len = read_u64(in);
            std::string name(name_len, '\0');
            in.read(name.data(), static_cast<std::streamsize>(name_len));
            bool trainable = in.get() != 0;
            std::uint64_t rank = read_u64(in);
            std::vector<std::size_t> shape(rank);
            for (auto& e : shape) e = read_u64(in);
            Tensor t(shape);
            for (double& v : t.data()) v = static_cast<double>(read_f32(in));
            if (!in) throw DataError("truncated checkpoint: " + path);
            ps.add(name, std::move(t), trainable);
        }
        return ps;
    }

private:
    static void write_u64(std::ofstream& out, std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        out.write(reinterpret_cast<const char*>(b), 8);
    }
    static std::uint64_t read_u64(std::ifstream& in) {
        unsigned char b[8];
        in.read(reinterpret_cast<char*>(b), 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }
    static void write_f32(std::ofstream& out, float f) {
        std::uint32_t u;
        static_assert(sizeof(f) == sizeof(u));
        std::memcpy(&u, &f, 4);
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
        out.write(reinterpret_cast<const char*>(b), 4);
    }
    static float read_f32(std::ifstream& in) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        std::uint32_t u = 0;
        for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        float f;
        std::memcpy(&f, &u, 4);
        return f;
    }

    std::map<std::string, Tensor> params_;
    std::map<std::string, bool> trainable_;
};

}  // namespace camef
