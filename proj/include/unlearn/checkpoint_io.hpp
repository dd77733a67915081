#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "unlearn/io.hpp"
#include "unlearn/model.hpp"

namespace unlearn {

// Checkpoint file: magic "UFCKPT1", config integers and the role/step fields
// as little-endian values, then the parameters as little-endian 32-bit floats
// in slice order.
namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; i++) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; i++) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint32_t get_u32(const std::string& in, size_t& at) {
    if (at + 4 > in.size()) throw std::runtime_error("truncated checkpoint");
    uint32_t v = 0;
    for (int i = 0; i < 4; i++) v |= static_cast<uint32_t>(static_cast<unsigned char>(in[at++])) << (8 * i);
    return v;
}

inline uint64_t get_u64(const std::string& in, size_t& at) {
    if (at + 8 > in.size()) throw std::runtime_error("truncated checkpoint");
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(static_cast<unsigned char>(in[at++])) << (8 * i);
    return v;
}

}  // namespace detail

inline std::string checkpoint_to_bytes(const Checkpoint& ck) {
    ck.config.validate();
    if (ck.params.size() != param_count(ck.config))
        throw std::runtime_error("parameter count mismatch");
    std::string out;
    out.reserve(64 + ck.params.size() * 4);
    out += "UFCKPT1";
    detail::put_u32(out, static_cast<uint32_t>(ck.config.layers));
    detail::put_u32(out, static_cast<uint32_t>(ck.config.heads));
    detail::put_u32(out, static_cast<uint32_t>(ck.config.embed_dim));
    detail::put_u32(out, static_cast<uint32_t>(ck.config.context_len));
    detail::put_u32(out, static_cast<uint32_t>(ck.config.vocab_size));
    detail::put_u64(out, ck.config.seed);
    detail::put_u64(out, static_cast<uint64_t>(ck.step_count));
    detail::put_u32(out, static_cast<uint32_t>(ck.role));
    for (float f : ck.params) {
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32(out, bits);
    }
    return out;
}

inline Checkpoint checkpoint_from_bytes(const std::string& in) {
    if (in.size() < 7 || in.compare(0, 7, "UFCKPT1") != 0)
        throw std::runtime_error("bad checkpoint magic");
    size_t at = 7;
    Checkpoint ck;
    ck.config.layers = static_cast<int>(detail::get_u32(in, at));
    ck.config.heads = static_cast<int>(detail::get_u32(in, at));
    ck.config.embed_dim = static_cast<int>(detail::get_u32(in, at));
    ck.config.context_len = static_cast<int>(detail::get_u32(in, at));
    ck.config.vocab_size = static_cast<int>(detail::get_u32(in, at));
    ck.config.seed = detail::get_u64(in, at);
    ck.step_count = static_cast<int64_t>(detail::get_u64(in, at));
    uint32_t role = detail::get_u32(in, at);
    if (role > 2) throw std::runtime_error("bad checkpoint role tag");
    ck.role = static_cast<Role>(role);
    ck.config.validate();
    const size_t n = param_count(ck.config);
    if (in.size() - at != n * 4) throw std::runtime_error("checkpoint size does not match config");
    ck.params.resize(n);
    for (size_t i = 0; i < n; i++) {
        uint32_t bits = detail::get_u32(in, at);
        std::memcpy(&ck.params[i], &bits, 4);
    }
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    write_file(path, checkpoint_to_bytes(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return checkpoint_from_bytes(read_file(path));
}

}  // namespace unlearn
