#include <cstring>
#include <fstream>

#include "factlab/common.hpp"
#include "factlab/model.hpp"

// Checkpoint file layout (all little-endian):
//   bytes 0..7   magic "FLCKPT01"
//   6 x uint32   n_layers, n_heads, d_model, vocab_size, max_context, mlp_mult
//   1 x uint64   parameter count
//   float32[]    parameters in ParamLayout order

namespace factlab {

namespace {

constexpr char kMagic[8] = {'F', 'L', 'C', 'K', 'P', 'T', '0', '1'};

void put_u32(std::string& out, uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

void put_u64(std::string& out, uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out.append(b, 8);
}

uint32_t get_u32(const std::string& s, size_t& off) {
    if (off + 4 > s.size()) throw IoError("checkpoint file is truncated");
    uint32_t v;
    std::memcpy(&v, s.data() + off, 4);
    off += 4;
    return v;
}

uint64_t get_u64(const std::string& s, size_t& off) {
    if (off + 8 > s.size()) throw IoError("checkpoint file is truncated");
    uint64_t v;
    std::memcpy(&v, s.data() + off, 8);
    off += 8;
    return v;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::string out;
    out.reserve(48 + ckpt.params.size() * 4);
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, static_cast<uint32_t>(ckpt.config.n_layers));
    put_u32(out, static_cast<uint32_t>(ckpt.config.n_heads));
    put_u32(out, static_cast<uint32_t>(ckpt.config.d_model));
    put_u32(out, static_cast<uint32_t>(ckpt.config.vocab_size));
    put_u32(out, static_cast<uint32_t>(ckpt.config.max_context));
    put_u32(out, static_cast<uint32_t>(ckpt.config.mlp_mult));
    put_u64(out, ckpt.params.size());
    const size_t bytes = ckpt.params.size() * 4;
    const size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, ckpt.params.data(), bytes);
    write_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    if (data.size() < sizeof(kMagic) || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a checkpoint file (bad magic): " + path.string());
    size_t off = sizeof(kMagic);
    ModelConfig config;
    config.n_layers = static_cast<int>(get_u32(data, off));
    config.n_heads = static_cast<int>(get_u32(data, off));
    config.d_model = static_cast<int>(get_u32(data, off));
    config.vocab_size = static_cast<int>(get_u32(data, off));
    config.max_context = static_cast<int>(get_u32(data, off));
    config.mlp_mult = static_cast<int>(get_u32(data, off));
    const uint64_t n_params = get_u64(data, off);

    Checkpoint ckpt = Checkpoint::zeros(config);
    if (n_params != ckpt.params.size())
        throw IoError("checkpoint parameter count does not match its config");
    if (off + n_params * 4 != data.size())
        throw IoError("checkpoint file size does not match its header");
    std::memcpy(ckpt.params.data(), data.data() + off, n_params * 4);
    ckpt.validate_finite();
    return ckpt;
}

} // namespace factlab
