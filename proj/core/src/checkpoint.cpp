#include "glyphdiff/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace glyphdiff {

uint32_t crc32_ieee(const uint8_t* data, size_t len, uint32_t seed) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void Checkpoint::set(const std::string& name, const Tensor& t) {
    if (name.size() > kMaxNameLen)
        throw FormatError("checkpoint: tensor name exceeds " + std::to_string(kMaxNameLen) +
                          " bytes: " + name.substr(0, 32) + "...");
    auto it = index_.find(name);
    if (it != index_.end()) {
        tensors_[it->second].second = t;
        return;
    }
    index_[name] = tensors_.size();
    tensors_.emplace_back(name, t);
}

Tensor Checkpoint::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw FormatError("checkpoint: missing tensor " + name);
    return tensors_[it->second].second;
}

void Checkpoint::load_into(const std::vector<std::pair<std::string, Tensor>>& dst) const {
    for (const auto& [name, t] : dst) {
        Tensor src = get(name);
        if (src.shape() != t.shape())
            throw FormatError("checkpoint: shape mismatch for " + name + ": file " +
                              shape_str(src.shape()) + " vs model " + shape_str(t.shape()));
        t.impl()->data = src.vec();
    }
}

namespace {

void put_u32(std::string& buf, uint32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }

uint32_t take_u32(const std::string& buf, size_t& pos, const char* field) {
    if (pos + 4 > buf.size()) throw FormatError(std::string("checkpoint: truncated ") + field);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string buf;
    buf.append("CNST", 4);
    put_u32(buf, Checkpoint::kVersion);
    for (const auto& [name, t] : ckpt.tensors()) {
        if (name.size() > Checkpoint::kMaxNameLen)
            throw FormatError("checkpoint: tensor name too long: " + name.substr(0, 32));
        put_u32(buf, static_cast<uint32_t>(name.size()));
        buf.append(name);
        put_u32(buf, static_cast<uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) put_u32(buf, static_cast<uint32_t>(t.dim(i)));
        buf.append(reinterpret_cast<const char*>(t.data()),
                   static_cast<size_t>(t.numel()) * sizeof(float));
    }
    const uint32_t crc = crc32_ieee(reinterpret_cast<const uint8_t*>(buf.data()), buf.size());
    put_u32(buf, crc);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("checkpoint: cannot open for writing: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw FormatError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < 12) throw FormatError("checkpoint: truncated header");
    if (std::memcmp(buf.data(), "CNST", 4) != 0) throw FormatError("checkpoint: bad magic");

    const size_t body_end = buf.size() - 4;
    uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + body_end, 4);
    const uint32_t actual = crc32_ieee(reinterpret_cast<const uint8_t*>(buf.data()), body_end);
    if (stored_crc != actual) throw FormatError("checkpoint: crc mismatch");

    size_t pos = 4;
    const uint32_t version = take_u32(buf, pos, "version");
    if (version != Checkpoint::kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ckpt;
    while (pos < body_end) {
        const uint32_t name_len = take_u32(buf, pos, "name length");
        if (name_len > Checkpoint::kMaxNameLen) throw FormatError("checkpoint: name length field out of bounds");
        if (pos + name_len > body_end) throw FormatError("checkpoint: truncated name");
        std::string name(buf.data() + pos, name_len);
        pos += name_len;
        const uint32_t rank = take_u32(buf, pos, "rank");
        if (rank > 8) throw FormatError("checkpoint: rank field out of bounds");
        Shape shape(rank);
        int64_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            shape[i] = take_u32(buf, pos, "dims");
            numel *= shape[i];
        }
        const size_t bytes = static_cast<size_t>(numel) * sizeof(float);
        if (pos + bytes > body_end) throw FormatError("checkpoint: truncated payload");
        std::vector<float> data(static_cast<size_t>(numel));
        std::memcpy(data.data(), buf.data() + pos, bytes);
        pos += bytes;
        ckpt.set(name, Tensor::from_data(std::move(shape), std::move(data)));
    }
    return ckpt;
}

}  // namespace glyphdiff
