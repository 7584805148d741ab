#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary container for named f32 tensors:
//   "CNST" | version u32 | records... | crc32 u32
// record: name_len u32 | name bytes | rank u32 | dims u32... | payload f32
// All integers and floats little-endian; crc32 (IEEE) covers everything
// before it. Loading reproduces every tensor bitwise.
class Checkpoint {
public:
    static constexpr uint32_t kVersion = 1;
    static constexpr size_t kMaxNameLen = 1024;

    void set(const std::string& name, const Tensor& t);
    Tensor get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

    // Copies values into registered destination tensors by name.
    void load_into(const std::vector<std::pair<std::string, Tensor>>& dst) const;

private:
    std::vector<std::pair<std::string, Tensor>> tensors_;
    std::unordered_map<std::string, size_t> index_;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// IEEE 802.3 CRC-32 (reflected, poly 0xEDB88320), exposed for tests.
uint32_t crc32_ieee(const uint8_t* data, size_t len, uint32_t seed = 0);

}  // namespace glyphdiff
