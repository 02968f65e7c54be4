#pragma once

// Versioned parameter container.
//
// Layout (all integers little-endian):
//   magic "VQSCCKPT" | u32 version | u64 creation seed
//   u32 metadata length | metadata bytes (key=value lines)
//   u32 entry count
//   per entry: u32 name length | name | u32 rank | u64 dims[rank] | f64 values
// Entries are written in lexicographic name order.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vqasc/tensor.hpp"

namespace vqasc {

struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    std::uint32_t version = kFormatVersion;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> metadata;
    std::map<std::string, Tensor> tensors;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vqasc
