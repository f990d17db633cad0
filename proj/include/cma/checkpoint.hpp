#pragma once

#include <filesystem>
#include <vector>

#include "cma/heads.hpp"

namespace cma {

// Model checkpoint, version 1. Little-endian, same tensor encoding as CMAF.
//
//   "CMAM"              4 bytes magic
//   version             u32 (= 1)
//   variant tag         u32 length + UTF-8 ("full", "-cross", ...)
//   meta input          u8 (0 probabilities, 1 features)
//   hidden units        u32
//   dimension d         u32
//   tensor count        u32
//   per tensor:
//     name              u32 length + UTF-8 (e.g. "branch.c.weights")
//     rows, cols        u32, u32
//     values            rows * cols float32, row-major
//
// Parameters are narrowed to float32 on save.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_model(const CmaModel& model);
CmaModel parse_model(std::span<const std::uint8_t> bytes);

void save_model(const CmaModel& model, const std::filesystem::path& path);
CmaModel load_model(const std::filesystem::path& path);

}  // namespace cma
