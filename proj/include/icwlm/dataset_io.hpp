#pragma once

// WDS1 dataset files.
//
//   bytes 0-3   "WDS1"
//   bytes 4-7   little-endian u32 header length N
//   bytes 8-8+N UTF-8 JSON header
//   rest        little-endian float32 payload
//
// Payload order: for each sample, its channel slots (oldest first) followed
// by its label matrix if the header's label_slots is 1. Each matrix is
// written column-major, the real block followed by the imaginary block.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "icwlm/channel_sim.hpp"
#include "icwlm/icl_dataset.hpp"

namespace icwlm {

inline constexpr char kWds1Magic[4] = {'W', 'D', 'S', '1'};
inline constexpr int kWds1Version = 1;

void to_json(nlohmann::json& j, const SystemConfig& cfg);
void from_json(const nlohmann::json& j, SystemConfig& cfg);

std::string encode_wds1(const TaskDataset& ds);
TaskDataset decode_wds1(const std::string& bytes);

void write_wds1(const std::filesystem::path& path, const TaskDataset& ds);
TaskDataset read_wds1(const std::filesystem::path& path);

// Parsed header only, without the payload.
nlohmann::json read_wds1_header(const std::filesystem::path& path);

}  // namespace icwlm
