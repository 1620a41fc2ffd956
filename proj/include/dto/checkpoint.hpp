#pragma once

#include <filesystem>
#include <string>

#include "dto/model.hpp"

namespace dto {

inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'T', 'C', 'K', 'P', 'T', '1'};

std::string config_json(const SttConfig& config);
SttConfig config_from_json(const std::string& text);

/// Parameters are stored as f32, so a load returns them rounded to float.
void save_checkpoint(const SttModel& model, const std::filesystem::path& path);
SttModel load_checkpoint(const std::filesystem::path& path);

/// Same layout in memory, for tests.
std::string checkpoint_bytes(const SttModel& model);
SttModel checkpoint_from_bytes(const std::string& bytes);

}  // namespace dto
