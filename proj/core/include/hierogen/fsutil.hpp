#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "hierogen/common.hpp"

namespace hierogen::fs {

using json = nlohmann::json;

json read_json(const std::filesystem::path& path);

/// Atomic write (temp file + rename) so partially written artifacts never
/// become visible to a resumed run.
void write_json_atomic(const std::filesystem::path& path, const json& j, int indent = 2);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

std::string read_text(const std::filesystem::path& path);

void ensure_dir(const std::filesystem::path& dir);

/// Stable FNV-1a content hash used for manifest/idempotency checks.
std::string fnv1a_hex(const std::string& s);

}  // namespace hierogen::fs
