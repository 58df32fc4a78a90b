#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace seqsort {

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_text_file(const std::filesystem::path& path);

/// Regular files under `root`, sorted by path.
std::vector<std::filesystem::path> list_files_recursive(const std::filesystem::path& root);

/// Replaces characters that are unsafe in a single path component.
std::string sanitize_component(std::string_view text);

}  // namespace seqsort
