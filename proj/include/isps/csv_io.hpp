#pragma once

#include "isps/types.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace isps {

// 17 significant digits: enough to round-trip any double.
std::string format_double(double v);

// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

struct CsvTable {
    std::vector<std::string> comments;  // leading '#' lines, without the marker
    std::vector<std::string> header;
    Mat rows;

    Eigen::Index column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace isps
