#include "isps/csv_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace isps {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << contents;
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Eigen::Index CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return static_cast<Eigen::Index>(i);
    }
    throw std::out_of_range("CSV has no column '" + name + "'");
}

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    CsvTable t;
    std::string line;
    std::vector<std::vector<double>> values;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            t.comments.push_back(line.substr(line.size() > 1 && line[1] == ' ' ? 2 : 1));
            continue;
        }
        if (t.header.empty()) {
            t.header = split(line);
            continue;
        }
        const auto cells = split(line);
        if (cells.size() != t.header.size()) {
            throw std::runtime_error(path.string() + ": row " + std::to_string(values.size() + 1) +
                                     " has " + std::to_string(cells.size()) + " cells, expected " +
                                     std::to_string(t.header.size()));
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) row.push_back(std::stod(c));
        values.push_back(std::move(row));
    }
    t.rows.resize(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(t.header.size()));
    for (std::size_t r = 0; r < values.size(); ++r) {
        for (std::size_t c = 0; c < values[r].size(); ++c) {
            t.rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = values[r][c];
        }
    }
    return t;
}

}  // namespace isps
