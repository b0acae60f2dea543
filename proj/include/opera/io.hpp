#pragma once

#include <json.hpp>

#include <fstream>
#include <stdexcept>
#include <string>

namespace opera {

// File could not be opened, read or written.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    out.close();
    if (!out) throw IoError("write failed: " + path);
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

// Compact form for data containers, indented form for reports.
inline void write_json_file(const std::string& path, const nlohmann::json& j, bool pretty = true) {
    write_text_file(path, (pretty ? j.dump(2) : j.dump()) + '\n');
}

}  // namespace opera
