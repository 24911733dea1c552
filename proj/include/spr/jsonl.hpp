#pragma once

#include <spr/error.hpp>

#include <json.hpp>

#include <cstddef>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <string>

namespace spr {

using json = nlohmann::json;

/// Calls `visit(line_number, record)` for every non-blank line. Parse errors
/// and errors thrown by `visit` are rethrown with the 1-based line number.
inline void read_jsonl(std::istream& in, const std::string& source,
                       const std::function<void(std::size_t, const json&)>& visit) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            fail(ErrorCode::parse, source + ":" + std::to_string(line_no) + ": " + e.what());
        }
        try {
            visit(line_no, record);
        } catch (const Error& e) {
            fail(e.code(), source + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const json::exception& e) {
            fail(ErrorCode::parse, source + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

inline void write_jsonl_record(std::ostream& out, const json& record) {
    out << record.dump() << '\n';
}

inline std::ifstream open_input(const std::string& path, bool binary = false) {
    std::ifstream in(path, binary ? std::ios::in | std::ios::binary : std::ios::in);
    require(in.good(), ErrorCode::not_found, "cannot open " + path);
    return in;
}

inline std::ofstream open_output(const std::string& path, bool binary = false) {
    std::ofstream out(path, binary ? std::ios::out | std::ios::binary | std::ios::trunc
                                   : std::ios::out | std::ios::trunc);
    require(out.good(), ErrorCode::io, "cannot write " + path);
    return out;
}

/// Fetches a typed field, raising a validation error naming the field.
template <typename T>
T get_field(const json& record, const char* name) {
    auto it = record.find(name);
    require(it != record.end(), ErrorCode::validation, std::string("missing field '") + name + "'");
    try {
        return it->template get<T>();
    } catch (const json::exception&) {
        fail(ErrorCode::validation, std::string("field '") + name + "' has the wrong type");
    }
}

}  // namespace spr
