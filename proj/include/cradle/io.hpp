// io.hpp - versioned CSV conventions, checksums and binary state dumps.

#pragma once

#include "cradle/types.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace cradle::io {

inline constexpr int kSchemaVersion = 1;

// First line of every emitted CSV: "# schema=cradle.<kind>.v1".
std::string schema_line(const std::string& kind);
// Throws std::runtime_error unless `line` is the schema line for `kind`.
void expect_schema(const std::string& line, const std::string& kind, const std::filesystem::path& origin);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// Writes numbers with round-trip precision.
void configure_stream(std::ostream& out);

// Simple CSV table: schema kind, header and numeric rows.
struct CsvTable {
    std::string kind;
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};
void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path, const std::string& kind);

// Row-major (re, im) little-endian doubles plus a JSON sidecar <path>.json
// describing dimensions and basis ordering.
void write_matrix_binary(const std::filesystem::path& path, const CMat& m, int num_modes, int cutoff,
                         double time);
CMat read_matrix_binary(const std::filesystem::path& path);

} // namespace cradle::io
