#include "cradle/io.hpp"

#include "json.hpp"
#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>

namespace cradle::io {

std::string schema_line(const std::string& kind) {
    return "# schema=cradle." + kind + ".v" + std::to_string(kSchemaVersion);
}

void expect_schema(const std::string& line, const std::string& kind, const std::filesystem::path& origin) {
    std::string trimmed = line;
    while (!trimmed.empty() && (trimmed.back() == '\r' || trimmed.back() == ' ')) trimmed.pop_back();
    if (trimmed != schema_line(kind))
        throw std::runtime_error(origin.string() + ": expected schema line '" + schema_line(kind) + "', found '" +
                                 trimmed + "'");
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string() + " for hashing");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 initialisation failed");
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        const auto got = in.gcount();
        if (got > 0 && EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(got)) != 1)
            throw std::runtime_error("SHA-256 update failed");
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) throw std::runtime_error("SHA-256 final failed");
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return hex.str();
}

void configure_stream(std::ostream& out) {
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    configure_stream(out);
    out << schema_line(table.kind) << '\n';
    for (std::size_t i = 0; i < table.header.size(); ++i) out << (i ? "," : "") << table.header[i];
    out << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

CsvTable read_csv(const std::filesystem::path& path, const std::string& kind) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    CsvTable t;
    t.kind = kind;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + " is empty");
    expect_schema(line, kind, path);
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + " has no header");
    {
        std::istringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            if (!cell.empty() && cell.back() == '\r') cell.pop_back();
            t.header.push_back(cell);
        }
    }
    std::size_t lineno = 2;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::vector<double> row;
        std::istringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
            }
        }
        if (row.size() != t.header.size())
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                     std::to_string(t.header.size()) + " columns");
        t.rows.push_back(std::move(row));
    }
    return t;
}

namespace {

void put_le(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

double get_le(std::istream& in) {
    std::uint64_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

std::filesystem::path sidecar(const std::filesystem::path& path) {
    auto p = path;
    p += ".json";
    return p;
}

} // namespace

void write_matrix_binary(const std::filesystem::path& path, const CMat& m, int num_modes, int cutoff,
                         double time) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            put_le(out, m(r, c).real());
            put_le(out, m(r, c).imag());
        }
    nlohmann::json meta = {
        {"schema", "cradle.density-matrix.v" + std::to_string(kSchemaVersion)},
        {"rows", m.rows()},
        {"cols", m.cols()},
        {"num_modes", num_modes},
        {"cutoff", cutoff},
        {"time", time},
        {"element", "complex128 as (re, im) float64 pairs, little-endian, row-major"},
        {"basis", "mixed radix in the cutoff, cavity 1 is the most significant digit"},
    };
    std::ofstream js(sidecar(path));
    js << meta.dump(2) << '\n';
}

CMat read_matrix_binary(const std::filesystem::path& path) {
    std::ifstream js(sidecar(path));
    if (!js) throw std::runtime_error("missing sidecar for " + path.string());
    const auto meta = nlohmann::json::parse(js);
    const auto rows = meta.at("rows").get<Eigen::Index>();
    const auto cols = meta.at("cols").get<Eigen::Index>();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    CMat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
            const double re = get_le(in);
            const double im = get_le(in);
            m(r, c) = cplx(re, im);
        }
    if (!in) throw std::runtime_error(path.string() + " is shorter than its sidecar states");
    return m;
}

} // namespace cradle::io
