#include "cxvae/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

namespace cxvae::io {

std::string fmt(double v) {
    std::array<char, 40> buf{};
    std::snprintf(buf.data(), buf.size(), "%.17g", v);
    return buf.data();
}

std::size_t Table::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw IoError("missing column '" + name + "'");
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') cell.pop_back();
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return in;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    return out;
}

}  // namespace

Table read_table(const std::string& path) {
    auto in = open_in(path);
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw IoError("'" + path + "' is empty");
    t.header = split_line(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto row = split_line(line);
        if (row.size() != t.header.size())
            throw IoError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                          " fields, found " + std::to_string(row.size()));
        t.rows.push_back(std::move(row));
    }
    return t;
}

void write_table(const std::string& path, const Table& t) {
    auto out = open_out(path);
    auto put = [&out](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
        out << '\n';
    };
    put(t.header);
    for (const auto& r : t.rows) put(r);
    if (!out) throw IoError("write failed for '" + path + "'");
}

double parse_double(const std::string& s, const std::string& context) {
    double v = 0.0;
    const auto* b = s.data();
    const auto* e = s.data() + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) throw IoError(context + ": not a number: '" + s + "'");
    return v;
}

long parse_long(const std::string& s, const std::string& context) {
    long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw IoError(context + ": not an integer: '" + s + "'");
    return v;
}

void write_fields(const std::string& path, const Matrix& m, const std::vector<long>& ids, const std::string& prefix) {
    if (static_cast<Eigen::Index>(ids.size()) != m.cols()) throw IoError("write_fields: id count differs from columns");
    auto out = open_out(path);
    out << "time_index";
    for (long id : ids) out << ',' << prefix << id;
    out << '\n';
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
        out << t;
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << fmt(m(t, j));
        out << '\n';
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

Fields read_fields(const std::string& path, const std::string& prefix) {
    const Table t = read_table(path);
    if (t.header.empty() || t.header[0] != "time_index") throw IoError(path + ": first column must be time_index");
    Fields f;
    for (std::size_t j = 1; j < t.header.size(); ++j) {
        const auto& h = t.header[j];
        if (h.rfind(prefix, 0) != 0) throw IoError(path + ": bad column '" + h + "'");
        f.ids.push_back(parse_long(h.substr(prefix.size()), path));
    }
    f.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(f.ids.size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        for (std::size_t j = 1; j < t.header.size(); ++j)
            f.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j - 1)) =
                parse_double(t.rows[r][j], path + " row " + std::to_string(r + 1));
    return f;
}

void write_sites(const std::string& path, const SpatialGrid& grid) {
    Table t;
    t.header = {"site_id", "x", "y"};
    for (std::size_t i = 0; i < grid.size(); ++i)
        t.rows.push_back({std::to_string(grid.ids[i]), fmt(grid.sites[i].x), fmt(grid.sites[i].y)});
    write_table(path, t);
    if (grid.regular) {
        json meta{{"rows", grid.regular->rows}, {"cols", grid.regular->cols}, {"side", grid.regular->side}};
        write_json(path + ".json", meta);
    }
}

SpatialGrid read_sites(const std::string& path) {
    const Table t = read_table(path);
    const auto ci = t.column("site_id"), cx = t.column("x"), cy = t.column("y");
    SpatialGrid g;
    for (const auto& r : t.rows) {
        g.ids.push_back(parse_long(r[ci], path));
        g.sites.push_back({parse_double(r[cx], path), parse_double(r[cy], path)});
    }
    std::ifstream meta(path + ".json");
    if (meta) {
        const json j = read_json(path + ".json");
        g.regular = RegularGridInfo{j.at("rows").get<int>(), j.at("cols").get<int>(), j.at("side").get<double>()};
    }
    g.validate();
    return g;
}

void write_condition(const std::string& path, const std::vector<double>& c) {
    Table t;
    t.header = {"time_index", "c"};
    for (std::size_t i = 0; i < c.size(); ++i) t.rows.push_back({std::to_string(i), fmt(c[i])});
    write_table(path, t);
}

std::vector<double> read_condition(const std::string& path) {
    const Table t = read_table(path);
    const auto cc = t.column("c");
    std::vector<double> c;
    for (const auto& r : t.rows) c.push_back(parse_double(r[cc], path));
    return c;
}

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    const std::size_t rest = bytes.size() - i;
    if (rest == 1) {
        const std::uint32_t v = bytes[i] << 16;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += "==";
    } else if (rest == 2) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    std::array<int, 256> rev{};
    rev.fill(-1);
    for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(kAlphabet[i])] = i;
    if (text.size() % 4 != 0) throw IoError("base64 payload length is not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        std::uint32_t v = 0;
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char ch = text[i + k];
            int d = 0;
            if (ch == '=') {
                if (i + 4 != text.size() || k < 2) throw IoError("misplaced base64 padding");
                ++pad;
            } else {
                if (pad) throw IoError("misplaced base64 padding");
                d = rev[static_cast<unsigned char>(ch)];
                if (d < 0) throw IoError("invalid base64 character");
            }
            v = (v << 6) | static_cast<std::uint32_t>(d);
        }
        out.push_back(static_cast<std::uint8_t>(v >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
    }
    return out;
}

std::string encode_doubles(std::span<const double> v) {
    std::vector<std::uint8_t> bytes(v.size() * 8);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(v[i]);
        for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
    return base64_encode(bytes);
}

std::vector<double> decode_doubles(const std::string& text) {
    const auto bytes = base64_decode(text);
    if (bytes.size() % 8 != 0) throw IoError("double payload is not a multiple of 8 bytes");
    std::vector<double> v(bytes.size() / 8);
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        v[i] = std::bit_cast<double>(bits);
    }
    return v;
}

json read_json(const std::string& path) {
    auto in = open_in(path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError("'" + path + "' is not valid JSON: " + e.what());
    }
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_text(const std::string& path, const std::string& text) {
    auto out = open_out(path, std::ios::binary);
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t hash_file(const std::string& path) {
    auto in = open_in(path, std::ios::binary);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes);
}

void write_manifest(const std::string& path, const std::string& command, std::uint64_t seed,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                    const json& extra) {
    auto hex = [](std::uint64_t h) {
        std::array<char, 17> buf{};
        std::snprintf(buf.data(), buf.size(), "%016llx", static_cast<unsigned long long>(h));
        return std::string(buf.data());
    };
    json j;
    j["command"] = command;
    j["version"] = kVersion;
    j["seed"] = seed;
    j["inputs"] = json::object();
    for (const auto& p : inputs) j["inputs"][p] = hex(hash_file(p));
    j["outputs"] = json::object();
    const auto base = std::filesystem::absolute(std::filesystem::path(path)).parent_path();
    for (const auto& p : outputs) {
        const auto rel = std::filesystem::absolute(p).lexically_relative(base).generic_string();
        j["outputs"][rel.empty() ? p : rel] = hex(hash_file(p));
    }
    if (!extra.empty()) j["extra"] = extra;
    write_json(path, j);
}

}  // namespace cxvae::io
