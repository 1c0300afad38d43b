#pragma once

// File formats: wide field CSVs, small tables, base64 payloads, JSON documents, manifests.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cxvae/error.hpp"
#include "cxvae/fieldsim.hpp"

namespace cxvae::io {

using nlohmann::json;

/// 17 significant digits; round-trips every double.
std::string fmt(double v);

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column(const std::string& name) const;
};

Table read_table(const std::string& path);
void write_table(const std::string& path, const Table& t);

double parse_double(const std::string& s, const std::string& context);
long parse_long(const std::string& s, const std::string& context);

/// Wide layout: `time_index,site_<id>,...`, one row per time.
void write_fields(const std::string& path, const Matrix& m, const std::vector<long>& ids,
                  const std::string& prefix = "site_");

struct Fields {
    Matrix values;
    std::vector<long> ids;
};
Fields read_fields(const std::string& path, const std::string& prefix = "site_");

void write_sites(const std::string& path, const SpatialGrid& grid);
SpatialGrid read_sites(const std::string& path);

void write_condition(const std::string& path, const std::vector<double>& c);
std::vector<double> read_condition(const std::string& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);
/// Little-endian IEEE-754 doubles, base64 encoded.
std::string encode_doubles(std::span<const double> v);
std::vector<double> decode_doubles(const std::string& text);

json read_json(const std::string& path);
void write_json(const std::string& path, const json& j);
void write_text(const std::string& path, const std::string& text);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t hash_file(const std::string& path);

/// Writes `manifest.json`-style provenance: command, seed, version, input and output hashes.
/// Output keys are relative to the manifest's directory.
void write_manifest(const std::string& path, const std::string& command, std::uint64_t seed,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                    const json& extra = json::object());

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cxvae::io
