#pragma once

// On-disk dataset directory shared by simulate, preprocess, train, emulate and metrics.
//
//   fields.csv      time_index,site_<id>,...   observations (strictly positive)
//   sites.csv       site_id,x,y  (+ sites.csv.json for regular grids)
//   condition.csv   time_index,c
//   knots.csv       knot_id,x,y  (+ knots.csv.json with the lattice spacing)   optional
//   basis.csv       site_id,knot_<k>,...       Wendland weights used to initialize W  optional

#include <optional>
#include <string>
#include <vector>

#include "cxvae/fieldsim.hpp"
#include "cxvae/io.hpp"

namespace cxvae::cli {

struct Dataset {
    io::Fields fields;
    SpatialGrid grid;
    std::vector<double> c;
    std::optional<KnotGrid> knots;
    std::optional<BasisMatrix> basis;
    std::vector<std::string> files;  ///< every file read, for the manifest
};

std::string join(const std::string& dir, const std::string& name);

/// Throws IoError naming the first missing file.
Dataset load_dataset(const std::string& dir);

void write_knots(const std::string& path, const KnotGrid& k);
KnotGrid read_knots(const std::string& path);

void write_basis(const std::string& path, const BasisMatrix& w, const std::vector<long>& site_ids);
BasisMatrix read_basis(const std::string& path, std::size_t n_sites);

/// Row-major time x column matrix with a `time_index` column and `<prefix><j>` headers.
void write_matrix(const std::string& path, const Matrix& m, const std::string& prefix);

bool file_exists(const std::string& path);
void require_file(const std::string& path);

}  // namespace cxvae::cli
