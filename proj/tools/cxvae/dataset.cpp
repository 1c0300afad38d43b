#include "dataset.hpp"

#include <filesystem>

#include "cxvae/error.hpp"

namespace cxvae::cli {

namespace fs = std::filesystem;

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

bool file_exists(const std::string& path) { return fs::is_regular_file(path); }

void require_file(const std::string& path) {
    if (!file_exists(path)) throw IoError("cannot open '" + path + "': no such file");
}

Dataset load_dataset(const std::string& dir) {
    Dataset d;
    const auto fields = join(dir, "fields.csv"), sites = join(dir, "sites.csv"), cond = join(dir, "condition.csv");
    for (const auto& p : {fields, sites, cond}) require_file(p);
    d.fields = io::read_fields(fields);
    d.grid = io::read_sites(sites);
    d.c = io::read_condition(cond);
    d.files = {fields, sites, cond};
    if (d.fields.ids != d.grid.ids) throw IoError(fields + ": site columns do not match " + sites);
    if (d.c.size() != static_cast<std::size_t>(d.fields.values.rows()))
        throw IoError(cond + ": " + std::to_string(d.c.size()) + " condition values for " +
                      std::to_string(d.fields.values.rows()) + " times");
    if ((d.fields.values.array() <= 0.0).any() || !d.fields.values.allFinite())
        throw IoError(fields + ": observations must be finite and strictly positive");
    const auto knots = join(dir, "knots.csv");
    if (file_exists(knots)) {
        d.knots = read_knots(knots);
        d.files.push_back(knots);
        const auto basis = join(dir, "basis.csv");
        if (file_exists(basis)) {
            d.basis = read_basis(basis, d.grid.size());
            if (d.basis->cols() != static_cast<Eigen::Index>(d.knots->size()))
                throw IoError(basis + ": column count does not match " + knots);
            d.files.push_back(basis);
        }
    }
    return d;
}

void write_knots(const std::string& path, const KnotGrid& k) {
    io::Table t;
    t.header = {"knot_id", "x", "y"};
    for (std::size_t i = 0; i < k.size(); ++i) t.rows.push_back({std::to_string(i), io::fmt(k.knots[i].x), io::fmt(k.knots[i].y)});
    io::write_table(path, t);
    io::write_json(path + ".json", io::json{{"spacing", k.spacing}});
}

KnotGrid read_knots(const std::string& path) {
    const auto t = io::read_table(path);
    const auto cx = t.column("x"), cy = t.column("y");
    KnotGrid k;
    for (const auto& r : t.rows) k.knots.push_back({io::parse_double(r[cx], path), io::parse_double(r[cy], path)});
    if (file_exists(path + ".json")) {
        const auto j = io::read_json(path + ".json");
        if (!j.contains("spacing") || !j.at("spacing").is_number()) throw IoError(path + ".json: missing numeric 'spacing'");
        k.spacing = j.at("spacing").get<double>();
    }
    k.validate();
    return k;
}

void write_basis(const std::string& path, const BasisMatrix& w, const std::vector<long>& site_ids) {
    io::Table t;
    t.header = {"site_id"};
    for (Eigen::Index k = 0; k < w.cols(); ++k) t.header.push_back("knot_" + std::to_string(k));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        std::vector<std::string> row{std::to_string(site_ids[static_cast<std::size_t>(i)])};
        for (Eigen::Index k = 0; k < w.cols(); ++k) row.push_back(io::fmt(w(i, k)));
        t.rows.push_back(std::move(row));
    }
    io::write_table(path, t);
}

BasisMatrix read_basis(const std::string& path, std::size_t n_sites) {
    const auto t = io::read_table(path);
    if (t.rows.size() != n_sites) throw IoError(path + ": expected " + std::to_string(n_sites) + " rows");
    BasisMatrix w(static_cast<Eigen::Index>(n_sites), static_cast<Eigen::Index>(t.header.size()) - 1);
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        for (std::size_t k = 1; k < t.header.size(); ++k)
            w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k - 1)) = io::parse_double(t.rows[i][k], path);
    return w;
}

void write_matrix(const std::string& path, const Matrix& m, const std::string& prefix) {
    std::vector<long> ids(static_cast<std::size_t>(m.cols()));
    for (std::size_t j = 0; j < ids.size(); ++j) ids[j] = static_cast<long>(j);
    io::write_fields(path, m, ids, prefix);
}

}  // namespace cxvae::cli
