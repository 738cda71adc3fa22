#pragma once

#include <Eigen/Dense>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mft/errors.hpp"

namespace mft {

// Fixed-format double printing so repeated runs produce byte-identical files.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_csv(const std::filesystem::path& path,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
    std::ofstream f(path);
    if (!f) throw format_error("csv: cannot open for writing: " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i)
        f << (i ? "," : "") << header[i];
    f << "\n";
    for (const auto& row : rows) {
        if (row.size() != header.size())
            throw format_error("csv: row width mismatch writing " + path.string());
        for (std::size_t i = 0; i < row.size(); ++i)
            f << (i ? "," : "") << format_double(row[i]);
        f << "\n";
    }
    if (!f) throw format_error("csv: write failed: " + path.string());
}

struct CsvTable {
    std::vector<std::string> header;
    Eigen::MatrixXd values;
};

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw format_error("csv: cannot open: " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(f, line)) throw format_error("csv: empty file: " + path.string());
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) t.header.push_back(cell);
    }
    std::vector<std::vector<double>> rows;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw format_error("csv: bad number '" + cell + "' at " + path.string() + ":" +
                                   std::to_string(lineno));
            }
        }
        if (row.size() != t.header.size())
            throw format_error("csv: ragged row at " + path.string() + ":" +
                               std::to_string(lineno));
        rows.push_back(std::move(row));
    }
    t.values.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(t.header.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < t.header.size(); ++j)
            t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return t;
}

inline void write_matrix_csv(const std::filesystem::path& path,
                             const std::vector<std::string>& header,
                             const Eigen::MatrixXd& m) {
    if (static_cast<std::size_t>(m.cols()) != header.size())
        throw format_error("csv: header width mismatch writing " + path.string());
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        rows[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
    }
    write_csv(path, header, rows);
}

// design CSV: columns x1..xp
inline void write_design_csv(const std::filesystem::path& path, const Eigen::MatrixXd& X) {
    std::vector<std::string> header;
    for (Eigen::Index d = 0; d < X.cols(); ++d) header.push_back("x" + std::to_string(d + 1));
    write_matrix_csv(path, header, X);
}

inline Eigen::MatrixXd read_design_csv(const std::filesystem::path& path) {
    return read_csv(path).values;
}

// mesh CSV: index,x,y
inline void write_mesh_csv(const std::filesystem::path& path, const Eigen::MatrixXd& pts) {
    std::vector<std::string> header{"index"};
    for (Eigen::Index d = 0; d < pts.cols(); ++d)
        header.push_back(d == 0 ? "x" : (d == 1 ? "y" : "z"));
    Eigen::MatrixXd m(pts.rows(), pts.cols() + 1);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) m(i, 0) = static_cast<double>(i);
    m.rightCols(pts.cols()) = pts;
    write_matrix_csv(path, header, m);
}

inline Eigen::MatrixXd read_mesh_csv(const std::filesystem::path& path) {
    CsvTable t = read_csv(path);
    if (t.header.empty() || t.header[0] != "index")
        throw format_error("mesh csv: expected leading index column in " + path.string());
    return t.values.rightCols(t.values.cols() - 1);
}

} // namespace mft
