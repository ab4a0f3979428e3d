#pragma once

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pgmm/errors.hpp"

namespace pgmm {

/// Immutable T x d observation table. One row per Z_t, columns addressed by name.
class Dataset {
 public:
  Dataset(Eigen::MatrixXd rows, std::vector<std::string> column_names)
      : rows_(std::move(rows)), names_(std::move(column_names)) {
    if (rows_.rows() < 2) throw DataError("Dataset: need at least 2 rows");
    if (rows_.cols() < 1) throw DataError("Dataset: need at least 1 column");
    if (static_cast<Eigen::Index>(names_.size()) != rows_.cols())
      throw DataError("Dataset: column_names length does not match column count");
    std::set<std::string> uniq(names_.begin(), names_.end());
    if (uniq.size() != names_.size()) throw DataError("Dataset: duplicate column names");
    if (!rows_.allFinite()) throw DataError("Dataset: non-finite entry");
  }

  Eigen::Index T() const { return rows_.rows(); }
  Eigen::Index d() const { return rows_.cols(); }
  const Eigen::MatrixXd& rows() const { return rows_; }
  const std::vector<std::string>& column_names() const { return names_; }

  Eigen::Index column_index(const std::string& name) const {
    for (std::size_t j = 0; j < names_.size(); ++j)
      if (names_[j] == name) return static_cast<Eigen::Index>(j);
    throw DataError("Dataset: no column named '" + name + "'");
  }

  Eigen::VectorXd column(const std::string& name) const { return rows_.col(column_index(name)); }

  static Dataset from_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> names;
    {
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) names.push_back(cell);
    }
    std::vector<double> values;
    std::size_t nrows = 0;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      std::size_t ncell = 0;
      while (std::getline(ss, cell, ',')) {
        try {
          values.push_back(std::stod(cell));
        } catch (const std::exception&) {
          throw DataError("CSV parse error at row " + std::to_string(nrows + 2) + " of " + path +
                          ": '" + cell + "'");
        }
        ++ncell;
      }
      if (ncell != names.size())
        throw DataError("CSV row " + std::to_string(nrows + 2) + " has " + std::to_string(ncell) +
                        " cells, expected " + std::to_string(names.size()));
      ++nrows;
    }
    Eigen::MatrixXd m(nrows, names.size());
    for (std::size_t i = 0; i < nrows; ++i)
      for (std::size_t j = 0; j < names.size(); ++j) m(i, j) = values[i * names.size() + j];
    return Dataset(std::move(m), std::move(names));
  }

 private:
  Eigen::MatrixXd rows_;
  std::vector<std::string> names_;
};

}  // namespace pgmm
