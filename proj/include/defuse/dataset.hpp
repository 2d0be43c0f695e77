#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "defuse/error.hpp"
#include "defuse/graph.hpp"
#include "defuse/io.hpp"

namespace defuse {

/// n x p observation matrix with column labels.
struct Dataset {
  Eigen::MatrixXd values;
  std::vector<std::string> names;
  bool standardized = false;

  Eigen::Index n() const { return values.rows(); }
  Eigen::Index p() const { return values.cols(); }
};

inline Dataset make_dataset(Eigen::MatrixXd values, std::vector<std::string> names = {}) {
  if (names.empty()) names = default_names(static_cast<int>(values.cols()));
  if (static_cast<Eigen::Index>(names.size()) != values.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "name count differs from column count");
  }
  if (!values.allFinite()) throw Error(ErrorCode::NonFiniteInput, "dataset has non-finite entries");
  return Dataset{std::move(values), std::move(names), false};
}

inline double sample_sd(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double n = static_cast<double>(x.size());
  if (x.size() < 2) return 0.0;
  const double mean = x.mean();
  return std::sqrt((x.array() - mean).square().sum() / (n - 1.0));
}

/// Column-wise (x - mean) / sd with the n-1 divisor.
inline Dataset standardize(const Dataset& data) {
  Dataset out = data;
  for (Eigen::Index c = 0; c < data.p(); ++c) {
    const double sd = sample_sd(data.values.col(c));
    if (!(sd > 0.0)) throw Error(ErrorCode::ZeroVarianceColumn, "column " + data.names[c] + " has zero variance");
    const double mean = data.values.col(c).mean();
    out.values.col(c) = (data.values.col(c).array() - mean) / sd;
  }
  out.standardized = true;
  return out;
}

/// CSV with one header row. Lines starting with '#' are provenance comments.
inline Dataset dataset_from_csv(const std::string& text) {
  auto rows = io::lines(text);
  std::size_t first = 0;
  while (first < rows.size() && (rows[first].starts_with("#") || io::trim(rows[first]).empty())) ++first;
  if (first >= rows.size()) throw Error(ErrorCode::ParseError, "csv has no header row");
  auto names = io::split_csv_line(rows[first]);
  const auto p = static_cast<Eigen::Index>(names.size());
  std::vector<std::vector<double>> parsed;
  for (std::size_t r = first + 1; r < rows.size(); ++r) {
    if (io::trim(rows[r]).empty() || rows[r].starts_with("#")) continue;
    const std::string where = "line " + std::to_string(r + 1);
    auto fields = io::split_csv_line(rows[r]);
    if (static_cast<Eigen::Index>(fields.size()) != p) {
      throw Error(ErrorCode::ParseError, where + ": expected " + std::to_string(p) + " fields, got " +
                                             std::to_string(fields.size()));
    }
    std::vector<double> row;
    row.reserve(p);
    for (const auto& f : fields) row.push_back(io::parse_double(f, where));
    parsed.push_back(std::move(row));
  }
  Eigen::MatrixXd values(static_cast<Eigen::Index>(parsed.size()), p);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index c = 0; c < p; ++c) values(i, c) = parsed[i][c];
  }
  return make_dataset(std::move(values), std::move(names));
}

inline Dataset read_dataset_csv(const std::string& path) { return dataset_from_csv(io::read_file(path)); }

inline std::string dataset_to_csv(const Dataset& data, const std::string& provenance = {}) {
  std::string out;
  if (!provenance.empty()) out += "# " + provenance + "\n";
  for (Eigen::Index c = 0; c < data.p(); ++c) out += (c ? "," : "") + data.names[c];
  out += "\n";
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    for (Eigen::Index c = 0; c < data.p(); ++c) {
      if (c) out += ",";
      out += io::format_double(data.values(i, c));
    }
    out += "\n";
  }
  return out;
}

}  // namespace defuse
