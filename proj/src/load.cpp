#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "stdmarg/cli_io.hpp"

namespace stdmarg {

namespace {

using Row = std::vector<std::string>;

// Quoted fields may contain commas, doubled quotes and line breaks.
std::vector<Row> parse_csv(std::istream& in) {
  std::vector<Row> rows;
  Row row;
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  auto end_row = [&] {
    row.push_back(std::move(field));
    field.clear();
    // a line holding nothing at all is skipped
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
    any = false;
  };
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      end_row();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw Error(ErrorKind::InvalidArgument, "unterminated quoted field in CSV input");
  if (any) end_row();
  return rows;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

bool is_missing(const std::string& cell) { return cell.empty() || cell == "NA"; }

std::optional<double> to_number(const std::string& cell) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

class Table {
 public:
  explicit Table(std::vector<Row> rows) : rows_(std::move(rows)) {
    if (rows_.empty()) throw Error(ErrorKind::InvalidArgument, "CSV input has no header row");
    for (std::size_t j = 0; j < rows_[0].size(); ++j) {
      const std::string name = trim(rows_[0][j]);
      if (!columns_.emplace(name, j).second) {
        throw Error(ErrorKind::InvalidArgument, "duplicate column '" + name + "'");
      }
    }
    for (std::size_t i = 1; i < rows_.size(); ++i) {
      if (rows_[i].size() != rows_[0].size()) {
        throw Error(ErrorKind::DimensionMismatch, "row " + std::to_string(i) + " has " +
                                                      std::to_string(rows_[i].size()) + " fields, header has " +
                                                      std::to_string(rows_[0].size()));
      }
    }
  }

  std::size_t rows() const { return rows_.size() - 1; }

  std::size_t column(const std::string& name) const {
    const auto it = columns_.find(name);
    if (it == columns_.end()) throw Error(ErrorKind::MissingColumn, "column '" + name + "' not found");
    return it->second;
  }

  // Data rows are numbered from 1, matching a spreadsheet view without the header.
  std::string cell(std::size_t row, std::size_t col, const std::string& name) const {
    std::string value = trim(rows_[row + 1][col]);
    if (is_missing(value)) {
      throw Error(ErrorKind::MissingValue,
                  "row " + std::to_string(row + 1) + ", column '" + name + "': missing value");
    }
    return value;
  }

  double number(std::size_t row, std::size_t col, const std::string& name) const {
    const std::string value = cell(row, col, name);
    const auto v = to_number(value);
    if (!v) {
      throw Error(ErrorKind::NonNumericValue, "row " + std::to_string(row + 1) + ", column '" + name +
                                                  "': '" + value + "' is not a number");
    }
    return *v;
  }

 private:
  std::vector<Row> rows_;
  std::map<std::string, std::size_t> columns_;
};

std::vector<std::string> order_levels(std::vector<std::string> levels) {
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  const bool numeric = std::all_of(levels.begin(), levels.end(), [](const std::string& s) { return to_number(s).has_value(); });
  if (numeric) {
    std::stable_sort(levels.begin(), levels.end(),
                     [](const std::string& a, const std::string& b) { return *to_number(a) < *to_number(b); });
  }
  return levels;
}

}  // namespace

LoadedDataset read_dataset(std::istream& in, const LoadSchema& schema) {
  const Table table(parse_csv(in));
  const std::size_t n = table.rows();
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "CSV input has no data rows");

  for (const auto& name : schema.categorical) {
    if (std::find(schema.covariates.begin(), schema.covariates.end(), name) == schema.covariates.end()) {
      throw Error(ErrorKind::InvalidConfig, "categorical column '" + name + "' is not listed as a covariate");
    }
  }

  LoadedDataset out;
  const std::size_t y_col = table.column(schema.outcome);
  const std::size_t z_col = table.column(schema.treatment);
  std::vector<std::size_t> x_cols;
  for (const auto& name : schema.covariates) x_cols.push_back(table.column(name));
  const bool has_t = schema.followup.has_value();
  const std::size_t t_col = has_t ? table.column(*schema.followup) : 0;

  // treatment coding
  std::vector<std::string> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = table.cell(i, z_col, schema.treatment);
  if (schema.treatment_levels.empty()) {
    out.arm_labels = order_levels(labels);
  } else {
    out.arm_labels = schema.treatment_levels;
    for (const auto& level : out.arm_labels) {
      if (std::find(labels.begin(), labels.end(), level) == labels.end()) {
        throw Error(ErrorKind::EmptyArm, "treatment level '" + level + "' has no rows");
      }
    }
  }
  std::map<std::string, int> arm_index;
  for (std::size_t a = 0; a < out.arm_labels.size(); ++a) {
    if (!arm_index.emplace(out.arm_labels[a], static_cast<int>(a)).second) {
      throw Error(ErrorKind::InvalidConfig, "treatment level '" + out.arm_labels[a] + "' listed twice");
    }
  }
  std::vector<int> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = arm_index.find(labels[i]);
    if (it == arm_index.end()) {
      throw Error(ErrorKind::InvalidConfig, "row " + std::to_string(i + 1) + ": treatment value '" + labels[i] +
                                                "' is not among the configured levels");
    }
    z[i] = it->second;
  }

  // covariates, with categorical columns expanded in place
  std::vector<std::vector<double>> columns;
  for (std::size_t c = 0; c < schema.covariates.size(); ++c) {
    const auto& name = schema.covariates[c];
    const bool categorical =
        std::find(schema.categorical.begin(), schema.categorical.end(), name) != schema.categorical.end();
    if (!categorical) {
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i) values[i] = table.number(i, x_cols[c], name);
      columns.push_back(std::move(values));
      out.covariate_names.push_back(name);
      continue;
    }
    std::vector<std::string> raw(n);
    for (std::size_t i = 0; i < n; ++i) raw[i] = table.cell(i, x_cols[c], name);
    std::vector<std::string> levels = raw;
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    // first level is the reference
    for (std::size_t l = 1; l < levels.size(); ++l) {
      std::vector<double> indicator(n);
      for (std::size_t i = 0; i < n; ++i) indicator[i] = raw[i] == levels[l] ? 1.0 : 0.0;
      columns.push_back(std::move(indicator));
      out.covariate_names.push_back(name + "[" + levels[l] + "]");
    }
  }

  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  Eigen::VectorXd t = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    y[ii] = table.number(i, y_col, schema.outcome);
    for (std::size_t j = 0; j < columns.size(); ++j) x(ii, static_cast<Eigen::Index>(j)) = columns[j][i];
    if (has_t) {
      t[ii] = table.number(i, t_col, *schema.followup);
      if (!(t[ii] > 0.0)) {
        throw Error(ErrorKind::NonPositiveFollowup, "row " + std::to_string(i + 1) + ", column '" +
                                                        *schema.followup + "': follow-up must be > 0");
      }
    }
  }
  out.data = TrialDataset(std::move(y), std::move(x), std::move(z), std::move(t),
                          static_cast<int>(out.arm_labels.size()));
  return out;
}

LoadedDataset load_dataset(const std::string& path, const LoadSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open '" + path + "'");
  return read_dataset(in, schema);
}

}  // namespace stdmarg
