#include "adlgnn/graph_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "adlgnn/error.hpp"

namespace adlgnn::structure {

namespace {

std::string format9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    while (used < s.size() && (s[used] == ' ' || s[used] == '\r')) ++used;
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + s + "'", line);
  }
}

}  // namespace

void write_adjacency_csv(const std::filesystem::path& path, const Matrix& weights) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < weights.cols(); ++j) out << (j ? "," : "") << format9(weights(i, j));
    out << '\n';
  }
}

Matrix read_adjacency_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) row.push_back(parse_double(field, line_no));
    if (!rows.empty() && row.size() != rows.front().size()) throw ParseError("ragged adjacency row", line_no);
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.size() != rows.front().size()) {
    throw DimensionError(path.string() + ": adjacency matrix must be square and non-empty");
  }
  const auto N = static_cast<Eigen::Index>(rows.size());
  Matrix m(N, N);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j) m(i, j) = rows[i][j];
  return m;
}

void write_edge_list(const std::filesystem::path& path, const Matrix& weights) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (Eigen::Index i = 0; i < weights.rows(); ++i)
    for (Eigen::Index j = 0; j < weights.cols(); ++j)
      if (weights(i, j) != 0.0) out << i << '\t' << j << '\t' << format9(weights(i, j)) << '\n';
}

Matrix read_edge_list(const std::filesystem::path& path, std::size_t nodes) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  const auto N = static_cast<Eigen::Index>(nodes);
  Matrix m = Matrix::Zero(N, N);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r" || line.front() == '#') continue;
    std::stringstream ss(line);
    std::string src, dst, weight;
    if (!std::getline(ss, src, '\t') || !std::getline(ss, dst, '\t') || !std::getline(ss, weight)) {
      throw ParseError("expected src<TAB>dst<TAB>weight", line_no);
    }
    const double s = parse_double(src, line_no);
    const double d = parse_double(dst, line_no);
    if (s < 0 || d < 0 || s >= static_cast<double>(nodes) || d >= static_cast<double>(nodes)) {
      throw ParseError("node id out of range", line_no);
    }
    m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(d)) = parse_double(weight, line_no);
  }
  return m;
}

std::string report_json(const StaticGraphReport& report, int indent) {
  nlohmann::json doc;
  doc["rows_used"] = report.rows_used;
  auto& methods = doc["methods"] = nlohmann::json::array();
  for (const auto& m : report.methods) {
    methods.push_back({{"method", std::string(method_name(m.method))},
                       {"seconds", m.seconds},
                       {"ok", m.ok},
                       {"converged", m.converged},
                       {"message", m.message}});
  }
  doc["warnings"] = report.warnings;
  const auto& c = report.config;
  std::vector<std::string> names;
  for (auto m : c.methods) names.emplace_back(method_name(m));
  doc["config"] = {{"methods", names},
                   {"S", c.S},
                   {"granger_lag", c.granger_lag},
                   {"mi_bins", c.mi_bins},
                   {"te_lag", c.te_lag},
                   {"glasso_lambda", c.glasso_lambda},
                   {"glasso_max_sweeps", c.glasso_max_sweeps},
                   {"glasso_tolerance", c.glasso_tolerance},
                   {"mle_l2", c.mle_l2},
                   {"subset_fraction", c.subset_fraction}};
  return doc.dump(indent);
}

}  // namespace adlgnn::structure
