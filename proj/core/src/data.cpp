#include "adlgnn/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <zlib.h>

#include "adlgnn/error.hpp"

namespace adlgnn::data {

TimeSeriesDataset::TimeSeriesDataset(Matrix values, std::vector<std::string> series_names,
                                     std::chrono::seconds sample_period)
    : values_(std::move(values)), names_(std::move(series_names)), period_(sample_period) {
  if (values_.rows() < 2 || values_.cols() < 2) {
    throw DimensionError("dataset needs T >= 2 and N >= 2, got T=" + std::to_string(values_.rows()) +
                         " N=" + std::to_string(values_.cols()));
  }
  if (!values_.allFinite()) throw Error("dataset contains non-finite values");
  if (names_.empty()) {
    for (Eigen::Index i = 0; i < values_.cols(); ++i) names_.push_back("s" + std::to_string(i));
  }
  if (names_.size() != series()) throw DimensionError("series name count differs from column count");
}

TimeSeriesDataset TimeSeriesDataset::rows(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > length()) {
    throw DimensionError("row range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside dataset of length " + std::to_string(length()));
  }
  return TimeSeriesDataset(values_.middleRows(static_cast<Eigen::Index>(begin),
                                              static_cast<Eigen::Index>(end - begin)),
                           names_, period_);
}

namespace {

// Line source over plain or gzip-compressed text.
class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path) : gz_(path.extension() == ".gz") {
    if (gz_) {
      handle_ = gzopen(path.c_str(), "rb");
      if (!handle_) throw Error("cannot open " + path.string());
    } else {
      plain_.open(path);
      if (!plain_) throw Error("cannot open " + path.string());
    }
  }
  ~LineReader() {
    if (handle_) gzclose(handle_);
  }
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;

  bool next(std::string& line) {
    if (!gz_) return static_cast<bool>(std::getline(plain_, line));
    line.clear();
    char buf[8192];
    bool any = false;
    while (gzgets(handle_, buf, sizeof buf)) {
      any = true;
      line += buf;
      if (!line.empty() && line.back() == '\n') {
        line.pop_back();
        return true;
      }
    }
    return any;
  }

 private:
  bool gz_;
  std::ifstream plain_;
  gzFile handle_ = nullptr;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_field(std::string_view field, std::size_t line_no, std::size_t column) {
  field = trim(field);
  if (field == "nan" || field == "NaN" || field == "NA" || field.empty()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size() || !std::isfinite(value)) {
    throw ParseError("field " + std::to_string(column + 1) + " is not numeric: '" + std::string(field) + "'",
                     line_no);
  }
  return value;
}

}  // namespace

TimeSeriesDataset load_dataset(const std::filesystem::path& path, const std::string& format,
                               const LoadOptions& options) {
  if (format != "txt-matrix") throw ConfigError("unknown dataset format '" + format + "'");
  LineReader reader(path);
  std::vector<double> flat;
  std::size_t width = 0;
  std::size_t rows = 0;
  std::size_t line_no = 0;
  std::string line;
  std::vector<std::size_t> blank_lines;
  while (reader.next(line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) {
      blank_lines.push_back(line_no);
      continue;
    }
    if (!blank_lines.empty()) throw ParseError("empty line inside data", blank_lines.front());
    std::size_t fields = 0;
    std::size_t start = 0;
    while (true) {
      const auto comma = view.find(',', start);
      const auto piece = view.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      flat.push_back(parse_field(piece, line_no, fields));
      ++fields;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (rows == 0) {
      width = fields;
    } else if (fields != width) {
      throw ParseError("expected " + std::to_string(width) + " fields, found " + std::to_string(fields), line_no);
    }
    ++rows;
  }
  if (rows == 0) throw ParseError(path.string() + ": no data", 0);
  if (width < 2) throw DimensionError(path.string() + ": need at least 2 series, found " + std::to_string(width));

  Matrix values(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) values(r, c) = flat[r * width + c];

  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
      if (!std::isnan(values(r, c))) continue;
      if (!options.forward_fill) {
        throw ParseError("missing value in series " + std::to_string(c + 1) + " (enable forward fill to impute)",
                         static_cast<std::size_t>(r) + 1);
      }
      if (r == 0) throw ParseError("missing value in the first row cannot be forward filled", 1);
      values(r, c) = values(r - 1, c);
    }
  }
  return TimeSeriesDataset(std::move(values));
}

void save_matrix(const std::filesystem::path& path, const Matrix& values) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  char buf[64];
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, values(r, c));
      if (c) out << ',';
      out.write(buf, end - buf);
    }
    out << '\n';
  }
}

void SplitSpec::validate() const {
  if (!(train_fraction > 0 && valid_fraction > 0 && test_fraction > 0)) {
    throw ConfigError("split fractions must be positive");
  }
  if (std::abs(train_fraction + valid_fraction + test_fraction - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
}

Splits split(const TimeSeriesDataset& ds, const SplitSpec& spec, std::size_t min_length) {
  spec.validate();
  const double T = static_cast<double>(ds.length());
  // The small offset absorbs representation error such as 0.6 * 5 = 2.9999...
  const auto n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * T + 1e-9));
  const auto n_valid = static_cast<std::size_t>(std::floor(spec.valid_fraction * T + 1e-9));
  const std::size_t n_test = ds.length() - n_train - n_valid;
  const std::size_t floor_len = std::max<std::size_t>(min_length, 2);
  if (n_train < floor_len || n_valid < floor_len || n_test < floor_len) {
    throw ConfigError("split lengths (" + std::to_string(n_train) + ", " + std::to_string(n_valid) + ", " +
                      std::to_string(n_test) + ") shorter than required " + std::to_string(floor_len));
  }
  return Splits{ds.rows(0, n_train), ds.rows(n_train, n_train + n_valid), ds.rows(n_train + n_valid, ds.length())};
}

Scaler::Scaler(Vector per_series_scale) : scale_(std::move(per_series_scale)) {
  if ((scale_.array() <= 0.0).any()) throw Error("scaler entries must be positive");
}

Scaler Scaler::fit(const TimeSeriesDataset& train) {
  Vector s = train.values().cwiseAbs().colwise().maxCoeff().transpose();
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) == 0.0) s(i) = 1.0;
  return Scaler(std::move(s));
}

Matrix Scaler::apply(const Matrix& values) const {
  if (values.cols() != scale_.size()) throw DimensionError("scaler fitted on a different number of series");
  return values.array().rowwise() / scale_.transpose().array();
}

Matrix Scaler::invert(const Matrix& values) const {
  if (values.cols() != scale_.size()) throw DimensionError("scaler fitted on a different number of series");
  return values.array().rowwise() * scale_.transpose().array();
}

TimeSeriesDataset Scaler::apply(const TimeSeriesDataset& ds) const {
  return TimeSeriesDataset(apply(ds.values()), ds.series_names(), ds.sample_period());
}

WindowSet::WindowSet(const TimeSeriesDataset& ds, std::size_t window, std::size_t horizon)
    : values_(ds.values()), window_(window), horizon_(horizon) {
  if (window == 0 || horizon == 0) throw ConfigError("window and horizon must be positive");
  if (ds.length() < window + horizon) {
    throw ConfigError("series of length " + std::to_string(ds.length()) + " has no sample for window " +
                      std::to_string(window) + " and horizon " + std::to_string(horizon));
  }
  count_ = ds.length() - window - horizon + 1;
}

WindowSample WindowSet::operator[](std::size_t j) const {
  if (j >= count_) throw DimensionError("window index out of range");
  WindowSample s;
  s.input = values_.middleRows(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(window_)).transpose();
  s.t = j + window_ - 1;
  s.horizon = horizon_;
  s.target = values_.row(static_cast<Eigen::Index>(s.t + horizon_)).transpose();
  return s;
}

void WindowSet::gather(const std::vector<std::size_t>& indices, std::vector<double>& inputs,
                       std::vector<double>& targets) const {
  const std::size_t N = series();
  inputs.resize(indices.size() * N * window_);
  targets.resize(indices.size() * N);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t j = indices[b];
    if (j >= count_) throw DimensionError("window index out of range");
    for (std::size_t n = 0; n < N; ++n) {
      double* dst = inputs.data() + (b * N + n) * window_;
      for (std::size_t k = 0; k < window_; ++k) dst[k] = values_(static_cast<Eigen::Index>(j + k), n);
      targets[b * N + n] = values_(static_cast<Eigen::Index>(j + window_ - 1 + horizon_), n);
    }
  }
}

std::vector<WindowSample> make_windows(const TimeSeriesDataset& ds, std::size_t window, std::size_t horizon) {
  WindowSet set(ds, window, horizon);
  std::vector<WindowSample> out;
  out.reserve(set.size());
  for (std::size_t j = 0; j < set.size(); ++j) out.push_back(set[j]);
  return out;
}

}  // namespace adlgnn::data
