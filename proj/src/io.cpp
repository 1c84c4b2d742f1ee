#include "blim/io.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "blim/sde.hpp"

namespace blim::io {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  text = trim(text);
  if (text == "nan" || text == "NaN") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double value = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw Error(ErrorKind::io, "cannot parse number '" + std::string(text) + "'");
  }
  return value;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path + "' for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& path, const std::string& content) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw Error(ErrorKind::io, "write failed for '" + path + "'");
}

CsvTable read_csv(const std::string& path) {
  const std::string text = read_text(path);
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_commas(line);
    if (first) {
      for (auto c : cells) table.header.emplace_back(c);
      first = false;
      continue;
    }
    if (cells.size() != table.header.size()) {
      std::ostringstream os;
      os << path << ":" << line_no << ": expected " << table.header.size()
         << " columns, found " << cells.size();
      throw Error(ErrorKind::io, os.str());
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (auto c : cells) row.push_back(parse_double(c));
    table.rows.push_back(std::move(row));
  }
  if (first) throw Error(ErrorKind::io, path + ": empty CSV");
  return table;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Matrix& rows) {
  std::string out;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j) out += ',';
    out += header[j];
  }
  out += '\n';
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      if (j) out += ',';
      out += format_double(rows(i, j));
    }
    out += '\n';
  }
  write_text(path, out);
}

Json read_json(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::io, path + ": invalid JSON: " + e.what());
  }
}

void write_json(const std::string& path, const Json& doc) {
  write_text(path, doc.dump(2) + "\n");
}

Json matrix_to_json(const Matrix& a) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw Error(ErrorKind::io, "matrix: expected nested array");
  if (j.front().is_number()) {
    // Scalar shorthand for a 1x1 matrix is accepted only as [x].
    Matrix a(1, j.size());
    for (std::size_t c = 0; c < j.size(); ++c) a(0, c) = j[c].get<double>();
    return a;
  }
  const auto rows = j.size();
  const auto cols = j.front().size();
  Matrix a(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) {
      throw Error(ErrorKind::io, "matrix: ragged rows");
    }
    for (std::size_t c = 0; c < cols; ++c) a(r, c) = j[r][c].get<double>();
  }
  return a;
}

Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw Error(ErrorKind::io, "vector: expected array");
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

void ensure_directory(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create directory '" + path + "': " + ec.message());
}

}  // namespace blim::io

namespace blim {

void write_series_csv(const TimeSeries& series, const std::string& path) {
  std::vector<std::string> header{"t"};
  for (Eigen::Index j = 0; j < series.dim(); ++j) header.push_back("x" + std::to_string(j));
  Matrix rows(series.length(), series.dim() + 1);
  for (Eigen::Index i = 0; i < series.length(); ++i) {
    rows(i, 0) = static_cast<double>(i) * series.dt;
  }
  rows.rightCols(series.dim()) = series.values;
  io::write_csv(path, header, rows);
}

TimeSeries read_series_csv(const std::string& path) {
  const auto table = io::read_csv(path);
  if (table.header.size() < 2 || table.header.front() != "t") {
    throw Error(ErrorKind::io, path + ": expected header 't,x0,...'");
  }
  if (table.rows.size() < 2) throw Error(ErrorKind::io, path + ": need at least two rows");
  TimeSeries out;
  const auto m = static_cast<Eigen::Index>(table.header.size() - 1);
  out.values.resize(static_cast<Eigen::Index>(table.rows.size()), m);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    for (Eigen::Index j = 0; j < m; ++j) out.values(static_cast<Eigen::Index>(i), j) = table.rows[i][j + 1];
  }
  out.dt = table.rows[1][0] - table.rows[0][0];
  out.validate();
  return out;
}

}  // namespace blim
