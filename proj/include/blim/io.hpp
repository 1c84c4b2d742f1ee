#pragma once

// Text serialization helpers shared by the modules' file formats.

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "blim/linalg.hpp"

namespace blim::io {

using Json = nlohmann::json;

/// Shortest-exact formatting at 17 significant digits.
std::string format_double(double x);
double parse_double(std::string_view text);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Matrix& rows);
void write_text(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

Json read_json(const std::string& path);
void write_json(const std::string& path, const Json& doc);

Json matrix_to_json(const Matrix& a);
Matrix matrix_from_json(const Json& j);
Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j);

void ensure_directory(const std::string& path);

}  // namespace blim::io
