#include "gpex/reports.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gpex/errors.hpp"

namespace gpex {

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    throw FormatError("failed writing " + path.string());
  }
}

void write_json(const std::filesystem::path& path, nlohmann::json doc) {
  if (!doc.contains("schema")) {
    doc["schema"] = kReportSchema;
  }
  write_text(path, doc.dump(2) + "\n");
}

PgmScale write_pgm(const std::filesystem::path& path, const Matrix& map) {
  if (map.empty()) {
    throw ShapeError("write_pgm: empty map");
  }
  const auto values = map.data();
  PgmScale s{*std::min_element(values.begin(), values.end()),
             *std::max_element(values.begin(), values.end())};
  const double range = s.max - s.min;
  std::string bytes = "P5\n" + std::to_string(map.cols()) + " " + std::to_string(map.rows()) +
                      "\n255\n";
  for (double v : values) {
    const double level = range > 0.0 ? std::round(255.0 * (v - s.min) / range) : 0.0;
    bytes.push_back(static_cast<char>(static_cast<unsigned char>(level)));
  }
  write_text(path, bytes);
  return s;
}

}  // namespace gpex
