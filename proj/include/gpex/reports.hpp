#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "gpex/numkit.hpp"

namespace gpex {

inline constexpr int kReportSchema = 1;

void write_text(const std::filesystem::path& path, const std::string& text);
/// Pretty-printed with a trailing newline; adds "schema" when absent.
void write_json(const std::filesystem::path& path, nlohmann::json doc);

struct PgmScale {
  double min = 0.0;
  double max = 0.0;
};

/// Binary P5 image, min-max scaled to 0..255. A constant map is written as 0.
PgmScale write_pgm(const std::filesystem::path& path, const Matrix& map);

}  // namespace gpex
