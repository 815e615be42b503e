#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "gcfn/data/dataset.hpp"
#include "gcfn/data/schema.hpp"

namespace gcfn::data {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column position by name; throws ValidationError naming the column when absent.
  std::size_t column(const std::string& name) const;
};

/// RFC 4180-ish reader: quoted fields, doubled quotes, CRLF. Lines starting with
/// `comment_prefix` (when non-empty) are skipped. Cells are returned untrimmed.
CsvTable parse_csv(const std::string& text, char delimiter = ',', const std::string& comment_prefix = "");
CsvTable read_csv(const std::filesystem::path& path, char delimiter = ',', const std::string& comment_prefix = "");
void write_csv(const std::filesystem::path& path, const CsvTable& table);

/// Shortest round-trippable text form of a double ("%.17g").
std::string format_double(double v);
/// Strict numeric parse of a trimmed cell; false on any trailing garbage.
bool parse_double(const std::string& cell, double& out);
std::string trim(const std::string& s);

struct IngestOptions {
  char delimiter = ',';
  std::vector<std::string> missing_tokens = {"", "?", "NA", "N/A"};
  std::string comment_prefix = "|";
  bool log_dropped = true;  // prints a one-line summary on stderr
  // Only covariates and mediators are required; A and Y are read when present, else 0.
  bool features_only = false;
};

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t dropped_missing = 0;
  std::size_t dropped_filter = 0;
  std::size_t rows_kept = 0;
};

/// Loads a CSV under `schema`. Categorical columns are one-hot encoded in schema order,
/// A and Y are mapped to {0,1}; continuous columns stay on the raw scale (identity
/// standardization) until split() fits statistics on the training part.
Dataset ingest_csv(const std::filesystem::path& path, const RoleSchema& schema, const IngestOptions& options = {},
                   IngestReport* report = nullptr);
Dataset ingest_table(const CsvTable& table, const RoleSchema& schema, const IngestOptions& options = {},
                     IngestReport* report = nullptr);

/// Sidecar path used by save_dataset: "<dir>/<stem>.meta.json".
std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);
/// Writes stored (standardized) values with 17 significant digits plus a JSON sidecar
/// holding schema, standardization, provenance and column groups.
void save_dataset(const Dataset& ds, const std::filesystem::path& csv_path);
Dataset load_dataset(const std::filesystem::path& csv_path);

}  // namespace gcfn::data
