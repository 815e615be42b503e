#include "gcfn/data/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "gcfn/errors.hpp"
#include "gcfn/nn/checkpoint.hpp"

namespace gcfn::data {

using nlohmann::json;

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ValidationError("csv: missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& cell, double& out) {
  const std::string t = trim(cell);
  if (t.empty()) return false;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), out);
  return ec == std::errc() && ptr == t.data() + t.size();
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvTable parse_csv(const std::string& text, char delimiter, const std::string& comment_prefix) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> rec;
  std::string cell;
  bool in_quotes = false;
  bool at_line_start = true;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto end_record = [&] {
    rec.push_back(std::move(cell));
    cell.clear();
    const bool blank = rec.size() == 1 && trim(rec[0]).empty();
    if (!blank) records.push_back(std::move(rec));
    rec.clear();
    at_line_start = true;
  };
  while (i < n) {
    if (at_line_start && !comment_prefix.empty() && text.compare(i, comment_prefix.size(), comment_prefix) == 0) {
      while (i < n && text[i] != '\n') ++i;
      ++i;
      continue;
    }
    at_line_start = false;
    const char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < n && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cell += ch;
      }
    } else if (ch == '"') {
      in_quotes = true;
    } else if (ch == delimiter) {
      rec.push_back(std::move(cell));
      cell.clear();
    } else if (ch == '\n') {
      end_record();
    } else if (ch != '\r') {
      cell += ch;
    }
    ++i;
  }
  if (in_quotes) throw ValidationError("csv: unterminated quoted field");
  if (!cell.empty() || !rec.empty()) end_record();

  CsvTable t;
  if (records.empty()) return t;
  t.header = std::move(records.front());
  for (auto& h : t.header) h = trim(h);
  t.rows.assign(std::make_move_iterator(records.begin() + 1), std::make_move_iterator(records.end()));
  return t;
}

CsvTable read_csv(const std::filesystem::path& path, char delimiter, const std::string& comment_prefix) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), delimiter, comment_prefix);
}

namespace {

std::string quote_cell(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out << ',';
      out << quote_cell(cells[c]);
    }
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

namespace {

int map_binary(const std::string& col, const std::string& value, const std::map<std::string, int>& mapping) {
  if (!mapping.empty()) {
    if (auto it = mapping.find(value); it != mapping.end()) return it->second;
    if (auto it = mapping.find("*"); it != mapping.end()) return it->second;
    throw ValidationError("column '" + col + "': unmapped value '" + value + "'");
  }
  double v = 0.0;
  if (parse_double(value, v) && (v == 0.0 || v == 1.0)) return static_cast<int>(v);
  throw ValidationError("column '" + col + "': value '" + value + "' is not binary 0/1");
}

bool passes(const ColumnFilter& f, const std::string& value) {
  if (std::find(f.exclude.begin(), f.exclude.end(), value) != f.exclude.end()) return false;
  if (!f.min && !f.max) return true;
  double v = 0.0;
  if (!parse_double(value, v)) return false;
  if (f.min && v < *f.min) return false;
  if (f.max && v > *f.max) return false;
  return true;
}

void encode_block(const ColumnBlock& b, const std::string& value, Matrix& out, std::size_t row) {
  if (b.kind == BlockKind::kCategorical) {
    const auto it = std::find(b.categories.begin(), b.categories.end(), value);
    if (it == b.categories.end()) {
      throw ValidationError("column '" + b.name + "': unmapped category '" + value + "'");
    }
    out(row, b.offset + static_cast<std::size_t>(it - b.categories.begin())) = 1.0;
  } else {
    double v = 0.0;
    if (!parse_double(value, v)) throw ValidationError("column '" + b.name + "': non-numeric value '" + value + "'");
    out(row, b.offset) = v;
  }
}

}  // namespace

Dataset ingest_table(const CsvTable& input, const RoleSchema& schema, const IngestOptions& options,
                     IngestReport* report) {
  schema.validate();
  CsvTable table_with_names;
  const CsvTable* tp = &input;
  if (!schema.has_header) {
    // The first parsed line is data; use the declared names instead.
    table_with_names.header = schema.column_names;
    table_with_names.rows.reserve(input.rows.size() + 1);
    if (!input.header.empty()) table_with_names.rows.push_back(input.header);
    table_with_names.rows.insert(table_with_names.rows.end(), input.rows.begin(), input.rows.end());
    tp = &table_with_names;
  }
  const CsvTable& table = *tp;

  Dataset ds;
  ds.schema = schema;
  ds.covariate_blocks = encode_layout(schema, schema.covariate_cols);
  ds.mediator_blocks = encode_layout(schema, schema.mediator_cols);

  auto has = [&](const std::string& c) {
    return std::find(table.header.begin(), table.header.end(), c) != table.header.end();
  };
  const bool read_a = !options.features_only || has(schema.sensitive_col);
  const bool read_y = !options.features_only || has(schema.target_col);
  std::vector<std::string> required = schema.covariate_cols;
  if (read_a) required.push_back(schema.sensitive_col);
  required.insert(required.end(), schema.mediator_cols.begin(), schema.mediator_cols.end());
  if (read_y) required.push_back(schema.target_col);
  if (!options.features_only) {
    required.insert(required.end(), schema.auxiliary_cols.begin(), schema.auxiliary_cols.end());
  }
  std::vector<std::size_t> req_idx;
  for (const auto& c : required) req_idx.push_back(table.column(c));
  std::vector<ColumnFilter> filters;
  std::vector<std::size_t> filter_idx;
  for (const auto& f : schema.filters) {
    if (options.features_only && !has(f.column)) continue;
    filters.push_back(f);
    filter_idx.push_back(table.column(f.column));
  }

  auto is_missing = [&](const std::string& v) {
    return std::find(options.missing_tokens.begin(), options.missing_tokens.end(), v) != options.missing_tokens.end();
  };

  IngestReport rep;
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    ++rep.rows_read;
    if (row.size() != table.header.size()) {
      throw ValidationError("csv: row " + std::to_string(r + 1) + " has " + std::to_string(row.size()) +
                            " fields, header has " + std::to_string(table.header.size()));
    }
    bool ok = true;
    for (std::size_t k = 0; k < filters.size() && ok; ++k) ok = passes(filters[k], trim(row[filter_idx[k]]));
    if (!ok) {
      ++rep.dropped_filter;
      continue;
    }
    const bool missing = std::any_of(req_idx.begin(), req_idx.end(), [&](std::size_t c) { return is_missing(trim(row[c])); });
    if (missing) {
      ++rep.dropped_missing;
      continue;
    }
    keep.push_back(r);
  }
  rep.rows_kept = keep.size();
  if (keep.empty()) throw ValidationError("csv: no rows left after filtering and missing-value removal");

  const std::size_t n = keep.size();
  ds.x = Matrix(n, layout_width(ds.covariate_blocks));
  ds.m = Matrix(n, layout_width(ds.mediator_blocks));
  ds.a.resize(n);
  ds.y.resize(n);
  ds.row_ids = keep;
  const std::size_t a_idx = read_a ? table.column(schema.sensitive_col) : 0;
  const std::size_t y_idx = read_y ? table.column(schema.target_col) : 0;
  std::vector<std::size_t> x_idx, m_idx;
  for (const auto& b : ds.covariate_blocks) x_idx.push_back(table.column(b.name));
  for (const auto& b : ds.mediator_blocks) m_idx.push_back(table.column(b.name));
  std::vector<std::string> aux_cols;
  for (const auto& c : schema.auxiliary_cols) {
    if (!options.features_only || has(c)) aux_cols.push_back(c);
  }
  for (const auto& c : aux_cols) ds.aux[c].resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = table.rows[keep[i]];
    for (std::size_t k = 0; k < ds.covariate_blocks.size(); ++k) encode_block(ds.covariate_blocks[k], trim(row[x_idx[k]]), ds.x, i);
    for (std::size_t k = 0; k < ds.mediator_blocks.size(); ++k) encode_block(ds.mediator_blocks[k], trim(row[m_idx[k]]), ds.m, i);
    ds.a[i] = read_a ? map_binary(schema.sensitive_col, trim(row[a_idx]), schema.sensitive_mapping) : 0;
    ds.y[i] = read_y ? map_binary(schema.target_col, trim(row[y_idx]), schema.target_mapping) : 0;
    for (const auto& c : aux_cols) {
      double v = 0.0;
      const std::string cell = trim(row[table.column(c)]);
      if (!parse_double(cell, v)) {
        if (options.features_only) v = std::numeric_limits<double>::quiet_NaN();
        else throw ValidationError("column '" + c + "': non-numeric value '" + cell + "'");
      }
      ds.aux[c][i] = v;
    }
  }
  ds.standardization = Standardization::identity(ds.x.cols(), ds.m.cols());
  ds.provenance["ingest"] = {{"rows_read", rep.rows_read},
                             {"dropped_missing", rep.dropped_missing},
                             {"dropped_filter", rep.dropped_filter},
                             {"rows_kept", rep.rows_kept}};
  if (options.log_dropped && (rep.dropped_missing > 0 || rep.dropped_filter > 0)) {
    std::cerr << "ingest: kept " << rep.rows_kept << " of " << rep.rows_read << " rows (" << rep.dropped_missing
              << " with missing role values, " << rep.dropped_filter << " filtered)\n";
  }
  if (report) *report = rep;
  ds.validate();
  return ds;
}

Dataset ingest_csv(const std::filesystem::path& path, const RoleSchema& schema, const IngestOptions& options,
                   IngestReport* report) {
  Dataset ds = ingest_table(read_csv(path, options.delimiter, options.comment_prefix), schema, options, report);
  ds.provenance["source"] = path.string();
  return ds;
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".meta.json");
  return p;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& csv_path) {
  ds.validate();
  const auto x_names = expanded_names(ds.covariate_blocks);
  const auto m_names = expanded_names(ds.mediator_blocks);
  CsvTable t;
  t.header.push_back("row_id");
  t.header.insert(t.header.end(), x_names.begin(), x_names.end());
  t.header.push_back(ds.schema.sensitive_col);
  t.header.insert(t.header.end(), m_names.begin(), m_names.end());
  t.header.push_back(ds.schema.target_col);
  if (ds.m_cf) {
    for (const auto& nm : m_names) t.header.push_back("cf:" + nm);
  }
  if (ds.noise) {
    for (const auto& nm : ds.noise->names) t.header.push_back("noise:" + nm);
  }
  for (const auto& [name, col] : ds.aux) t.header.push_back("aux:" + name);

  t.rows.reserve(ds.rows());
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    std::vector<std::string> r;
    r.reserve(t.header.size());
    r.push_back(std::to_string(ds.row_ids.empty() ? i : ds.row_ids[i]));
    for (std::size_t c = 0; c < ds.x.cols(); ++c) r.push_back(format_double(ds.x(i, c)));
    r.push_back(std::to_string(ds.a[i]));
    for (std::size_t c = 0; c < ds.m.cols(); ++c) r.push_back(format_double(ds.m(i, c)));
    r.push_back(std::to_string(ds.y[i]));
    if (ds.m_cf) {
      for (std::size_t c = 0; c < ds.m_cf->cols(); ++c) r.push_back(format_double((*ds.m_cf)(i, c)));
    }
    if (ds.noise) {
      for (std::size_t c = 0; c < ds.noise->values.cols(); ++c) r.push_back(format_double(ds.noise->values(i, c)));
    }
    for (const auto& [name, col] : ds.aux) r.push_back(format_double(col[i]));
    t.rows.push_back(std::move(r));
  }
  write_csv(csv_path, t);

  json side{{"format", "gcfn-dataset"},
            {"format_version", 1},
            {"rows", ds.rows()},
            {"schema", schema_to_json(ds.schema)},
            {"standardization", standardization_to_json(ds.standardization)},
            {"has_m_cf", ds.m_cf.has_value()},
            {"noise_columns", ds.noise ? ds.noise->names : std::vector<std::string>{}},
            {"aux_columns", json::array()},
            {"provenance", ds.provenance}};
  for (const auto& [name, col] : ds.aux) side["aux_columns"].push_back(name);
  nn::write_json_file(sidecar_path(csv_path), side);
}

Dataset load_dataset(const std::filesystem::path& csv_path) {
  const json side = nn::read_json_file(sidecar_path(csv_path));
  try {
    if (side.at("format") != "gcfn-dataset") throw ValidationError("'" + csv_path.string() + "': not a gcfn dataset sidecar");
    Dataset ds;
    ds.schema = schema_from_json(side.at("schema"));
    ds.covariate_blocks = encode_layout(ds.schema, ds.schema.covariate_cols);
    ds.mediator_blocks = encode_layout(ds.schema, ds.schema.mediator_cols);
    ds.standardization = standardization_from_json(side.at("standardization"));
    ds.provenance = side.value("provenance", json::object());

    const CsvTable t = read_csv(csv_path);
    const std::size_t n = t.rows.size();
    if (n != side.at("rows").get<std::size_t>()) {
      throw ValidationError("'" + csv_path.string() + "': row count does not match sidecar");
    }
    const auto x_names = expanded_names(ds.covariate_blocks);
    const auto m_names = expanded_names(ds.mediator_blocks);
    auto num = [&](std::size_t r, std::size_t c) {
      double v = 0.0;
      if (!parse_double(t.rows[r][c], v)) {
        throw ValidationError("'" + csv_path.string() + "': non-numeric cell in column '" + t.header[c] + "'");
      }
      return v;
    };
    auto fill = [&](Matrix& mat, const std::vector<std::string>& names, const std::string& prefix) {
      mat = Matrix(n, names.size());
      for (std::size_t c = 0; c < names.size(); ++c) {
        const std::size_t idx = t.column(prefix + names[c]);
        for (std::size_t r = 0; r < n; ++r) mat(r, c) = num(r, idx);
      }
    };
    fill(ds.x, x_names, "");
    fill(ds.m, m_names, "");
    if (side.at("has_m_cf").get<bool>()) {
      Matrix cf;
      fill(cf, m_names, "cf:");
      ds.m_cf = std::move(cf);
    }
    const auto noise_names = side.at("noise_columns").get<std::vector<std::string>>();
    if (!noise_names.empty()) {
      NoiseRecord rec{noise_names, Matrix()};
      fill(rec.values, noise_names, "noise:");
      ds.noise = std::move(rec);
    }
    const std::size_t a_idx = t.column(ds.schema.sensitive_col);
    const std::size_t y_idx = t.column(ds.schema.target_col);
    const std::size_t id_idx = t.column("row_id");
    ds.a.resize(n);
    ds.y.resize(n);
    ds.row_ids.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      ds.a[r] = static_cast<int>(num(r, a_idx));
      ds.y[r] = static_cast<int>(num(r, y_idx));
      ds.row_ids[r] = static_cast<std::size_t>(num(r, id_idx));
    }
    for (const auto& name : side.at("aux_columns").get<std::vector<std::string>>()) {
      const std::size_t idx = t.column("aux:" + name);
      auto& col = ds.aux[name];
      col.resize(n);
      for (std::size_t r = 0; r < n; ++r) col[r] = num(r, idx);
    }
    ds.validate();
    return ds;
  } catch (const json::exception& e) {
    throw ValidationError("'" + sidecar_path(csv_path).string() + "': malformed sidecar: " + e.what());
  }
}

}  // namespace gcfn::data
