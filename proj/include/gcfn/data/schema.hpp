#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace gcfn::data {

/// Row filter applied at ingestion. Numeric bounds are inclusive; `exclude` drops rows whose
/// raw cell text matches any listed value.
struct ColumnFilter {
  std::string column;
  std::optional<double> min;
  std::optional<double> max;
  std::vector<std::string> exclude;
};

/// Column roles of a tabular dataset: covariates X, binary sensitive attribute A,
/// mediators M and binary target Y.
struct RoleSchema {
  std::vector<std::string> covariate_cols;
  std::string sensitive_col;
  std::vector<std::string> mediator_cols;
  std::string target_col;
  // Column -> ordered category list; one-hot encoded in that order.
  std::map<std::string, std::vector<std::string>> categorical;
  // Raw value -> {0,1}. "*" is a catch-all. Empty means the column is already numeric 0/1.
  std::map<std::string, int> sensitive_mapping;
  std::map<std::string, int> target_mapping;
  // Extra numeric columns carried through ingestion untouched (e.g. a reference score).
  std::vector<std::string> auxiliary_cols;
  std::vector<ColumnFilter> filters;
  // Header to use when the file has none.
  std::vector<std::string> column_names;
  bool has_header = true;

  bool is_categorical(const std::string& col) const { return categorical.count(col) > 0; }
  /// Throws ValidationError if roles overlap or a required role is missing.
  void validate() const;
};

enum class BlockKind { kContinuous, kCategorical };

/// A mediator or covariate column after encoding: one column wide when continuous,
/// one column per category when categorical.
struct ColumnBlock {
  std::string name;
  BlockKind kind = BlockKind::kContinuous;
  std::size_t offset = 0;
  std::size_t width = 1;
  std::vector<std::string> categories;
};

std::vector<ColumnBlock> encode_layout(const RoleSchema& schema, const std::vector<std::string>& cols);
std::size_t layout_width(const std::vector<ColumnBlock>& blocks);
/// Expanded column names, e.g. "occupation=Sales".
std::vector<std::string> expanded_names(const std::vector<ColumnBlock>& blocks);

nlohmann::json schema_to_json(const RoleSchema& s);
RoleSchema schema_from_json(const nlohmann::json& j);

}  // namespace gcfn::data
