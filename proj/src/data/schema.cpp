#include "gcfn/data/schema.hpp"

#include <algorithm>
#include <set>

#include "gcfn/errors.hpp"

namespace gcfn::data {

using nlohmann::json;

void RoleSchema::validate() const {
  if (sensitive_col.empty()) throw ValidationError("schema: sensitive_col is required");
  if (target_col.empty()) throw ValidationError("schema: target_col is required");
  if (mediator_cols.empty()) throw ValidationError("schema: at least one mediator column is required");
  std::set<std::string> seen;
  auto claim = [&](const std::string& c, const char* role) {
    if (!seen.insert(c).second) {
      throw ValidationError("schema: column '" + c + "' appears in more than one role (" + role + ")");
    }
  };
  for (const auto& c : covariate_cols) claim(c, "covariate");
  claim(sensitive_col, "sensitive");
  for (const auto& c : mediator_cols) claim(c, "mediator");
  claim(target_col, "target");
  for (const auto& [col, cats] : categorical) {
    const bool is_role = std::find(covariate_cols.begin(), covariate_cols.end(), col) != covariate_cols.end() ||
                         std::find(mediator_cols.begin(), mediator_cols.end(), col) != mediator_cols.end();
    if (!is_role) throw ValidationError("schema: categorical column '" + col + "' is not a covariate or mediator");
    if (cats.size() < 2) throw ValidationError("schema: categorical column '" + col + "' needs >= 2 categories");
    if (std::set<std::string>(cats.begin(), cats.end()).size() != cats.size()) {
      throw ValidationError("schema: categorical column '" + col + "' lists a category twice");
    }
  }
  for (const auto& [value, code] : sensitive_mapping) {
    if (code != 0 && code != 1) throw ValidationError("schema: sensitive mapping of '" + value + "' is not 0/1");
  }
  for (const auto& [value, code] : target_mapping) {
    if (code != 0 && code != 1) throw ValidationError("schema: target mapping of '" + value + "' is not 0/1");
  }
  if (!has_header && column_names.empty()) {
    throw ValidationError("schema: has_header is false but column_names is empty");
  }
}

std::vector<ColumnBlock> encode_layout(const RoleSchema& schema, const std::vector<std::string>& cols) {
  std::vector<ColumnBlock> blocks;
  std::size_t offset = 0;
  for (const auto& c : cols) {
    ColumnBlock b;
    b.name = c;
    b.offset = offset;
    if (auto it = schema.categorical.find(c); it != schema.categorical.end()) {
      b.kind = BlockKind::kCategorical;
      b.categories = it->second;
      b.width = it->second.size();
    }
    offset += b.width;
    blocks.push_back(std::move(b));
  }
  return blocks;
}

std::size_t layout_width(const std::vector<ColumnBlock>& blocks) {
  return blocks.empty() ? 0 : blocks.back().offset + blocks.back().width;
}

std::vector<std::string> expanded_names(const std::vector<ColumnBlock>& blocks) {
  std::vector<std::string> names;
  for (const auto& b : blocks) {
    if (b.kind == BlockKind::kContinuous) {
      names.push_back(b.name);
    } else {
      for (const auto& cat : b.categories) names.push_back(b.name + "=" + cat);
    }
  }
  return names;
}

json schema_to_json(const RoleSchema& s) {
  json filters = json::array();
  for (const auto& f : s.filters) {
    json jf{{"column", f.column}};
    if (f.min) jf["min"] = *f.min;
    if (f.max) jf["max"] = *f.max;
    if (!f.exclude.empty()) jf["exclude"] = f.exclude;
    filters.push_back(std::move(jf));
  }
  json j{{"covariate_cols", s.covariate_cols},
         {"sensitive_col", s.sensitive_col},
         {"mediator_cols", s.mediator_cols},
         {"target_col", s.target_col},
         {"categorical", s.categorical},
         {"sensitive_mapping", s.sensitive_mapping},
         {"target_mapping", s.target_mapping},
         {"auxiliary_cols", s.auxiliary_cols},
         {"filters", std::move(filters)},
         {"has_header", s.has_header}};
  if (!s.column_names.empty()) j["column_names"] = s.column_names;
  return j;
}

RoleSchema schema_from_json(const json& j) {
  try {
    RoleSchema s;
    s.covariate_cols = j.value("covariate_cols", std::vector<std::string>{});
    s.sensitive_col = j.at("sensitive_col").get<std::string>();
    s.mediator_cols = j.at("mediator_cols").get<std::vector<std::string>>();
    s.target_col = j.at("target_col").get<std::string>();
    s.categorical = j.value("categorical", std::map<std::string, std::vector<std::string>>{});
    s.sensitive_mapping = j.value("sensitive_mapping", std::map<std::string, int>{});
    s.target_mapping = j.value("target_mapping", std::map<std::string, int>{});
    s.auxiliary_cols = j.value("auxiliary_cols", std::vector<std::string>{});
    s.column_names = j.value("column_names", std::vector<std::string>{});
    s.has_header = j.value("has_header", true);
    if (j.contains("filters")) {
      for (const auto& jf : j.at("filters")) {
        ColumnFilter f;
        f.column = jf.at("column").get<std::string>();
        if (jf.contains("min")) f.min = jf.at("min").get<double>();
        if (jf.contains("max")) f.max = jf.at("max").get<double>();
        f.exclude = jf.value("exclude", std::vector<std::string>{});
        s.filters.push_back(std::move(f));
      }
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("schema: malformed JSON: ") + e.what());
  }
}

}  // namespace gcfn::data
