#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

#include "gcfn/nn/adam.hpp"
#include "gcfn/nn/matrix.hpp"
#include "gcfn/nn/mlp.hpp"

namespace gcfn::nn {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

nlohmann::json mlp_to_json(const MLPParams& net);
MLPParams mlp_from_json(const nlohmann::json& j);

nlohmann::json adam_to_json(const AdamState& s);
AdamState adam_from_json(const nlohmann::json& j);

/// Named networks, optimizer states and free-form metadata in one JSON document.
/// Doubles are written in shortest round-trip form, so load(save(x)) is bit-exact.
struct Checkpoint {
  std::map<std::string, MLPParams> networks;
  std::map<std::string, AdamState> optimizers;
  nlohmann::json meta = nlohmann::json::object();

  nlohmann::json to_json() const;
  static Checkpoint from_json(const nlohmann::json& j);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Reads a whole JSON file; IoError / ValidationError on failure.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace gcfn::nn
