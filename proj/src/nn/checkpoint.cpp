#include "gcfn/nn/checkpoint.hpp"

#include <fstream>

#include "gcfn/errors.hpp"

namespace gcfn::nn {

using nlohmann::json;

namespace {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kLeakyRelu:
      return "leaky_relu";
    case Activation::kSigmoid:
      return "sigmoid";
    case Activation::kIdentity:
      return "identity";
  }
  return "identity";
}

Activation activation_from_name(const std::string& s) {
  if (s == "leaky_relu") return Activation::kLeakyRelu;
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "identity") return Activation::kIdentity;
  throw ValidationError("checkpoint: unknown activation '" + s + "'");
}

}  // namespace

json matrix_to_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}};
}

Matrix matrix_from_json(const json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

json mlp_to_json(const MLPParams& net) {
  json layers = json::array();
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    json jl{{"weight", matrix_to_json(l.weight)},
            {"bias", l.bias},
            {"activation", activation_name(l.activation)},
            {"spectral_norm", l.spectral_norm},
            {"power_iter_vector", l.power_iter_vector}};
    if (net.batch_norms[i]) {
      const auto& bn = *net.batch_norms[i];
      jl["batch_norm"] = json{{"gamma", bn.gamma},
                              {"beta", bn.beta},
                              {"running_mean", bn.running_mean},
                              {"running_var", bn.running_var},
                              {"momentum", bn.momentum},
                              {"eps", bn.eps}};
    }
    layers.push_back(std::move(jl));
  }
  return json{{"hidden_dim", net.hidden_dim}, {"layers", std::move(layers)}};
}

MLPParams mlp_from_json(const json& j) {
  MLPParams net;
  net.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  for (const auto& jl : j.at("layers")) {
    DenseLayer l;
    l.weight = matrix_from_json(jl.at("weight"));
    l.bias = jl.at("bias").get<std::vector<double>>();
    l.activation = activation_from_name(jl.at("activation").get<std::string>());
    l.spectral_norm = jl.at("spectral_norm").get<bool>();
    l.power_iter_vector = jl.at("power_iter_vector").get<std::vector<double>>();
    if (l.bias.size() != l.out_dim() || l.power_iter_vector.size() != l.in_dim()) {
      throw ValidationError("checkpoint: layer vectors inconsistent with weight shape");
    }
    if (!net.layers.empty() && net.layers.back().out_dim() != l.in_dim()) {
      throw ValidationError("checkpoint: adjacent layer dimensions do not chain");
    }
    net.layers.push_back(std::move(l));
    if (jl.contains("batch_norm")) {
      const auto& jb = jl.at("batch_norm");
      BatchNormState bn;
      bn.gamma = jb.at("gamma").get<std::vector<double>>();
      bn.beta = jb.at("beta").get<std::vector<double>>();
      bn.running_mean = jb.at("running_mean").get<std::vector<double>>();
      bn.running_var = jb.at("running_var").get<std::vector<double>>();
      bn.momentum = jb.at("momentum").get<double>();
      bn.eps = jb.at("eps").get<double>();
      net.batch_norms.emplace_back(std::move(bn));
    } else {
      net.batch_norms.emplace_back(std::nullopt);
    }
  }
  if (net.layers.empty()) throw ValidationError("checkpoint: network without layers");
  return net;
}

json adam_to_json(const AdamState& s) {
  return json{{"step", s.step},
              {"lr", s.lr},
              {"beta1", s.beta1},
              {"beta2", s.beta2},
              {"eps", s.eps},
              {"first_moment", s.first_moment},
              {"second_moment", s.second_moment}};
}

AdamState adam_from_json(const json& j) {
  AdamState s(j.at("lr").get<double>());
  s.step = j.at("step").get<std::uint64_t>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.eps = j.at("eps").get<double>();
  s.first_moment = j.at("first_moment").get<std::vector<std::vector<double>>>();
  s.second_moment = j.at("second_moment").get<std::vector<std::vector<double>>>();
  return s;
}

json Checkpoint::to_json() const {
  json nets = json::object();
  for (const auto& [name, net] : networks) nets[name] = mlp_to_json(net);
  json opts = json::object();
  for (const auto& [name, opt] : optimizers) opts[name] = adam_to_json(opt);
  return json{{"format", "gcfn-checkpoint"},
              {"format_version", kCheckpointVersion},
              {"networks", std::move(nets)},
              {"optimizers", std::move(opts)},
              {"meta", meta}};
}

Checkpoint Checkpoint::from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "gcfn-checkpoint") {
      throw ValidationError("checkpoint: unexpected format tag");
    }
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw ValidationError("checkpoint: unsupported format_version " + std::to_string(version));
    }
    Checkpoint c;
    for (const auto& [name, jn] : j.at("networks").items()) c.networks.emplace(name, mlp_from_json(jn));
    for (const auto& [name, jo] : j.at("optimizers").items()) c.optimizers.emplace(name, adam_from_json(jo));
    c.meta = j.value("meta", json::object());
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: malformed document: ") + e.what());
  }
}

void Checkpoint::save(const std::filesystem::path& path) const { write_json_file(path, to_json()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path));
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace gcfn::nn
