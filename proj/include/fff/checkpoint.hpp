#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "fff/errors.hpp"
#include "fff/network.hpp"

namespace fff {

// Encoder f maps data to latent, decoder g maps latent back. Both are
// dimension preserving and share input_dim/context_dim.
struct ModelPair {
  Network encoder;
  Network decoder;
};

// Fresh encoder/decoder pair with decorrelated initializations; with the
// default zero final-layer scale both nets start at the identity map when the
// spec has a global skip.
inline ModelPair make_model_pair(const NetworkSpec& spec, std::uint64_t seed,
                                 double final_layer_scale = 0.0) {
  ModelPair m;
  m.encoder = Network{spec, init_params(spec, seed, final_layer_scale)};
  m.decoder = Network{spec, init_params(spec, seed ^ 0x9e3779b97f4a7c15ULL, final_layer_scale)};
  return m;
}

struct CheckpointMeta {
  std::uint64_t seed = 0;
  double beta = 0.0;
  std::int64_t step = 0;
  std::string dataset_id;
};

namespace detail {

inline nlohmann::json spec_to_json(const NetworkSpec& s) {
  return {{"input_dim", s.input_dim},
          {"context_dim", s.context_dim},
          {"hidden_widths", s.hidden_widths},
          {"activation", activation_to_string(s.activation)},
          {"global_skip", s.global_skip},
          {"context_every_layer", s.context_every_layer}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.input_dim = j.at("input_dim").get<int>();
  s.context_dim = j.at("context_dim").get<int>();
  s.hidden_widths = j.at("hidden_widths").get<std::vector<int>>();
  s.activation = activation_from_string(j.at("activation").get<std::string>());
  s.global_skip = j.at("global_skip").get<bool>();
  s.context_every_layer = j.at("context_every_layer").get<bool>();
  return s;
}

}  // namespace detail

// Parameters are emitted as decimal JSON numbers in shortest round-trip form
// (up to 17 significant digits), so load(save(net)) reproduces every bit.
inline nlohmann::json network_to_json(const Network& net) {
  nlohmann::json layers = nlohmann::json::array();
  const auto& shapes = net.params.shapes();
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    nlohmann::json weight = nlohmann::json::array();
    const double* w = net.params.weight(l);
    for (int i = 0; i < shapes[l].out; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int j = 0; j < shapes[l].in; ++j)
        row.push_back(w[static_cast<std::size_t>(i) * shapes[l].in + j]);
      weight.push_back(std::move(row));
    }
    const double* b = net.params.bias(l);
    nlohmann::json bias = nlohmann::json::array();
    for (int i = 0; i < shapes[l].out; ++i) bias.push_back(b[i]);
    layers.push_back({{"weight", std::move(weight)}, {"bias", std::move(bias)}});
  }
  return {{"spec", detail::spec_to_json(net.spec)}, {"layers", std::move(layers)}};
}

inline Network network_from_json(const nlohmann::json& j) {
  Network net;
  net.spec = detail::spec_from_json(j.at("spec"));
  net.params = ParamStore(net.spec);
  const auto& layers = j.at("layers");
  const auto& shapes = net.params.shapes();
  if (layers.size() != shapes.size())
    throw IoError("checkpoint: layer count does not match spec");
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& weight = layers[l].at("weight");
    const auto& bias = layers[l].at("bias");
    if (static_cast<int>(weight.size()) != shapes[l].out ||
        static_cast<int>(bias.size()) != shapes[l].out)
      throw IoError("checkpoint: layer " + std::to_string(l) + " shape mismatch");
    double* w = net.params.weight(l);
    for (int i = 0; i < shapes[l].out; ++i) {
      const auto& row = weight[i];
      if (static_cast<int>(row.size()) != shapes[l].in)
        throw IoError("checkpoint: layer " + std::to_string(l) + " weight row size mismatch");
      for (int jj = 0; jj < shapes[l].in; ++jj)
        w[static_cast<std::size_t>(i) * shapes[l].in + jj] = row[jj].get<double>();
    }
    double* b = net.params.bias(l);
    for (int i = 0; i < shapes[l].out; ++i) b[i] = bias[i].get<double>();
  }
  return net;
}

inline nlohmann::json checkpoint_to_json(const ModelPair& model, const CheckpointMeta& meta) {
  return {{"format", "fff-checkpoint"},
          {"version", 1},
          {"encoder", network_to_json(model.encoder)},
          {"decoder", network_to_json(model.decoder)},
          {"metadata",
           {{"seed", meta.seed},
            {"beta", meta.beta},
            {"step", meta.step},
            {"dataset_id", meta.dataset_id}}}};
}

struct Checkpoint {
  ModelPair model;
  CheckpointMeta meta;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != std::string("fff-checkpoint"))
    throw IoError("not a checkpoint file (missing format tag)");
  Checkpoint c;
  c.model.encoder = network_from_json(j.at("encoder"));
  c.model.decoder = network_from_json(j.at("decoder"));
  const auto& m = j.at("metadata");
  c.meta.seed = m.at("seed").get<std::uint64_t>();
  c.meta.beta = m.at("beta").get<double>();
  c.meta.step = m.at("step").get<std::int64_t>();
  c.meta.dataset_id = m.at("dataset_id").get<std::string>();
  return c;
}

// Atomic write: serialize to a sibling temp file, then rename over the target.
inline void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j,
                              int indent = 1) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << j.dump(indent) << '\n';
    if (!out.good()) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename to " + path.string() + " failed: " + ec.message());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("parse error in " + path.string() + ": " + e.what());
  }
  return j;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelPair& model,
                            const CheckpointMeta& meta) {
  write_json_atomic(path, checkpoint_to_json(model, meta));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_json(path));
}

}  // namespace fff
