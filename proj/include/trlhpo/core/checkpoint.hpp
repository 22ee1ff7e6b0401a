#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trlhpo/core/adam.hpp"
#include "trlhpo/core/tensor.hpp"

namespace trlhpo::core {

struct NamedParam {
  std::string name;
  Tensor value;
};

using ParamList = std::vector<NamedParam>;

inline std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

// Checkpoint format, version 1:
//   {"format": "trlhpo-checkpoint", "version": 1, "meta": {...},
//    "tensors": [{"name": str, "shape": [int...], "values": [float...]}, ...]}
// Values are row-major and written with round-trip precision.
inline constexpr const char* kCheckpointFormat = "trlhpo-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json params_to_json(const ParamList& params) {
  auto arr = nlohmann::json::array();
  for (const auto& p : params) {
    arr.push_back({{"name", p.name},
                   {"shape", p.value.shape()},
                   {"values", std::vector<Real>(p.value.data().begin(), p.value.data().end())}});
  }
  return arr;
}

/// Copies stored values into `params` by name; every name must be present
/// with a matching shape.
inline void params_from_json(const nlohmann::json& arr, ParamList& params) {
  for (auto& p : params) {
    const nlohmann::json* found = nullptr;
    for (const auto& entry : arr) {
      if (entry.at("name").get<std::string>() == p.name) {
        found = &entry;
        break;
      }
    }
    if (!found) throw std::runtime_error("checkpoint: missing parameter '" + p.name + "'");
    const auto shape = found->at("shape").get<Shape>();
    if (shape != p.value.shape()) {
      throw ShapeError("checkpoint: parameter '" + p.name + "' has shape " + shape_str(shape) +
                       ", expected " + shape_str(p.value.shape()));
    }
    const auto values = found->at("values").get<std::vector<Real>>();
    auto dst = p.value.mutable_data();
    if (values.size() != dst.size()) throw std::runtime_error("checkpoint: truncated values for '" + p.name + "'");
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

inline nlohmann::json adam_to_json(const AdamState& s) {
  return {{"lr", s.config.lr}, {"beta1", s.config.beta1}, {"beta2", s.config.beta2},
          {"epsilon", s.config.epsilon}, {"t", s.t}, {"m", s.m}, {"v", s.v}};
}

inline AdamState adam_from_json(const nlohmann::json& j) {
  AdamState s;
  s.config.lr = j.at("lr").get<Real>();
  s.config.beta1 = j.at("beta1").get<Real>();
  s.config.beta2 = j.at("beta2").get<Real>();
  s.config.epsilon = j.at("epsilon").get<Real>();
  s.t = j.at("t").get<std::int64_t>();
  s.m = j.at("m").get<std::vector<std::vector<Real>>>();
  s.v = j.at("v").get<std::vector<std::vector<Real>>>();
  return s;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamList& params,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json doc{{"format", kCheckpointFormat},
                     {"version", kCheckpointVersion},
                     {"meta", meta},
                     {"tensors", params_to_json(params)}};
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp.string());
    out << doc.dump();
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Loads into `params` and returns the stored meta object.
inline nlohmann::json load_checkpoint(const std::filesystem::path& path, ParamList& params) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  const auto doc = nlohmann::json::parse(in);
  if (doc.value("format", "") != kCheckpointFormat) {
    throw std::runtime_error("checkpoint: " + path.string() + " is not a trlhpo checkpoint");
  }
  if (doc.value("version", 0) != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + doc.at("version").dump());
  }
  params_from_json(doc.at("tensors"), params);
  return doc.value("meta", nlohmann::json::object());
}

}  // namespace trlhpo::core
