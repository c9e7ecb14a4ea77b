#pragma once

#include <string>

#include <json.hpp>

#include "lucid/characterization.hpp"
#include "lucid/gmm.hpp"
#include "lucid/hmm.hpp"

namespace lucid {

/// Interference estimator and white-space predictor for one regime.
struct RegimeModels {
  GmmParams gmm;
  HmmParams hmm;

  bool operator==(const RegimeModels&) const = default;
};

struct ModelPair {
  RegimeModels peak;
  RegimeModels offpeak;
  Regime active = Regime::kOffPeak;
  Micros slot_len_us = 50000;

  const RegimeModels& get(Regime r) const { return r == Regime::kPeak ? peak : offpeak; }
  const RegimeModels& active_models() const { return get(active); }

  bool operator==(const ModelPair&) const = default;
};

inline constexpr int kModelFormatVersion = 1;

nlohmann::json to_json(const GmmParams& p);
nlohmann::json to_json(const HmmParams& p);
nlohmann::json to_json(const ModelPair& p);

/// Parsing verifies the stored digest against the parameters.
GmmParams gmm_from_json(const nlohmann::json& j);
HmmParams hmm_from_json(const nlohmann::json& j);
ModelPair model_pair_from_json(const nlohmann::json& j);

void save_model_pair(const ModelPair& p, const std::string& path);
ModelPair load_model_pair(const std::string& path);

std::string digest_hex(std::uint64_t d);

}  // namespace lucid
