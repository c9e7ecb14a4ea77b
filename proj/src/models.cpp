#include "lucid/models.hpp"

#include <cstdio>
#include <fstream>

#include "lucid/error.hpp"

namespace lucid {

using nlohmann::json;

namespace {

json point_list(const std::vector<FeaturePoint>& v) {
  json out = json::array();
  for (const auto& p : v) out.push_back({p[0], p[1]});
  return out;
}

std::vector<FeaturePoint> read_points(const json& j) {
  std::vector<FeaturePoint> out;
  for (const auto& e : j) out.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
  return out;
}

std::uint64_t parse_digest(const json& j) {
  const auto s = j.get<std::string>();
  std::size_t pos = 0;
  const auto v = std::stoull(s, &pos, 16);
  if (pos != s.size()) throw Error("malformed digest '" + s + "'");
  return v;
}

json regime_json(const RegimeModels& m) { return {{"gmm", to_json(m.gmm)}, {"hmm", to_json(m.hmm)}}; }

RegimeModels regime_from_json(const json& j) {
  return {gmm_from_json(j.at("gmm")), hmm_from_json(j.at("hmm"))};
}

}  // namespace

std::string digest_hex(std::uint64_t d) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

json to_json(const GmmParams& p) {
  return {{"n_components", p.n_components()},
          {"weights", p.weights},
          {"means", point_list(p.means)},
          {"variances", point_list(p.variances)},
          {"feature_center", {p.feature_center[0], p.feature_center[1]}},
          {"feature_scale", {p.feature_scale[0], p.feature_scale[1]}},
          {"digest", digest_hex(compute_digest(p))}};
}

json to_json(const HmmParams& p) {
  return {{"pi", {p.pi[0], p.pi[1]}},
          {"A", {{p.a[0][0], p.a[0][1]}, {p.a[1][0], p.a[1][1]}}},
          {"emissions", {to_json(p.emissions[0]), to_json(p.emissions[1])}},
          {"digest", digest_hex(compute_digest(p))}};
}

json to_json(const ModelPair& p) {
  return {{"format", "lucid-model-pair"},
          {"format_version", kModelFormatVersion},
          {"slot_len_us", p.slot_len_us},
          {"active", to_string(p.active)},
          {"peak", regime_json(p.peak)},
          {"offpeak", regime_json(p.offpeak)}};
}

GmmParams gmm_from_json(const json& j) {
  try {
    GmmParams p;
    p.weights = j.at("weights").get<std::vector<double>>();
    p.means = read_points(j.at("means"));
    p.variances = read_points(j.at("variances"));
    const auto& c = j.at("feature_center");
    const auto& s = j.at("feature_scale");
    p.feature_center = {c.at(0).get<double>(), c.at(1).get<double>()};
    p.feature_scale = {s.at(0).get<double>(), s.at(1).get<double>()};
    if (j.at("n_components").get<int>() != p.n_components()) {
      throw Error("n_components disagrees with the weight vector");
    }
    p.validate();
    p.refresh_digest();
    if (p.model_digest != parse_digest(j.at("digest"))) throw Error("GMM digest mismatch");
    return p;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed GMM model: ") + e.what());
  }
}

HmmParams hmm_from_json(const json& j) {
  try {
    HmmParams p;
    const auto& pi = j.at("pi");
    p.pi = {pi.at(0).get<double>(), pi.at(1).get<double>()};
    const auto& a = j.at("A");
    for (int i = 0; i < 2; ++i) {
      for (int k = 0; k < 2; ++k) p.a[i][k] = a.at(i).at(k).get<double>();
    }
    const auto& em = j.at("emissions");
    p.emissions = {gmm_from_json(em.at(0)), gmm_from_json(em.at(1))};
    p.validate();
    p.refresh_digest();
    if (p.model_digest != parse_digest(j.at("digest"))) throw Error("HMM digest mismatch");
    return p;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed HMM model: ") + e.what());
  }
}

ModelPair model_pair_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "lucid-model-pair") {
      throw Error("not a model pair document");
    }
    const int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw Error("unsupported model format version " + std::to_string(version));
    }
    ModelPair p;
    p.slot_len_us = j.at("slot_len_us").get<Micros>();
    p.active = parse_regime(j.at("active").get<std::string>());
    p.peak = regime_from_json(j.at("peak"));
    p.offpeak = regime_from_json(j.at("offpeak"));
    return p;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed model pair: ") + e.what());
  }
}

void save_model_pair(const ModelPair& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file: " + path);
  out << to_json(p).dump(2) << '\n';
}

ModelPair load_model_pair(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("model file " + path + " is not valid JSON: " + e.what());
  }
  return model_pair_from_json(j);
}

}  // namespace lucid
