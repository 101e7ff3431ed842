#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "asurv/data.hpp"
#include "asurv/errors.hpp"
#include "asurv/policy.hpp"

namespace asurv {

inline constexpr const char* kVersion = "0.1.0";

// Fixed-precision text form used in every CSV so outputs are byte-stable.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : "";
}

inline nlohmann::json subject_to_json(const SubjectRecord& rec) {
  nlohmann::json j;
  j["id"] = rec.id;
  auto& biopsies = j["biopsies"] = nlohmann::json::array();
  for (const auto& b : rec.biopsies) biopsies.push_back({b.time, b.result});
  auto& covs = j["covariates"] = nlohmann::json::array();
  for (const auto& m : rec.measurements) covs.push_back({m.time, m.x});
  if (rec.truth) {
    nlohmann::json t;
    t["T"] = rec.truth->event_time;
    if (std::isinf(rec.truth->censor_time))
      t["C"] = nullptr;
    else
      t["C"] = rec.truth->censor_time;
    j["truth"] = t;
  } else {
    j["truth"] = nullptr;
  }
  return j;
}

inline SubjectRecord subject_from_json(const nlohmann::json& j, int line) {
  auto fail = [line](const std::string& msg) -> ParseError {
    return ParseError("dataset line " + std::to_string(line) + ": " + msg);
  };
  SubjectRecord rec;
  try {
    rec.id = j.at("id").get<int>();
    for (const auto& b : j.at("biopsies")) {
      if (!b.is_array() || b.size() != 2) throw fail("biopsy entries must be [time, result]");
      Biopsy bio{b[0].get<double>(), b[1].get<int>()};
      if (bio.result != 0 && bio.result != 1) throw fail("biopsy result must be 0 or 1");
      rec.biopsies.push_back(bio);
    }
    for (const auto& c : j.at("covariates")) {
      if (!c.is_array() || c.size() != 2) throw fail("covariate entries must be [time, [x...]]");
      Measurement m;
      m.time = c[0].get<double>();
      m.x = c[1].get<std::vector<double>>();
      rec.measurements.push_back(std::move(m));
    }
    if (j.contains("truth") && !j.at("truth").is_null()) {
      const auto& t = j.at("truth");
      Truth truth;
      truth.event_time = t.at("T").get<double>();
      truth.censor_time = t.at("C").is_null() ? std::numeric_limits<double>::infinity()
                                              : t.at("C").get<double>();
      rec.truth = truth;
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
  if (rec.biopsies.empty() || rec.biopsies.front().time != 0.0)
    rec.biopsies.insert(rec.biopsies.begin(), Biopsy{0.0, 0});
  if (rec.biopsies.front().result != 0) throw fail("baseline biopsy must be negative");
  for (std::size_t k = 1; k < rec.biopsies.size(); ++k) {
    if (rec.biopsies[k].time <= rec.biopsies[k - 1].time)
      throw fail("biopsy times must be strictly increasing");
    if (rec.biopsies[k - 1].result == 1) throw fail("a positive biopsy must be the last one");
  }
  for (std::size_t k = 1; k < rec.measurements.size(); ++k)
    if (rec.measurements[k].time < rec.measurements[k - 1].time)
      throw fail("covariate measurements must be time-ordered");
  return rec;
}

inline Dataset read_dataset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file: " + path);
  Dataset data;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    data.push_back(subject_from_json(j, line_no));
  }
  if (data.empty()) throw ParseError("dataset file is empty: " + path);
  return data;
}

inline void write_dataset_jsonl(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open output file: " + path);
  for (const auto& rec : data) out << subject_to_json(rec).dump() << '\n';
}

// Serialized decision rule plus the estimation context it was fit under.
struct RuleFile {
  LinearRule rule;
  std::vector<double> landmarks;
  double tau = 0.0;
  std::vector<double> xi;
  nlohmann::json meta;
};

inline void write_rule(const std::string& path, const RuleFile& rf) {
  nlohmann::json j;
  j["intercept"] = rf.rule.intercept;
  j["coef"] = rf.rule.coef;
  j["standardize"]["mean"] = rf.rule.feat_mean;
  j["standardize"]["sd"] = rf.rule.feat_sd;
  j["landmarks"] = rf.landmarks;
  j["tau"] = rf.tau;
  j["xi"] = rf.xi;
  j["meta"] = rf.meta.is_null() ? nlohmann::json::object() : rf.meta;
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open output file: " + path);
  out << j.dump(2) << '\n';
}

inline RuleFile read_rule(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open rule file: " + path);
  nlohmann::json j;
  try {
    in >> j;
    RuleFile rf;
    rf.rule.intercept = j.at("intercept").get<double>();
    rf.rule.coef = j.at("coef").get<std::vector<double>>();
    rf.rule.feat_mean = j.at("standardize").at("mean").get<std::vector<double>>();
    rf.rule.feat_sd = j.at("standardize").at("sd").get<std::vector<double>>();
    rf.landmarks = j.at("landmarks").get<std::vector<double>>();
    rf.tau = j.at("tau").get<double>();
    rf.xi = j.at("xi").get<std::vector<double>>();
    if (j.contains("meta")) rf.meta = j.at("meta");
    if (rf.rule.coef.size() != rf.rule.feat_mean.size() ||
        rf.rule.coef.size() != rf.rule.feat_sd.size())
      throw ParseError("rule file: coef and standardization lengths differ");
    if (rf.xi.size() != rf.landmarks.size())
      throw ParseError("rule file: xi and landmarks lengths differ");
    return rf;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("rule file " + path + ": " + e.what());
  }
}

// Reproducibility sidecar written next to every CLI output. Carries no
// timestamps so reruns are byte-identical.
inline void write_manifest(const std::string& path, const nlohmann::json& body) {
  nlohmann::json j = body;
  j["tool"] = "asurv";
  j["version"] = kVersion;
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open output file: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace asurv
