#pragma once

// Merging weights from few-shot losses:
//
//   w_i = softmax(-L_i / tau) = exp(-(L_i - L_min) / tau) / sum_j exp(...)
//
// computed against the minimum loss so even huge loss offsets cannot
// overflow. Lower loss -> larger weight; tau controls how sharply the
// weights concentrate on the best candidate.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cocktail/errors.hpp"
#include "cocktail/loss_report.hpp"
#include "cocktail/version.hpp"

namespace cocktail {

inline constexpr double kDefaultTau = 1.0;

struct WeightVector {
  std::vector<std::pair<std::string, double>> weights;  // candidate order of the report
  double tau = kDefaultTau;
  std::vector<std::pair<std::string, double>> losses;   // aggregates the weights came from

  double at(const std::string& id) const {
    for (const auto& [k, w] : weights) {
      if (k == id) return w;
    }
    throw validation_error("no weight for candidate \"" + id + "\"");
  }

  std::vector<double> ordered(const std::vector<std::string>& ids) const {
    std::vector<double> out;
    out.reserve(ids.size());
    for (const std::string& id : ids) out.push_back(at(id));
    return out;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json doc;
    doc["format_version"] = kFormatVersion;
    doc["tau"] = tau;
    nlohmann::ordered_json w = nlohmann::ordered_json::object();
    for (const auto& [id, weight] : weights) w[id] = weight;
    doc["weights"] = std::move(w);
    nlohmann::ordered_json l = nlohmann::ordered_json::object();
    for (const auto& [id, loss] : losses) l[id] = loss;
    doc["losses"] = std::move(l);
    return doc;
  }
};

inline WeightVector solve_weights(const LossReport& report, double tau = kDefaultTau) {
  if (report.empty()) throw validation_error("loss report is empty");
  if (!(tau > 0.0)) throw validation_error("tau must be positive");

  double min_loss = report.entries().front().aggregate;
  for (const CandidateLosses& e : report.entries()) {
    if (!std::isfinite(e.aggregate)) {
      throw validation_error("candidate \"" + e.id + "\" has a non-finite loss");
    }
    min_loss = std::min(min_loss, e.aggregate);
  }

  WeightVector out;
  out.tau = tau;
  double sum = 0.0;
  for (const CandidateLosses& e : report.entries()) {
    const double w = std::exp(-(e.aggregate - min_loss) / tau);
    out.weights.emplace_back(e.id, w);
    out.losses.emplace_back(e.id, e.aggregate);
    sum += w;
  }
  for (auto& [id, w] : out.weights) w /= sum;
  return out;
}

// General mode scores the candidate pool only: the target's own (much lower)
// loss would otherwise swallow the softmax mass that alpha already controls.
inline LossReport drop_target_candidate(const LossReport& report, const std::string& target_id) {
  if (!report.contains(target_id)) {
    throw validation_error("target \"" + target_id + "\" is not in the loss report");
  }
  LossReport out;
  for (const CandidateLosses& e : report.entries()) {
    if (e.id != target_id) out.add(e.id, e.losses);
  }
  return out;
}

inline void write_weight_vector(const WeightVector& wv, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot create \"" + path.string() + "\"");
  out << wv.to_json().dump(2) << "\n";
  if (!out) throw io_error("write failure on \"" + path.string() + "\"");
}

inline WeightVector load_weight_vector(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open \"" + path.string() + "\"");
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("weights") || !doc["weights"].is_object() ||
      doc["weights"].empty()) {
    throw validation_error(path.string() + ": expected a non-empty \"weights\" object");
  }
  WeightVector wv;
  wv.tau = doc.value("tau", kDefaultTau);
  for (const auto& [id, w] : doc["weights"].items()) {
    if (!w.is_number()) throw validation_error(path.string() + ": weights must be numbers");
    wv.weights.emplace_back(id, w.get<double>());
  }
  if (doc.contains("losses") && doc["losses"].is_object()) {
    for (const auto& [id, l] : doc["losses"].items()) {
      wv.losses.emplace_back(id, l.get<double>());
    }
  }
  return wv;
}

}  // namespace cocktail
