#pragma once

// Per-candidate prediction losses on a few-shot set, in nats. The aggregate
// is always the arithmetic mean of the per-example losses, recomputed on
// load so a file's own aggregates can never disagree.
//
// JSON shape: {"candidates": {id: {"losses": [..]}}}

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "cocktail/errors.hpp"
#include "cocktail/version.hpp"

namespace cocktail {

struct CandidateLosses {
  std::string id;
  std::vector<double> losses;
  double aggregate = 0.0;
};

class LossReport {
 public:
  void add(std::string id, std::vector<double> losses) {
    if (losses.empty()) {
      throw validation_error("candidate \"" + id + "\" has no per-example losses");
    }
    for (double l : losses) {
      if (!std::isfinite(l)) {
        throw validation_error("candidate \"" + id + "\" has a non-finite loss");
      }
      if (l < 0.0) {
        throw validation_error("candidate \"" + id + "\" has a negative loss");
      }
    }
    if (contains(id)) throw validation_error("duplicate candidate \"" + id + "\"");
    CandidateLosses entry;
    entry.id = std::move(id);
    entry.aggregate =
        std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
    entry.losses = std::move(losses);
    entries_.push_back(std::move(entry));
  }

  bool contains(const std::string& id) const {
    for (const CandidateLosses& e : entries_) {
      if (e.id == id) return true;
    }
    return false;
  }

  const CandidateLosses& at(const std::string& id) const {
    for (const CandidateLosses& e : entries_) {
      if (e.id == id) return e;
    }
    throw validation_error("no candidate \"" + id + "\" in the loss report");
  }

  const std::vector<CandidateLosses>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json doc;
    doc["format_version"] = kFormatVersion;
    nlohmann::ordered_json cands = nlohmann::ordered_json::object();
    for (const CandidateLosses& e : entries_) {
      cands[e.id] = {{"losses", e.losses}, {"aggregate", e.aggregate}};
    }
    doc["candidates"] = std::move(cands);
    return doc;
  }

 private:
  std::vector<CandidateLosses> entries_;  // insertion order
};

// Ingests losses computed by any external inference stack. File aggregates
// are ignored; only the per-example losses count.
inline LossReport parse_loss_report(const nlohmann::ordered_json& doc, const std::string& where) {
  if (!doc.is_object() || !doc.contains("candidates") || !doc["candidates"].is_object() ||
      doc["candidates"].empty()) {
    throw validation_error(where + ": schema violation: expected a non-empty \"candidates\" object");
  }
  LossReport report;
  for (const auto& [id, entry] : doc["candidates"].items()) {
    if (!entry.is_object() || !entry.contains("losses") || !entry["losses"].is_array() ||
        entry["losses"].empty()) {
      throw validation_error(where + ": schema violation: candidate \"" + id +
                             "\" needs a non-empty \"losses\" array");
    }
    std::vector<double> losses;
    for (const auto& v : entry["losses"]) {
      if (!v.is_number()) {
        throw validation_error(where + ": schema violation: losses must be numbers");
      }
      losses.push_back(v.get<double>());
    }
    report.add(id, std::move(losses));
  }
  return report;
}

inline LossReport load_external_losses(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open \"" + path.string() + "\"");
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(path.string() + ": schema violation: " + e.what());
  }
  return parse_loss_report(doc, path.string());
}

}  // namespace cocktail
