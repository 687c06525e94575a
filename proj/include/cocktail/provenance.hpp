#pragma once

// Every merged checkpoint gets a JSON sidecar recording exactly what was
// merged: mode, alpha, resolved per-candidate weights, content hashes of all
// inputs, solver losses when the weights came from a solver, and the tool
// version. Written next to the output as <output>.provenance.json.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cocktail/errors.hpp"
#include "cocktail/version.hpp"

namespace cocktail {

struct ProvenanceEntry {
  std::string id;         // candidate reference as given (usually a path)
  std::string hash;       // content hash of the input checkpoint
  double weight = 0.0;    // resolved w_i actually applied
  std::optional<double> loss;  // solver aggregate loss, when weights were solved
};

struct MergeProvenance {
  std::string mode;
  double alpha = 0.0;
  std::optional<std::string> target_id;
  std::optional<std::string> target_hash;
  std::vector<ProvenanceEntry> candidates;
  std::optional<double> tau;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json doc;
    doc["format_version"] = kFormatVersion;
    doc["version"] = kVersion;
    doc["mode"] = mode;
    doc["alpha"] = alpha;
    if (target_id) {
      doc["target"] = {{"id", *target_id}, {"hash", target_hash.value_or("")}};
    }
    nlohmann::ordered_json cands = nlohmann::ordered_json::array();
    for (const ProvenanceEntry& e : candidates) {
      nlohmann::ordered_json c;
      c["id"] = e.id;
      c["hash"] = e.hash;
      c["weight"] = e.weight;
      if (e.loss) c["loss"] = *e.loss;
      cands.push_back(std::move(c));
    }
    doc["candidates"] = std::move(cands);
    if (tau) doc["tau"] = *tau;
    return doc;
  }
};

inline std::filesystem::path provenance_path(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".provenance.json";
}

inline void write_provenance(const MergeProvenance& prov, const std::filesystem::path& checkpoint) {
  const std::filesystem::path path = provenance_path(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot create \"" + path.string() + "\"");
  out << prov.to_json().dump(2) << "\n";
  if (!out) throw io_error("write failure on \"" + path.string() + "\"");
}

}  // namespace cocktail
