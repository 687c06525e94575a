#pragma once

// A MergeRecipe is the complete description of one merge: which checkpoints,
// which mode, alpha, and the candidate weights. run_recipe() loads the
// inputs, dispatches to the right merge, writes the output checkpoint and its
// provenance sidecar.

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cocktail/checkpoint_io.hpp"
#include "cocktail/errors.hpp"
#include "cocktail/merge.hpp"
#include "cocktail/provenance.hpp"

namespace cocktail {

struct MergeRecipe {
  MergeMode mode = MergeMode::General;
  std::optional<std::string> target;   // checkpoint path; required unless NoFineTune
  std::vector<std::string> candidates; // checkpoint paths
  double alpha = kDefaultAlpha;
  std::vector<double> weights;         // same length as candidates
  // carried into provenance when the weights came from a solver
  std::map<std::string, double> solver_losses;
  std::optional<double> tau;

  void validate() const {
    detail::check_alpha(alpha);
    switch (mode) {
      case MergeMode::General:
        if (!target) throw validation_error("general mode requires a target model");
        if (candidates.empty()) {
          throw validation_error("general mode requires at least one candidate");
        }
        detail::check_weights(weights, candidates.size());
        break;
      case MergeMode::MonoSpecialist:
        if (!target) throw validation_error("mono mode requires a target model");
        if (candidates.size() != 1) {
          throw validation_error("mono mode takes exactly one candidate (the base model)");
        }
        if (!weights.empty() && (weights.size() != 1 || std::abs(weights[0] - 1.0) > 1e-12)) {
          throw validation_error("mono mode fixes the base weight at 1");
        }
        break;
      case MergeMode::NoFineTune:
        if (target) throw validation_error("zero-shot mode takes no target model");
        if (candidates.empty()) {
          throw validation_error("zero-shot mode requires at least one candidate");
        }
        detail::check_weights(weights, candidates.size());
        break;
    }
  }
};

inline MergeProvenance run_recipe(const MergeRecipe& recipe, const std::filesystem::path& out_path,
                                  const MergeOptions& opts = {}) {
  recipe.validate();

  std::optional<TensorMap> target;
  if (recipe.target) target = read_checkpoint(*recipe.target);
  std::vector<TensorMap> candidates;
  candidates.reserve(recipe.candidates.size());
  for (const std::string& path : recipe.candidates) candidates.push_back(read_checkpoint(path));
  std::vector<const TensorMap*> candidate_ptrs;
  for (const TensorMap& c : candidates) candidate_ptrs.push_back(&c);

  MergeProvenance prov;
  prov.mode = merge_mode_name(recipe.mode);
  prov.alpha = recipe.mode == MergeMode::NoFineTune ? 0.0 : recipe.alpha;
  prov.tau = recipe.tau;
  if (recipe.target) {
    prov.target_id = *recipe.target;
    prov.target_hash = target->content_hash_hex();
  }
  const std::vector<double> effective_weights =
      recipe.mode == MergeMode::MonoSpecialist ? std::vector<double>{1.0} : recipe.weights;
  for (std::size_t i = 0; i < recipe.candidates.size(); ++i) {
    ProvenanceEntry entry;
    entry.id = recipe.candidates[i];
    entry.hash = candidates[i].content_hash_hex();
    entry.weight = effective_weights[i];
    auto it = recipe.solver_losses.find(entry.id);
    if (it != recipe.solver_losses.end()) entry.loss = it->second;
    prov.candidates.push_back(std::move(entry));
  }

  switch (recipe.mode) {
    case MergeMode::General:
      cocktail_merge_to_file(*target, candidate_ptrs, recipe.weights, recipe.alpha, out_path,
                             opts);
      break;
    case MergeMode::MonoSpecialist:
      mono_specialist_merge_to_file(*target, candidates.front(), recipe.alpha, out_path, opts);
      break;
    case MergeMode::NoFineTune:
      zero_shot_merge_to_file(candidate_ptrs, recipe.weights, out_path, opts);
      break;
  }
  write_provenance(prov, out_path);
  return prov;
}

}  // namespace cocktail
