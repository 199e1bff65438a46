#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "missvae/demiss.hpp"
#include "missvae/objectives.hpp"
#include "missvae/optim.hpp"
#include "missvae/vae.hpp"

namespace missvae {

enum class Method { mvae, missvae, misssvae, miwae, missiwae, misssiwae, demissvae };
enum class SamplerKind { none, pseudo_gibbs, mwg, lair };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
std::string to_string(SamplerKind k);
SamplerKind sampler_from_string(const std::string& s);
std::string to_string(LairProposal p);
LairProposal lair_proposal_from_string(const std::string& s);

struct BudgetConfig {
  Index z = 1;
  Index k = 1;
  Index i = 1;
  /// Latent samples per imputation (DeMissVAE).
  Index l = 1;
  SamplerKind sampler = SamplerKind::none;
  Index sampler_iterations = 1;
  /// Extra LAIR repeats.
  Index r = 0;
  LairProposal lair_proposal = LairProposal::imputation;
};

struct ArchitectureConfig {
  Index latent_dim = 2;
  Index hidden = 200;
  Index blocks = 3;
  /// Encoder residual stream width and depth; negative means "same as the decoder".
  Index encoder_hidden = -1;
  Index encoder_blocks = -1;
  DecoderFamily decoder = DecoderFamily::gaussian;
  double component_init_scale = 0.5;
};

struct EvalConfig {
  std::vector<std::string> metrics{"grid_loglik"};
  Index iwelbo_samples = 1000;
  Index iwelbo_chunk = 1000;
  Index grid_resolution = 256;
  double grid_bound = 6.0;
  bool check_refinement = false;
  Index finetune_steps = 0;
  /// Substitute IWELBO when grid evaluation is unsupported.
  bool substitute_iwelbo = true;
  /// Number of test rows for which posterior density grids are written.
  Index posterior_grid_rows = 0;
};

struct ExperimentConfig {
  std::string run_id;
  Method method = Method::mvae;
  BudgetConfig budget;
  /// Use the per-component (looser) stratified importance-weighted bound.
  bool loose = false;
  DemissMode demiss_mode = DemissMode::split;
  bool stl = true;
  ArchitectureConfig arch;
  OptimizerConfig optimizer;
  Index epochs = 500;
  Index batch_size = 256;
  std::uint64_t seed = 0;
  std::string train_data;
  std::string test_data;
  EvalConfig eval;
  bool early_stopping = false;
  Index early_stopping_patience = 20;
  /// Optional cap on the number of training rows used (0 = all).
  Index max_train_rows = 0;

  /// Throws ConfigError on any combination outside the method matrix.
  void validate() const;
  /// Variational samples per data point per iteration.
  Index sample_budget() const;
  ObjectiveSpec objective() const;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& doc);
  /// FNV-1a 64 of the canonical JSON form, as 16 hex digits.
  std::string hash() const;
};

ExperimentConfig load_config(const std::string& path);

/// Refuses compared runs whose per-datapoint sample budgets differ, unless overridden.
void check_fairness(const std::vector<ExperimentConfig>& configs, bool allow_mismatch = false);

std::uint64_t fnv1a64(const std::string& bytes);

} // namespace missvae
