#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "missvae/dataset.hpp"
#include "missvae/mixture.hpp"
#include "missvae/quadrature.hpp"
#include "missvae/vae.hpp"

namespace missvae {

/// K completions per data point; completion k of row i is column i*K + k.
/// Observed positions always equal the dataset values.
struct ImputationStore {
  Index rows = 0;
  Index k = 1;
  Eigen::MatrixXd completions;
  /// Latent state of each chain from the last sampler step.
  Eigen::MatrixXd chain_z;
  /// Per row: whether chain_z holds a sampler state.
  std::vector<char> chain_valid;
  bool epoch_initialized = false;

  Index column(Index row, Index chain) const { return row * k + chain; }
  auto completion(Index row, Index chain) const { return completions.col(column(row, chain)); }
  /// Throws NumericError if an observed entry drifted or an entry is non-finite.
  void check_invariant(const IncompleteDataset& data) const;
};

/// Missing entries drawn uniformly from the observed values of their dimension.
ImputationStore init_imputations(const IncompleteDataset& data, Index k, Index latent_dim, Rng& rng);

/// Encoder input for completed data: zero_mask_encode with an all-ones mask.
Eigen::MatrixXd completed_encoder_input(const Eigen::Ref<const Eigen::MatrixXd>& completions);

/// One pseudo-Gibbs sweep over the chains of `rows`: z ~ q(z | x), x_mis ~ p(x_mis | z).
void pseudo_gibbs_step(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data, ImputationStore& store,
                       const std::vector<Index>& rows, Rng& rng, PassCounter* counter = nullptr);

/// log acceptance ratio of moving from z_t to z_star for a completed row.
double mwg_log_acceptance(const VAEModel& model, const MixtureParams& psi, const Eigen::Ref<const Eigen::VectorXd>& x,
                          const Eigen::Ref<const Eigen::VectorXd>& z_star, const Eigen::Ref<const Eigen::VectorXd>& z_t);

/// Metropolis-within-Gibbs sweep with proposal q(z | x). Chains without a
/// stored z accept the proposal. Returns the acceptance rate over the sweep.
double mwg_step(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data, ImputationStore& store,
                const std::vector<Index>& rows, Rng& rng, PassCounter* counter = nullptr);

/// Systematic resampling; returns indices into `weights` (normalized or not).
std::vector<Index> systematic_resample(const Eigen::Ref<const Eigen::VectorXd>& weights, Index n, Rng& rng);

/// Self-normalized LAIR weights for one row, exposed for testing. `prev_z`
/// holds the chain latents the current completions were drawn from; when
/// empty, the proposal density of the completions is treated as constant.
Eigen::VectorXd lair_weights(const VAEModel& model, const Eigen::Ref<const Eigen::MatrixXd>& completions,
                             const Eigen::Ref<const Mask>& mask, const Eigen::Ref<const Eigen::MatrixXd>& z,
                             const Eigen::Ref<const Eigen::VectorXd>& log_q, const Eigen::Ref<const Eigen::MatrixXd>& prev_z);

/// Weights for the latent proposal: p(x_obs, z^k) over the equal mixture of
/// the K chain encoders evaluated at z^k. `chain_q` holds one encoder output
/// per chain.
Eigen::VectorXd lair_latent_weights(const VAEModel& model, const std::vector<MixtureParams>& chain_q,
                                    const Eigen::Ref<const Eigen::VectorXd>& values, const Eigen::Ref<const Mask>& mask,
                                    const Eigen::Ref<const Eigen::MatrixXd>& z);

/// Importance weighting used by lair_step.
///  - imputation: pairs (x_mis^k, z^k) weighted by p(x^k, z^k) / (q(z^k | x^k) f(x_mis^k))
///    with f the equal mixture of the decoder conditionals at the previous chain latents.
///  - latent: z^k weighted by p(x_obs, z^k) / ((1/K) sum_j q(z^k | x^j)), so the
///    target is p(z | x_obs) and no density over x_mis is needed.
enum class LairProposal { imputation, latent };

/// Latent-adaptive importance resampling: per row, z^k ~ q(z | x^k), weights
/// per `proposal`, systematic resampling of the K chains, then
/// x_mis^k ~ p(x_mis | z^k). `extra_repeats` (R) repeats the cycle. K = 1
/// reduces to pseudo-Gibbs.
void lair_step(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data, ImputationStore& store,
               const std::vector<Index>& rows, Index extra_repeats, Rng& rng, PassCounter* counter = nullptr,
               LairProposal proposal = LairProposal::imputation);

struct RejectionResult {
  /// Completed rows, one column per accepted draw.
  Eigen::MatrixXd draws;
  long long proposals = 0;
  double acceptance_rate() const { return proposals ? static_cast<double>(draws.cols()) / static_cast<double>(proposals) : 0.0; }
};

/// Exact draws from p(x_mis | x_obs) by rejection from p(z) p(x_mis | z) with
/// bound M = 1.1 * max over the grid of p(x_obs | z). `m_inflation`
/// multiplies M further.
RejectionResult rejection_sample_conditional(const VAEModel& model, const GridEvaluator& grid, const RowRef& row, Index n,
                                             Rng& rng, long long proposal_budget = 100'000'000LL, double m_inflation = 1.0);

enum class DemissMode { split, cvi, mvb };
std::string to_string(DemissMode m);
DemissMode demiss_mode_from_string(const std::string& s);

struct DemissObjectives {
  double theta_objective = 0.0;
  double phi_objective = 0.0;
};

/// Both objectives for one row from a single encoder/decoder pass over its
/// K completions (D x K) with L latent samples each.
DemissObjectives demiss_objectives(const VAEModel& model, const Encoder& enc, const RowRef& row,
                                   const Eigen::Ref<const Eigen::MatrixXd>& completions, Index latents, Rng& rng);
/// Same quantities computed by separate passes (same random draws given the same rng state).
double demiss_theta_objective(const VAEModel& model, const Encoder& enc, const RowRef& row,
                              const Eigen::Ref<const Eigen::MatrixXd>& completions, Index latents, Rng& rng);
double demiss_phi_objective(const VAEModel& model, const Encoder& enc, const RowRef& row,
                            const Eigen::Ref<const Eigen::MatrixXd>& completions, Index latents, Rng& rng);

struct DemissGradient {
  double theta_objective = 0.0;
  double phi_objective = 0.0;
  Eigen::VectorXd grad_theta;
  Eigen::VectorXd grad_phi;
};

/// Minibatch gradients. split: theta from the observed-data objective, phi
/// from the completed-data objective. cvi: both from the observed-data
/// objective, with the imputation-mixture entropy for phi. mvb: both from the
/// completed-data objective.
DemissGradient demiss_gradient(const VAEModel& model, const Encoder& enc, const IncompleteDataset& data,
                               const ImputationStore& store, const std::vector<Index>& rows, Index latents, DemissMode mode,
                               bool stl, Rng& rng, PassCounter* counter = nullptr);

/// Complete-data VAE step on the same completed rows (K per data point, L
/// latents each); the cost reference for demiss_gradient.
DemissGradient complete_data_gradient(const VAEModel& model, const Encoder& enc, const ImputationStore& store,
                                      const std::vector<Index>& rows, Index latents, bool stl, Rng& rng,
                                      PassCounter* counter = nullptr);

} // namespace missvae
