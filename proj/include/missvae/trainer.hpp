#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "missvae/checkpoint.hpp"
#include "missvae/config.hpp"
#include "missvae/dataset.hpp"
#include "missvae/demiss.hpp"
#include "missvae/mixture.hpp"
#include "missvae/optim.hpp"
#include "missvae/rng.hpp"
#include "missvae/vae.hpp"

namespace missvae {

/// Replaces the sampler step of a DeMissVAE iteration: fills the completions
/// of `rows` in the store.
using Imputer = std::function<void(ImputationStore&, const std::vector<Index>&, Rng&)>;

struct TrainOptions {
  /// Empty: train in memory without writing files.
  std::filesystem::path run_dir;
  bool resume = false;
  Imputer imputer;
  /// Stop once this many epochs have completed (negative: config epochs).
  Index stop_after = -1;
};

/// One metrics record: {run_id, epoch, metric, value, budget, config_hash}.
nlohmann::json metric_record(const ExperimentConfig& config, Index epoch, const std::string& metric, double value);

class Trainer {
public:
  Trainer(ExperimentConfig config, IncompleteDataset data, TrainOptions options = {});

  /// Trains until the configured epoch count (or stop_after). Throws
  /// DivergenceError on a non-finite objective; the last checkpoint on disk is
  /// the last completed epoch.
  void run();
  /// One pass over the training rows; returns the epoch's metric records.
  std::vector<nlohmann::json> run_epoch();

  Index epochs_completed() const { return epoch_; }
  const ExperimentConfig& config() const { return config_; }
  const IncompleteDataset& data() const { return data_; }
  const VAEModel& model() const { return model_; }
  const Encoder& encoder() const { return enc_; }
  VAEModel& model() { return model_; }
  Encoder& encoder() { return enc_; }
  const std::optional<ImputationStore>& store() const { return store_; }
  long long sampler_sweeps() const { return sampler_sweeps_; }
  const std::vector<nlohmann::json>& history() const { return history_; }

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ckpt);

private:
  void write_epoch_outputs(const std::vector<nlohmann::json>& records);

  ExperimentConfig config_;
  IncompleteDataset data_;
  TrainOptions options_;
  VAEModel model_;
  Encoder enc_;
  std::optional<ImputationStore> store_;
  AmsGrad opt_theta_;
  AmsGrad opt_phi_;
  Rng rng_;
  Index epoch_ = 0;
  long long sampler_sweeps_ = 0;
  double best_objective_;
  Index stale_epochs_ = 0;
  bool stopped_early_ = false;
  std::vector<nlohmann::json> history_;
};

/// Builds the decoder and encoder shapes for a config and data dimension.
VAEModel make_model(const ExperimentConfig& config, Index data_dim);
Encoder make_encoder(const ExperimentConfig& config, Index data_dim);

/// Loads the training data named by the config (bundle directory), applying max_train_rows.
IncompleteDataset load_training_data(const ExperimentConfig& config);

/// Trains from the config's data reference into `run_dir`.
void train(const ExperimentConfig& config, const std::filesystem::path& run_dir, bool resume = false);

struct LoadedRun {
  ExperimentConfig config;
  VAEModel model;
  Encoder encoder;
  Index epochs_completed = 0;
};
/// Reads model.bin, or checkpoint.bin when training did not finish.
LoadedRun load_run(const std::filesystem::path& run_dir);

struct EvalReport {
  std::vector<nlohmann::json> records;
  nlohmann::json summary = nlohmann::json::object();
};

/// Runs the requested metrics on `test`. Unknown metrics raise ConfigError;
/// grid_loglik on latent dims above 2 raises UnsupportedError unless IWELBO
/// substitution is enabled.
EvalReport evaluate_model(const ExperimentConfig& config, const VAEModel& model, const Encoder& enc,
                          const DatasetBundle& test, const EvalConfig& spec, Index epoch = -1);

/// Loads the run, evaluates on `test_path` (default: the config's test data)
/// and writes eval.jsonl and summary.json into the run directory.
EvalReport evaluate(const std::filesystem::path& run_dir, const std::optional<EvalConfig>& spec = std::nullopt,
                    const std::string& test_path = "");

} // namespace missvae
