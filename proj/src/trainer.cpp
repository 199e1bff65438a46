#include "missvae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "missvae/errors.hpp"
#include "missvae/eval.hpp"
#include "missvae/objectives.hpp"
#include "missvae/quadrature.hpp"

namespace missvae {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEvalSeedSalt = 0x9e3779b97f4a7c15ULL;

bool all_finite(const Eigen::VectorXd& v) { return v.size() == 0 || v.allFinite(); }

std::string dump_lines(const std::vector<nlohmann::json>& records) {
  std::string out;
  for (const auto& r : records) out += r.dump() + "\n";
  return out;
}

std::vector<nlohmann::json> read_lines(const fs::path& path) {
  std::vector<nlohmann::json> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

OptimizerConfig schedule_for(const ExperimentConfig& c, Index rows) {
  OptimizerConfig o = c.optimizer;
  const Index per_epoch = (rows + c.batch_size - 1) / c.batch_size;
  o.total_steps = static_cast<long long>(per_epoch) * static_cast<long long>(c.epochs);
  return o;
}

} // namespace

nlohmann::json metric_record(const ExperimentConfig& config, Index epoch, const std::string& metric, double value) {
  nlohmann::json r;
  r["run_id"] = config.run_id;
  r["epoch"] = epoch;
  r["metric"] = metric;
  r["value"] = std::isfinite(value) ? nlohmann::json(value) : nlohmann::json(nullptr);
  r["budget"] = config.sample_budget();
  r["config_hash"] = config.hash();
  return r;
}

VAEModel make_model(const ExperimentConfig& config, Index data_dim) {
  return VAEModel(data_dim, config.arch.latent_dim, config.arch.decoder, config.arch.hidden, config.arch.blocks);
}

Encoder make_encoder(const ExperimentConfig& config, Index data_dim) {
  const Index hidden = config.arch.encoder_hidden < 0 ? config.arch.hidden : config.arch.encoder_hidden;
  const Index blocks = config.arch.encoder_blocks < 0 ? config.arch.blocks : config.arch.encoder_blocks;
  const Index components = config.method == Method::demissvae ? 1 : config.budget.k;
  return Encoder(data_dim, config.arch.latent_dim, components, hidden, blocks);
}

Trainer::Trainer(ExperimentConfig config, IncompleteDataset data, TrainOptions options)
    : config_(std::move(config)), data_(std::move(data)), options_(std::move(options)), rng_(config_.seed),
      best_objective_(-std::numeric_limits<double>::infinity()) {
  config_.validate();
  data_.validate(false);
  if (data_.size() < 1) throw ConfigError("training data is empty");
  model_ = make_model(config_, data_.dim());
  enc_ = make_encoder(config_, data_.dim());
  model_.init(rng_);
  enc_.init(rng_, config_.arch.component_init_scale);
  if (config_.method == Method::demissvae) store_ = init_imputations(data_, config_.budget.k, config_.arch.latent_dim, rng_);
  const OptimizerConfig o = schedule_for(config_, data_.size());
  opt_theta_ = AmsGrad(model_.theta.size(), o);
  opt_phi_ = AmsGrad(enc_.phi.size(), o);

  if (!options_.run_dir.empty()) {
    fs::create_directories(options_.run_dir);
    const fs::path ckpt = options_.run_dir / "checkpoint.bin";
    if (options_.resume && fs::exists(ckpt)) {
      restore(load_checkpoint(ckpt));
      std::vector<nlohmann::json> kept;
      for (auto& r : read_lines(options_.run_dir / "metrics.jsonl"))
        if (r.at("epoch").get<Index>() < epoch_) kept.push_back(std::move(r));
      history_ = kept;
      write_file_atomic(options_.run_dir / "metrics.jsonl", dump_lines(kept));
    } else {
      write_file_atomic(options_.run_dir / "metrics.jsonl", "");
    }
    nlohmann::json cfg = config_.to_json();
    cfg["config_hash"] = config_.hash();
    write_file_atomic(options_.run_dir / "config.json", cfg.dump(2) + "\n");
  }
}

std::vector<nlohmann::json> Trainer::run_epoch() {
  const Index n = data_.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng_.engine());

  const bool demiss = config_.method == Method::demissvae;
  const ObjectiveSpec spec = config_.objective();
  double objective_sum = 0.0, phi_sum = 0.0, norm_sum = 0.0, accept_sum = 0.0;
  Index batches = 0, accept_count = 0;

  try {
    for (Index start = 0; start < n; start += config_.batch_size) {
      const Index stop = std::min(n, start + config_.batch_size);
      const std::vector<Index> rows(order.begin() + start, order.begin() + stop);
      Eigen::VectorXd grad_theta, grad_phi;
      double objective = 0.0;
      if (demiss) {
        ImputationStore& store = *store_;
        if (options_.imputer) {
          options_.imputer(store, rows, rng_);
        } else if (epoch_ > 0) {
          for (Index it = 0; it < config_.budget.sampler_iterations; ++it) {
            switch (config_.budget.sampler) {
              case SamplerKind::pseudo_gibbs:
                pseudo_gibbs_step(model_, enc_, data_, store, rows, rng_);
                break;
              case SamplerKind::mwg:
                accept_sum += mwg_step(model_, enc_, data_, store, rows, rng_);
                ++accept_count;
                break;
              case SamplerKind::lair:
                lair_step(model_, enc_, data_, store, rows, config_.budget.r, rng_, nullptr, config_.budget.lair_proposal);
                break;
              case SamplerKind::none:
                break;
            }
            ++sampler_sweeps_;
          }
        }
        DemissGradient g = demiss_gradient(model_, enc_, data_, store, rows, config_.budget.l, config_.demiss_mode,
                                           config_.stl, rng_);
        objective = g.theta_objective;
        phi_sum += g.phi_objective * static_cast<double>(rows.size());
        grad_theta = std::move(g.grad_theta);
        grad_phi = std::move(g.grad_phi);
      } else {
        ObjectiveGradient g = objective_gradient(model_, enc_, data_, rows, spec, rng_);
        objective = g.value;
        grad_theta = std::move(g.grad_theta);
        grad_phi = std::move(g.grad_phi);
      }
      if (!std::isfinite(objective) || !all_finite(grad_theta) || !all_finite(grad_phi))
        throw DivergenceError("non-finite objective or gradient at epoch " + std::to_string(epoch_) + ", batch " +
                              std::to_string(batches));
      double norm = 0.0;
      if (config_.optimizer.clip_norm > 0.0)
        norm = clip_global_norm({&grad_theta, &grad_phi}, config_.optimizer.clip_norm);
      else
        norm = std::sqrt(grad_theta.squaredNorm() + grad_phi.squaredNorm());
      opt_theta_.step(model_.theta, grad_theta);
      opt_phi_.step(enc_.phi, grad_phi);
      if (!model_.theta.allFinite() || !enc_.phi.allFinite())
        throw DivergenceError("non-finite parameters at epoch " + std::to_string(epoch_));
      objective_sum += objective * static_cast<double>(rows.size());
      norm_sum += norm;
      ++batches;
    }
  } catch (const NumericError& e) {
    throw DivergenceError(std::string("numeric failure at epoch ") + std::to_string(epoch_) + ": " + e.what());
  }

  std::vector<nlohmann::json> records;
  const double train_objective = objective_sum / static_cast<double>(n);
  records.push_back(metric_record(config_, epoch_, "train_objective", train_objective));
  if (demiss) records.push_back(metric_record(config_, epoch_, "phi_objective", phi_sum / static_cast<double>(n)));
  if (accept_count > 0)
    records.push_back(metric_record(config_, epoch_, "sampler_acceptance", accept_sum / static_cast<double>(accept_count)));
  records.push_back(metric_record(config_, epoch_, "grad_norm", norm_sum / static_cast<double>(batches)));

  if (train_objective > best_objective_) {
    best_objective_ = train_objective;
    stale_epochs_ = 0;
  } else {
    ++stale_epochs_;
  }
  if (config_.early_stopping && stale_epochs_ >= config_.early_stopping_patience) stopped_early_ = true;
  ++epoch_;
  if (store_) store_->epoch_initialized = true;
  history_.insert(history_.end(), records.begin(), records.end());
  write_epoch_outputs(records);
  return records;
}

void Trainer::write_epoch_outputs(const std::vector<nlohmann::json>& records) {
  if (options_.run_dir.empty()) return;
  {
    std::ofstream out(options_.run_dir / "metrics.jsonl", std::ios::app);
    out << dump_lines(records);
  }
  save_checkpoint(checkpoint(), options_.run_dir / "checkpoint.bin");
}

void Trainer::run() {
  const Index target = options_.stop_after >= 0 ? std::min(options_.stop_after, config_.epochs) : config_.epochs;
  while (epoch_ < target && !stopped_early_) run_epoch();
  if (!options_.run_dir.empty() && (epoch_ >= config_.epochs || stopped_early_)) {
    Checkpoint final_model;
    final_model.header = checkpoint().header;
    final_model.put("theta", model_.theta);
    final_model.put("phi", enc_.phi);
    save_checkpoint(final_model, options_.run_dir / "model.bin");
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.header["config"] = config_.to_json();
  c.header["config_hash"] = config_.hash();
  c.header["epochs_completed"] = epoch_;
  c.header["rng"] = rng_.state();
  c.header["optimizer_steps"] = {opt_theta_.steps(), opt_phi_.steps()};
  c.header["sampler_sweeps"] = sampler_sweeps_;
  c.header["best_objective"] = std::isfinite(best_objective_) ? nlohmann::json(best_objective_) : nlohmann::json(nullptr);
  c.header["stale_epochs"] = stale_epochs_;
  c.header["stopped_early"] = stopped_early_;
  c.header["data_rows"] = data_.size();
  c.header["data_dim"] = data_.dim();
  c.put("theta", model_.theta);
  c.put("phi", enc_.phi);
  c.put("theta_m", opt_theta_.m());
  c.put("theta_v", opt_theta_.v());
  c.put("theta_vmax", opt_theta_.v_max());
  c.put("phi_m", opt_phi_.m());
  c.put("phi_v", opt_phi_.v());
  c.put("phi_vmax", opt_phi_.v_max());
  if (store_) {
    c.header["store"] = {{"rows", store_->rows}, {"k", store_->k}, {"epoch_initialized", store_->epoch_initialized}};
    c.put("completions", store_->completions);
    c.put("chain_z", store_->chain_z);
    Eigen::VectorXd valid(static_cast<Index>(store_->chain_valid.size()));
    for (std::size_t i = 0; i < store_->chain_valid.size(); ++i) valid[static_cast<Index>(i)] = store_->chain_valid[i] ? 1.0 : 0.0;
    c.put("chain_valid", valid);
  }
  return c;
}

void Trainer::restore(const Checkpoint& c) {
  if (c.header.at("config_hash").get<std::string>() != config_.hash())
    throw ConfigError("checkpoint was written by a different config (hash " + c.header.at("config_hash").get<std::string>() +
                      ", expected " + config_.hash() + ")");
  if (c.header.at("data_rows").get<Index>() != data_.size()) throw ConfigError("checkpoint data size does not match");
  epoch_ = c.header.at("epochs_completed").get<Index>();
  rng_.set_state(c.header.at("rng").get<std::string>());
  sampler_sweeps_ = c.header.at("sampler_sweeps").get<long long>();
  best_objective_ = c.header.at("best_objective").is_null() ? -std::numeric_limits<double>::infinity()
                                                            : c.header.at("best_objective").get<double>();
  stale_epochs_ = c.header.at("stale_epochs").get<Index>();
  stopped_early_ = c.header.at("stopped_early").get<bool>();
  model_.theta = c.get("theta");
  enc_.phi = c.get("phi");
  opt_theta_.m() = c.get("theta_m");
  opt_theta_.v() = c.get("theta_v");
  opt_theta_.v_max() = c.get("theta_vmax");
  opt_phi_.m() = c.get("phi_m");
  opt_phi_.v() = c.get("phi_v");
  opt_phi_.v_max() = c.get("phi_vmax");
  opt_theta_.set_steps(c.header.at("optimizer_steps").at(0).get<long long>());
  opt_phi_.set_steps(c.header.at("optimizer_steps").at(1).get<long long>());
  if (store_) {
    store_->completions = c.get("completions");
    store_->chain_z = c.get("chain_z");
    const Eigen::MatrixXd& valid = c.get("chain_valid");
    for (Index i = 0; i < valid.size(); ++i) store_->chain_valid[static_cast<std::size_t>(i)] = valid(i) != 0.0;
    store_->epoch_initialized = c.header.at("store").at("epoch_initialized").get<bool>();
  }
}

IncompleteDataset load_training_data(const ExperimentConfig& config) {
  if (config.train_data.empty()) throw ConfigError("config has no training data reference");
  DatasetBundle bundle = load_bundle(config.train_data);
  IncompleteDataset data = std::move(bundle.data);
  if (config.max_train_rows > 0 && config.max_train_rows < data.size()) {
    data.values = data.values.leftCols(config.max_train_rows).eval();
    data.mask = data.mask.leftCols(config.max_train_rows).eval();
  }
  return data;
}

void train(const ExperimentConfig& config, const fs::path& run_dir, bool resume) {
  TrainOptions opts;
  opts.run_dir = run_dir;
  opts.resume = resume;
  Trainer trainer(config, load_training_data(config), opts);
  trainer.run();
}

LoadedRun load_run(const fs::path& run_dir) {
  fs::path path = run_dir / "model.bin";
  if (!fs::exists(path)) path = run_dir / "checkpoint.bin";
  if (!fs::exists(path)) throw IngestionError("no model.bin or checkpoint.bin in " + run_dir.string());
  const Checkpoint c = load_checkpoint(path);
  LoadedRun run;
  run.config = ExperimentConfig::from_json(c.header.at("config"));
  run.epochs_completed = c.header.at("epochs_completed").get<Index>();
  const Eigen::MatrixXd& theta = c.get("theta");
  const Eigen::MatrixXd& phi = c.get("phi");
  const Index dim = c.header.at("data_dim").get<Index>();
  run.model = make_model(run.config, dim);
  run.encoder = make_encoder(run.config, dim);
  if (run.model.theta.size() != theta.size() || run.encoder.phi.size() != phi.size())
    throw IngestionError("checkpoint parameter sizes do not match its config");
  run.model.theta = theta;
  run.encoder.phi = phi;
  return run;
}

EvalReport evaluate_model(const ExperimentConfig& config, const VAEModel& model, const Encoder& enc, const DatasetBundle& test,
                          const EvalConfig& spec, Index epoch) {
  EvalReport report;
  Rng rng(config.seed ^ kEvalSeedSalt);
  const IncompleteDataset& data = test.data;
  QuadratureGrid grid{-spec.grid_bound, spec.grid_bound, spec.grid_resolution, model.latent_dim};

  auto emit = [&](const std::string& metric, double value) {
    nlohmann::json r = metric_record(config, epoch, metric, value);
    r["split"] = "test";
    report.records.push_back(r);
    report.summary[metric] = r["value"];
  };

  Encoder tuned = enc;
  bool tuned_ready = false;
  auto tuned_encoder = [&]() -> const Encoder& {
    if (!tuned_ready && spec.finetune_steps > 0) {
      ObjectiveSpec fs;
      fs.bound = Bound::iwelbo;
      fs.budget = SampleBudget{1, tuned.components, std::max<Index>(config.sample_budget(), 1), SamplingScheme::ancestral};
      fs.stl = true;
      tuned = encoder_finetune(model, enc, data, spec.finetune_steps, config.batch_size, fs, config.optimizer, rng);
    }
    tuned_ready = true;
    return tuned;
  };
  auto run_iwelbo = [&](const std::string& name) {
    BoundEstimate b = iwelbo_eval(model, tuned_encoder(), data, spec.iwelbo_samples, rng, spec.iwelbo_chunk);
    emit(name, b.value);
    const Eigen::VectorXd& v = b.per_datapoint;
    const double sd = v.size() > 1 ? std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1)) : 0.0;
    emit(name + "_stderr", sd / std::sqrt(static_cast<double>(std::max<Index>(v.size(), 1))));
  };

  for (const std::string& metric : spec.metrics) {
    if (metric == "grid_loglik") {
      if (model.latent_dim > 2) {
        if (!spec.substitute_iwelbo)
          throw UnsupportedError("grid_loglik needs latent dim <= 2, got " + std::to_string(model.latent_dim));
        run_iwelbo("iwelbo");
        report.summary["grid_loglik_substituted"] = "iwelbo";
        continue;
      }
      DatasetGridLoglik g = grid_loglik_dataset(model, data, grid, spec.check_refinement);
      emit("grid_loglik", g.mean);
      if (spec.check_refinement) {
        emit("grid_refinement_delta", g.refinement_delta);
        report.summary["grid_unstable"] = g.unstable;
      }
    } else if (metric == "iwelbo") {
      run_iwelbo("iwelbo");
    } else if (metric == "mi_gap") {
      if (!test.complete) throw ConfigError("mi_gap needs the fully observed test values");
      emit("mi_gap", mi_posterior_gap(model, *test.complete, data.mask, grid));
    } else {
      throw ConfigError("unknown evaluation metric '" + metric + "'");
    }
  }
  return report;
}

EvalReport evaluate(const fs::path& run_dir, const std::optional<EvalConfig>& spec, const std::string& test_path) {
  LoadedRun run = load_run(run_dir);
  const EvalConfig& es = spec ? *spec : run.config.eval;
  const std::string path = test_path.empty() ? run.config.test_data : test_path;
  EvalReport report;
  if (!es.metrics.empty()) {
    if (path.empty()) throw ConfigError("no test data given");
    const DatasetBundle test = load_bundle(path);
    if (test.data.dim() != run.model.data_dim) throw ConfigError("test data dimension does not match the model");
    report = evaluate_model(run.config, run.model, run.encoder, test, es, run.epochs_completed);

    if (es.posterior_grid_rows > 0 && run.model.latent_dim <= 2) {
      const QuadratureGrid grid{-es.grid_bound, es.grid_bound, es.grid_resolution, run.model.latent_dim};
      const GridEvaluator ge(run.model, grid);
      fs::create_directories(run_dir / "grids");
      const Index rows = std::min(es.posterior_grid_rows, test.data.size());
      for (Index i = 0; i < rows; ++i) {
        const RowRef row = test.data.row(i);
        std::ostringstream csv;
        csv.precision(17);
        const Eigen::MatrixXd& nodes = ge.nodes();
        std::vector<std::pair<std::string, Eigen::VectorXd>> fields;
        if (test.complete)
          fields.emplace_back("model_complete", posterior_grid(ge, run.encoder, test.complete->col(i),
                                                               Mask::Ones(test.data.dim()), PosteriorKind::model_complete));
        fields.emplace_back("model_incomplete",
                            posterior_grid(ge, run.encoder, row.values, row.mask, PosteriorKind::model_incomplete));
        if (run.config.method != Method::demissvae)
          fields.emplace_back("variational", posterior_grid(ge, run.encoder, row.values, row.mask, PosteriorKind::variational));
        for (Index d = 0; d < nodes.rows(); ++d) csv << (d ? "," : "") << "z" << d + 1;
        for (const auto& [name, v] : fields) csv << "," << name;
        csv << "\n";
        for (Index g = 0; g < nodes.cols(); ++g) {
          for (Index d = 0; d < nodes.rows(); ++d) csv << (d ? "," : "") << nodes(d, g);
          for (const auto& [name, v] : fields) csv << "," << v[g];
          csv << "\n";
        }
        write_file_atomic(run_dir / "grids" / ("row_" + std::to_string(i) + ".csv"), csv.str());
      }
    }
  }
  report.summary["run_id"] = run.config.run_id;
  report.summary["method"] = to_string(run.config.method);
  report.summary["seed"] = run.config.seed;
  report.summary["budget"] = run.config.sample_budget();
  report.summary["epochs_completed"] = run.epochs_completed;
  report.summary["config_hash"] = run.config.hash();
  write_file_atomic(run_dir / "eval.jsonl", dump_lines(report.records));
  write_file_atomic(run_dir / "summary.json", report.summary.dump(2) + "\n");
  return report;
}

} // namespace missvae
