#include "missvae/control_study.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include "missvae/checkpoint.hpp"
#include "missvae/errors.hpp"
#include "missvae/eval.hpp"

namespace missvae {

namespace {

std::vector<Index> missing_dims(const RowRef& row) {
  std::vector<Index> dims;
  for (Index d = 0; d < row.mask.size(); ++d)
    if (!row.mask[d]) dims.push_back(d);
  return dims;
}

double draw_1d(const MoGParams& m, double shrink, Rng& rng) {
  std::vector<double> w(m.weights.data(), m.weights.data() + m.weights.size());
  const Index c = rng.categorical(w);
  const double mean = m.means(0, c) * (1.0 - shrink);
  const double var = m.covariances[static_cast<std::size_t>(c)](0, 0) * (1.0 - shrink) + shrink;
  return mean + std::sqrt(var) * rng.normal();
}

} // namespace

ImputationOracle::ImputationOracle(MoGParams truth, double alpha, double beta)
    : truth_(std::move(truth)), alpha_(alpha), beta_(beta) {
  truth_.validate();
  if (!(alpha >= 0.0 && alpha <= 2.0)) throw ParameterError("oracle alpha must lie in [0, 2]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("oracle beta must lie in [0, 1]");
  for (Index d = 0; d < truth_.dim(); ++d) marginals_.push_back(mog_marginal(truth_, {d}));
}

MoGParams ImputationOracle::exact(const RowRef& row) const { return mog_conditional(truth_, row.values, row.mask); }

MoGParams ImputationOracle::distribution(const RowRef& row) const {
  MoGParams cond = exact(row);
  if (beta_ > 0.0) cond = oracle_oversample(cond, beta_);
  if (alpha_ == 0.0) return cond;
  return oracle_widen(cond, product_of_marginals(truth_, missing_dims(row)), alpha_);
}

void ImputationOracle::sample(const RowRef& row, Eigen::Ref<Eigen::VectorXd> completion, Rng& rng) const {
  const std::vector<Index> mis = missing_dims(row);
  if (mis.empty()) return;
  const bool widened = alpha_ > 1.0 || (alpha_ > 0.0 && rng.uniform() < alpha_);
  if (widened) {
    const double shrink = alpha_ > 1.0 ? alpha_ - 1.0 : 0.0;
    for (Index d : mis) completion[d] = draw_1d(marginals_[static_cast<std::size_t>(d)], shrink, rng);
    return;
  }
  MoGParams cond = exact(row);
  if (beta_ > 0.0) cond = oracle_oversample(cond, beta_);
  const Eigen::MatrixXd x = mog_sample(cond, 1, rng);
  for (std::size_t j = 0; j < mis.size(); ++j) completion[mis[j]] = x(static_cast<Index>(j), 0);
}

Imputer ImputationOracle::imputer(const IncompleteDataset& data) const {
  auto cache = std::make_shared<std::vector<std::optional<MoGParams>>>(static_cast<std::size_t>(data.size()));
  const ImputationOracle* self = this;
  const IncompleteDataset* d = &data;
  return [self, d, cache](ImputationStore& store, const std::vector<Index>& rows, Rng& rng) {
    for (Index i : rows) {
      const RowRef row = d->row(i);
      const std::vector<Index> mis = missing_dims(row);
      if (mis.empty()) continue;
      auto& slot = (*cache)[static_cast<std::size_t>(i)];
      for (Index k = 0; k < store.k; ++k) {
        auto col = store.completions.col(store.column(i, k));
        const bool widened = self->alpha_ > 1.0 || (self->alpha_ > 0.0 && rng.uniform() < self->alpha_);
        if (widened) {
          const double shrink = self->alpha_ > 1.0 ? self->alpha_ - 1.0 : 0.0;
          for (Index dd : mis) col[dd] = draw_1d(self->marginals_[static_cast<std::size_t>(dd)], shrink, rng);
          continue;
        }
        if (!slot) {
          MoGParams cond = self->exact(row);
          if (self->beta_ > 0.0) cond = oracle_oversample(cond, self->beta_);
          slot = std::move(cond);
        }
        const Eigen::MatrixXd x = mog_sample(*slot, 1, rng);
        for (std::size_t j = 0; j < mis.size(); ++j) col[mis[j]] = x(static_cast<Index>(j), 0);
      }
      store.chain_valid[static_cast<std::size_t>(i)] = 0;
    }
  };
}

double oracle_js_coordinate(const ImputationOracle& oracle, const IncompleteDataset& data, Index rows, Index resolution) {
  if (oracle.alpha() == 0.0 && oracle.beta() == 0.0) return 0.0;
  double sum = 0.0;
  Index used = 0;
  for (Index i = 0; i < data.size() && used < rows; ++i) {
    const RowRef row = data.row(i);
    const Index nmis = row.mask.size() - row.mask.count();
    if (nmis < 1 || nmis > 2) continue;
    sum += js_divergence_mog(oracle.exact(row), oracle.distribution(row), resolution);
    ++used;
  }
  if (used == 0) throw ParameterError("no rows with one or two missing dims for the JS coordinate");
  return sum / static_cast<double>(used);
}

nlohmann::json ControlStudyRow::to_json() const {
  return {{"method", method},
          {"sweep", sweep},
          {"alpha", alpha},
          {"beta", beta},
          {"seed", seed},
          {"js", js ? nlohmann::json(*js) : nlohmann::json(nullptr)},
          {"grid_loglik", grid_loglik}};
}

ControlStudyConfig ControlStudyConfig::from_json(const nlohmann::json& doc) {
  try {
    ControlStudyConfig c;
    c.base = ExperimentConfig::from_json(doc.at("base"));
    if (c.base.method != Method::demissvae) throw ConfigError("control study base config must be demissvae");
    if (c.base.arch.latent_dim != 2) throw ConfigError("control study needs a 2D latent space");
    c.truth_path = doc.at("truth").get<std::string>();
    if (doc.contains("methods")) {
      c.methods.clear();
      for (const auto& m : doc["methods"]) {
        const std::string s = m.get<std::string>();
        c.methods.push_back(s == "demissvae" ? DemissMode::split : demiss_mode_from_string(s));
      }
    }
    c.alphas = doc.value("alpha", c.alphas);
    c.betas = doc.value("beta", c.betas);
    c.seeds = doc.value("seeds", c.seeds);
    c.js_rows = doc.value("js_rows", c.js_rows);
    c.js_resolution = doc.value("js_resolution", c.js_resolution);
    c.include_sampler = doc.value("include_sampler", c.include_sampler);
    for (double a : c.alphas)
      if (!(a >= 0.0 && a <= 2.0)) throw ConfigError("alpha values must lie in [0, 2]");
    for (double b : c.betas)
      if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("beta values must lie in [0, 1]");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("control study config: ") + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

std::vector<ControlStudyRow> run_control_study(const ControlStudyConfig& config, const IncompleteDataset& train,
                                               const DatasetBundle& test, const MoGParams& truth,
                                               const std::filesystem::path& out_dir) {
  struct Setting {
    std::string sweep;
    double alpha, beta;
  };
  std::vector<Setting> settings{{"exact", 0.0, 0.0}};
  for (double a : config.alphas)
    if (a > 0.0) settings.push_back({"alpha", a, 0.0});
  for (double b : config.betas)
    if (b > 0.0) settings.push_back({"beta", 0.0, b});
  if (config.include_sampler) settings.push_back({"sampler", 0.0, 0.0});

  const QuadratureGrid grid{-config.base.eval.grid_bound, config.base.eval.grid_bound, config.base.eval.grid_resolution, 2};
  std::vector<ControlStudyRow> rows;
  std::ofstream jsonl;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    jsonl.open(out_dir / "results.jsonl", std::ios::trunc);
  }
  for (const Setting& s : settings) {
    std::optional<ImputationOracle> oracle;
    std::optional<double> js;
    if (s.sweep != "sampler") {
      oracle.emplace(truth, s.alpha, s.beta);
      js = oracle_js_coordinate(*oracle, train, config.js_rows, config.js_resolution);
    }
    for (DemissMode mode : config.methods) {
      for (std::uint64_t seed : config.seeds) {
        ExperimentConfig c = config.base;
        c.demiss_mode = mode;
        c.seed = seed;
        c.run_id = "control-" + to_string(mode) + "-" + s.sweep + "-a" + std::to_string(s.alpha) + "-b" +
                   std::to_string(s.beta) + "-s" + std::to_string(seed);
        TrainOptions opts;
        if (oracle) opts.imputer = oracle->imputer(train);
        Trainer trainer(c, train, opts);
        trainer.run();
        ControlStudyRow r;
        r.method = mode == DemissMode::split ? "demissvae" : mode == DemissMode::cvi ? "cvi" : "mvb";
        r.sweep = s.sweep;
        r.alpha = s.alpha;
        r.beta = s.beta;
        r.seed = seed;
        r.js = js;
        r.grid_loglik = grid_loglik_dataset(trainer.model(), test.data, grid).mean;
        rows.push_back(r);
        if (jsonl.is_open()) jsonl << r.to_json().dump() << "\n" << std::flush;
      }
    }
  }
  if (!out_dir.empty()) {
    std::ostringstream csv;
    csv.precision(17);
    csv << "method,sweep,alpha,beta,seed,js,grid_loglik\n";
    for (const auto& r : rows) {
      csv << r.method << "," << r.sweep << "," << r.alpha << "," << r.beta << "," << r.seed << ",";
      if (r.js) csv << *r.js;
      csv << "," << r.grid_loglik << "\n";
    }
    write_file_atomic(out_dir / "results.csv", csv.str());
  }
  return rows;
}

} // namespace missvae
