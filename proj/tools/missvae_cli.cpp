#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "missvae/checkpoint.hpp"
#include "missvae/config.hpp"
#include "missvae/control_study.hpp"
#include "missvae/dataset.hpp"
#include "missvae/errors.hpp"
#include "missvae/mog.hpp"
#include "missvae/plot.hpp"
#include "missvae/rng.hpp"
#include "missvae/trainer.hpp"

namespace fs = std::filesystem;
using namespace missvae;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

fs::path run_root() {
  const char* env = std::getenv("MISSVAE_RUN_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path resolve_run_dir(const std::string& given, const std::string& run_id) {
  if (!given.empty()) return fs::path(given);
  return run_root() / run_id;
}

void generate_data(std::uint64_t seed, Index dim, Index components, Index rows, Index test_rows, double rate,
                   const fs::path& out) {
  const MoGParams truth = generate_mog(seed, dim, components);
  fs::create_directories(out);
  write_file_atomic(out / "mog.json", mog_to_json(truth).dump(2) + "\n");
  Rng rng(seed);
  Rng train_rng = rng.split();
  Rng test_rng = rng.split();
  for (const auto& [name, n, r] : {std::tuple{std::string("train"), rows, &train_rng}, std::tuple{std::string("test"), test_rows, &test_rng}}) {
    const Eigen::MatrixXd x = mog_sample(truth, n, *r);
    DatasetBundle b;
    b.data = apply_uniform_mcar(x, rate, *r);
    b.complete = x;
    b.provenance = {{"generator", "mog"}, {"seed", seed}, {"dim", dim}, {"components", components}, {"rows", n},
                    {"missing_rate", rate}, {"split", name}};
    save_bundle(b, out / name);
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational autoencoders from incomplete data"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate-data", "Sample a mixture-of-Gaussians dataset with MCAR missingness");
  std::uint64_t gen_seed = 0;
  Index gen_dim = 5, gen_components = 15, gen_rows = 20000, gen_test = 5000;
  double gen_rate = 0.5;
  std::string gen_out;
  gen->add_option("--seed", gen_seed);
  gen->add_option("--dim", gen_dim);
  gen->add_option("--components", gen_components);
  gen->add_option("--rows", gen_rows);
  gen->add_option("--test-rows", gen_test);
  gen->add_option("--missing-rate", gen_rate);
  gen->add_option("--out", gen_out)->required();

  auto* tr = app.add_subcommand("train", "Train one run");
  std::string tr_config, tr_run_dir, tr_method, tr_run_id, tr_train, tr_test;
  bool tr_resume = false;
  std::optional<Index> tr_epochs, tr_batch, tr_latent, tr_hidden, tr_blocks, tr_z, tr_k, tr_i, tr_l;
  std::optional<std::uint64_t> tr_seed;
  std::optional<double> tr_lr, tr_clip;
  tr->add_option("--config", tr_config, "Experiment config JSON")->required();
  tr->add_option("--run-dir", tr_run_dir, "Run directory (default: $MISSVAE_RUN_ROOT/<run_id>)");
  tr->add_flag("--resume", tr_resume);
  tr->add_option("--method", tr_method);
  tr->add_option("--run-id", tr_run_id);
  tr->add_option("--train-data", tr_train);
  tr->add_option("--test-data", tr_test);
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--batch-size", tr_batch);
  tr->add_option("--seed", tr_seed);
  tr->add_option("--lr", tr_lr);
  tr->add_option("--clip-norm", tr_clip);
  tr->add_option("--latent-dim", tr_latent);
  tr->add_option("--hidden", tr_hidden);
  tr->add_option("--blocks", tr_blocks);
  tr->add_option("-Z", tr_z);
  tr->add_option("-K", tr_k);
  tr->add_option("-I", tr_i);
  tr->add_option("-L", tr_l);
  std::string tr_sampler;
  tr->add_option("--sampler", tr_sampler, "Imputation sampler for demissvae: pseudo_gibbs, mwg or lair");
  std::string tr_lair_proposal;
  tr->add_option("--lair-proposal", tr_lair_proposal, "LAIR importance weighting: imputation or latent");
  bool tr_evaluate = false;
  tr->add_flag("--evaluate", tr_evaluate, "Evaluate on the test data after training");

  auto* ev = app.add_subcommand("evaluate", "Evaluate a trained run");
  std::string ev_run_dir, ev_test, ev_metrics;
  std::optional<Index> ev_samples, ev_resolution, ev_finetune, ev_grids;
  ev->add_option("--run-dir", ev_run_dir)->required();
  ev->add_option("--test-data", ev_test);
  ev->add_option("--metrics", ev_metrics, "Comma-separated: grid_loglik, iwelbo, mi_gap");
  ev->add_option("--iwelbo-samples", ev_samples);
  ev->add_option("--grid-resolution", ev_resolution);
  ev->add_option("--finetune-steps", ev_finetune);
  ev->add_option("--posterior-grids", ev_grids, "Write posterior density grids for the first N test rows");

  auto* cs = app.add_subcommand("control-study", "Imputation-oracle control study");
  std::string cs_config, cs_out;
  cs->add_option("--config", cs_config)->required();
  cs->add_option("--out", cs_out)->required();

  auto* pl = app.add_subcommand("plot", "Render SVG figures from stored outputs");
  std::string pl_kind, pl_out, pl_metric;
  std::vector<std::string> pl_inputs;
  pl->add_option("--kind", pl_kind, "curves, box, heatmap or control")->required();
  pl->add_option("--out", pl_out)->required();
  pl->add_option("--metric", pl_metric);
  pl->add_option("inputs", pl_inputs)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) {
      generate_data(gen_seed, gen_dim, gen_components, gen_rows, gen_test, gen_rate, gen_out);
      std::cout << "wrote " << gen_out << "\n";
    } else if (*tr) {
      std::ifstream in(tr_config);
      if (!in) throw ConfigError("cannot open config " + tr_config);
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(tr_config + ": " + e.what());
      }
      if (!tr_method.empty()) doc["method"] = tr_method;
      if (!tr_run_id.empty()) doc["run_id"] = tr_run_id;
      if (!tr_train.empty()) doc["data"]["train"] = tr_train;
      if (!tr_test.empty()) doc["data"]["test"] = tr_test;
      if (tr_epochs) doc["epochs"] = *tr_epochs;
      if (tr_batch) doc["batch_size"] = *tr_batch;
      if (tr_seed) doc["seed"] = *tr_seed;
      if (tr_lr) doc["optimizer"]["learning_rate"] = *tr_lr;
      if (tr_clip) doc["optimizer"]["clip_norm"] = *tr_clip;
      if (tr_latent) doc["architecture"]["latent_dim"] = *tr_latent;
      if (tr_hidden) doc["architecture"]["hidden"] = *tr_hidden;
      if (tr_blocks) doc["architecture"]["blocks"] = *tr_blocks;
      if (tr_z) doc["budget"]["Z"] = *tr_z;
      if (tr_k) doc["budget"]["K"] = *tr_k;
      if (tr_i) doc["budget"]["I"] = *tr_i;
      if (tr_l) doc["budget"]["L"] = *tr_l;
      if (!tr_sampler.empty()) doc["budget"]["sampler"] = tr_sampler;
      if (!tr_lair_proposal.empty()) doc["budget"]["lair_proposal"] = tr_lair_proposal;
      ExperimentConfig config = ExperimentConfig::from_json(doc);
      if (config.run_id.empty()) config.run_id = to_string(config.method) + "-s" + std::to_string(config.seed) + "-" + config.hash().substr(0, 8);
      const fs::path dir = resolve_run_dir(tr_run_dir, config.run_id);
      train(config, dir, tr_resume);
      std::cout << "trained " << config.run_id << " in " << dir.string() << "\n";
      if (tr_evaluate) {
        const EvalReport r = evaluate(dir);
        std::cout << r.summary.dump(2) << "\n";
      }
    } else if (*ev) {
      const fs::path dir = resolve_run_dir(ev_run_dir, "");
      std::optional<EvalConfig> spec;
      if (!ev_metrics.empty() || ev_samples || ev_resolution || ev_finetune || ev_grids) {
        spec = load_run(dir).config.eval;
        if (!ev_metrics.empty()) {
          spec->metrics.clear();
          std::stringstream ss(ev_metrics);
          std::string m;
          while (std::getline(ss, m, ','))
            if (!m.empty()) spec->metrics.push_back(m);
        }
        if (ev_samples) spec->iwelbo_samples = *ev_samples;
        if (ev_resolution) spec->grid_resolution = *ev_resolution;
        if (ev_finetune) spec->finetune_steps = *ev_finetune;
        if (ev_grids) spec->posterior_grid_rows = *ev_grids;
      }
      const EvalReport r = evaluate(dir, spec, ev_test);
      std::cout << r.summary.dump(2) << "\n";
    } else if (*cs) {
      std::ifstream in(cs_config);
      if (!in) throw ConfigError("cannot open config " + cs_config);
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(cs_config + ": " + e.what());
      }
      const ControlStudyConfig config = ControlStudyConfig::from_json(doc);
      std::ifstream tin(config.truth_path);
      if (!tin) throw ConfigError("cannot open ground truth " + config.truth_path);
      const MoGParams truth = mog_from_json(nlohmann::json::parse(tin));
      const IncompleteDataset train_data = load_training_data(config.base);
      const DatasetBundle test = load_bundle(config.base.test_data);
      const auto rows = run_control_study(config, train_data, test, truth, cs_out);
      std::cout << "wrote " << rows.size() << " rows to " << cs_out << "\n";
    } else if (*pl) {
      std::vector<fs::path> inputs(pl_inputs.begin(), pl_inputs.end());
      plot(figure_from_string(pl_kind), inputs, pl_out, pl_metric);
      std::cout << "wrote " << pl_out << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParameterError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
