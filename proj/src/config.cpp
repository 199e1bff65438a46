#include "missvae/config.hpp"

#include <cstdio>
#include <fstream>

#include "missvae/errors.hpp"

namespace missvae {

namespace {

const std::vector<std::pair<Method, std::string>> kMethods = {
    {Method::mvae, "mvae"},         {Method::missvae, "missvae"},     {Method::misssvae, "misssvae"},
    {Method::miwae, "miwae"},       {Method::missiwae, "missiwae"},   {Method::misssiwae, "misssiwae"},
    {Method::demissvae, "demissvae"}};

const std::vector<std::pair<SamplerKind, std::string>> kSamplers = {
    {SamplerKind::none, "none"}, {SamplerKind::pseudo_gibbs, "pseudo_gibbs"}, {SamplerKind::mwg, "mwg"}, {SamplerKind::lair, "lair"}};

} // namespace

std::string to_string(Method m) {
  for (const auto& [k, v] : kMethods)
    if (k == m) return v;
  return "unknown";
}

Method method_from_string(const std::string& s) {
  for (const auto& [k, v] : kMethods)
    if (v == s) return k;
  throw ConfigError("unknown method '" + s + "'");
}

std::string to_string(SamplerKind k) {
  for (const auto& [key, v] : kSamplers)
    if (key == k) return v;
  return "unknown";
}

SamplerKind sampler_from_string(const std::string& s) {
  for (const auto& [k, v] : kSamplers)
    if (v == s) return k;
  throw ConfigError("unknown sampler '" + s + "'");
}

std::string to_string(LairProposal p) { return p == LairProposal::latent ? "latent" : "imputation"; }

LairProposal lair_proposal_from_string(const std::string& s) {
  if (s == "imputation") return LairProposal::imputation;
  if (s == "latent") return LairProposal::latent;
  throw ConfigError("unknown LAIR proposal '" + s + "'");
}

void ExperimentConfig::validate() const {
  const auto& b = budget;
  const std::string m = to_string(method);
  if (b.z < 1 || b.k < 1 || b.i < 1 || b.l < 1) throw ConfigError(m + ": Z, K, I, L must all be >= 1");
  switch (method) {
    case Method::mvae:
      if (b.k != 1 || b.i != 1) throw ConfigError("mvae requires K = 1 and I = 1");
      break;
    case Method::miwae:
      if (b.k != 1) throw ConfigError("miwae requires K = 1");
      break;
    case Method::missvae:
    case Method::misssvae:
      if (b.k < 2) throw ConfigError(m + " requires a mixture with K >= 2");
      if (b.i != 1) throw ConfigError(m + " is an ELBO method and requires I = 1");
      break;
    case Method::missiwae:
    case Method::misssiwae:
      if (b.k < 2) throw ConfigError(m + " requires a mixture with K >= 2");
      break;
    case Method::demissvae:
      if (b.sampler == SamplerKind::none) throw ConfigError("demissvae requires a sampler kind");
      if (b.z != 1 || b.i != 1) throw ConfigError("demissvae uses Z = 1 and I = 1; set K imputations and L latents");
      if (b.sampler_iterations < 1) throw ConfigError("demissvae requires at least one sampler iteration");
      if (b.r < 0) throw ConfigError("LAIR R must be >= 0");
      break;
  }
  if (method != Method::demissvae && b.sampler != SamplerKind::none)
    throw ConfigError(m + " does not use an imputation sampler");
  if (loose && method != Method::misssiwae) throw ConfigError("the loose stratified bound applies only to misssiwae");
  if (arch.latent_dim < 1 || arch.hidden < 0 || arch.blocks < 0) throw ConfigError("invalid architecture");
  if (arch.hidden == 0 && arch.blocks > 0) throw ConfigError("residual blocks need hidden > 0");
  if (epochs < 0 || batch_size < 1) throw ConfigError("epochs must be >= 0 and batch_size >= 1");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (optimizer.clip_norm < 0.0) throw ConfigError("clip norm must be >= 0");
  if (eval.grid_resolution < 64) throw ConfigError("grid resolution must be >= 64");
  if (eval.grid_bound < 3.0) throw ConfigError("grid bound must cover at least [-3, 3]");
  if (eval.iwelbo_samples < 1 || eval.iwelbo_chunk < 1) throw ConfigError("iwelbo samples and chunk must be >= 1");
}

Index ExperimentConfig::sample_budget() const {
  if (method == Method::demissvae) return budget.k * budget.l;
  const ObjectiveSpec s = objective();
  return s.budget.total();
}

ObjectiveSpec ExperimentConfig::objective() const {
  ObjectiveSpec s;
  s.stl = stl;
  s.budget.z = budget.z;
  s.budget.k = budget.k;
  s.budget.i = budget.i;
  switch (method) {
    case Method::mvae:
    case Method::missvae:
      s.bound = Bound::elbo;
      s.budget.scheme = SamplingScheme::ancestral;
      break;
    case Method::misssvae:
      s.bound = Bound::selbo;
      s.budget.scheme = SamplingScheme::stratified;
      break;
    case Method::miwae:
    case Method::missiwae:
      s.bound = Bound::iwelbo;
      s.budget.scheme = SamplingScheme::ancestral;
      break;
    case Method::misssiwae:
      s.bound = loose ? Bound::siwelbo_loose : Bound::siwelbo;
      s.budget.scheme = SamplingScheme::stratified;
      break;
    case Method::demissvae:
      s.bound = Bound::elbo;
      s.budget = SampleBudget{1, 1, 1, SamplingScheme::ancestral};
      break;
  }
  return s;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["run_id"] = run_id;
  j["method"] = to_string(method);
  j["budget"] = {{"Z", budget.z}, {"K", budget.k}, {"I", budget.i}, {"L", budget.l}, {"sampler", to_string(budget.sampler)},
                 {"sampler_iterations", budget.sampler_iterations}, {"R", budget.r},
                 {"lair_proposal", to_string(budget.lair_proposal)}};
  j["loose"] = loose;
  j["demiss_mode"] = to_string(demiss_mode);
  j["stl"] = stl;
  j["architecture"] = {{"latent_dim", arch.latent_dim},
                       {"hidden", arch.hidden},
                       {"blocks", arch.blocks},
                       {"encoder_hidden", arch.encoder_hidden},
                       {"encoder_blocks", arch.encoder_blocks},
                       {"decoder", arch.decoder == DecoderFamily::gaussian ? "gaussian" : "bernoulli"},
                       {"component_init_scale", arch.component_init_scale},
                       {"init", "fan_in_uniform"}};
  j["optimizer"] = {{"kind", "amsgrad"},
                    {"learning_rate", optimizer.learning_rate},
                    {"beta1", optimizer.beta1},
                    {"beta2", optimizer.beta2},
                    {"eps", optimizer.eps},
                    {"cosine", optimizer.cosine},
                    {"clip_norm", optimizer.clip_norm}};
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["data"] = {{"train", train_data}, {"test", test_data}, {"max_train_rows", max_train_rows}};
  j["eval"] = {{"metrics", eval.metrics},
               {"iwelbo_samples", eval.iwelbo_samples},
               {"iwelbo_chunk", eval.iwelbo_chunk},
               {"grid_resolution", eval.grid_resolution},
               {"grid_bound", eval.grid_bound},
               {"check_refinement", eval.check_refinement},
               {"finetune_steps", eval.finetune_steps},
               {"substitute_iwelbo", eval.substitute_iwelbo},
               {"posterior_grid_rows", eval.posterior_grid_rows},
               {"snr_aggregation", "median"}};
  j["early_stopping"] = {{"enabled", early_stopping}, {"patience", early_stopping_patience}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc) {
  try {
    ExperimentConfig c;
    c.run_id = doc.value("run_id", std::string());
    c.method = method_from_string(doc.at("method").get<std::string>());
    if (c.method == Method::demissvae) c.optimizer.clip_norm = 1.0;
    if (doc.contains("budget")) {
      const auto& b = doc["budget"];
      c.budget.z = b.value("Z", Index{1});
      c.budget.k = b.value("K", Index{1});
      c.budget.i = b.value("I", Index{1});
      c.budget.l = b.value("L", Index{1});
      c.budget.sampler = sampler_from_string(b.value("sampler", std::string(c.method == Method::demissvae ? "lair" : "none")));
      c.budget.sampler_iterations = b.value("sampler_iterations", Index{1});
      c.budget.r = b.value("R", Index{0});
      c.budget.lair_proposal = lair_proposal_from_string(b.value("lair_proposal", std::string("imputation")));
    } else if (c.method == Method::demissvae) {
      c.budget.sampler = SamplerKind::lair;
    }
    c.loose = doc.value("loose", false);
    c.demiss_mode = demiss_mode_from_string(doc.value("demiss_mode", std::string("split")));
    c.stl = doc.value("stl", true);
    if (doc.contains("architecture")) {
      const auto& a = doc["architecture"];
      c.arch.latent_dim = a.value("latent_dim", c.arch.latent_dim);
      c.arch.hidden = a.value("hidden", c.arch.hidden);
      c.arch.blocks = a.value("blocks", c.arch.blocks);
      c.arch.encoder_hidden = a.value("encoder_hidden", c.arch.encoder_hidden);
      c.arch.encoder_blocks = a.value("encoder_blocks", c.arch.encoder_blocks);
      const std::string dec = a.value("decoder", std::string("gaussian"));
      if (dec != "gaussian" && dec != "bernoulli") throw ConfigError("unknown decoder family '" + dec + "'");
      c.arch.decoder = dec == "gaussian" ? DecoderFamily::gaussian : DecoderFamily::bernoulli;
      c.arch.component_init_scale = a.value("component_init_scale", c.arch.component_init_scale);
    }
    if (doc.contains("optimizer")) {
      const auto& o = doc["optimizer"];
      const std::string kind = o.value("kind", std::string("amsgrad"));
      if (kind != "amsgrad") throw ConfigError("unsupported optimizer '" + kind + "'");
      c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
      c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
      c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
      c.optimizer.eps = o.value("eps", c.optimizer.eps);
      c.optimizer.cosine = o.value("cosine", c.optimizer.cosine);
      c.optimizer.clip_norm = o.value("clip_norm", c.optimizer.clip_norm);
    }
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("data")) {
      c.train_data = doc["data"].value("train", std::string());
      c.test_data = doc["data"].value("test", std::string());
      c.max_train_rows = doc["data"].value("max_train_rows", Index{0});
    }
    if (doc.contains("eval")) {
      const auto& e = doc["eval"];
      c.eval.metrics = e.value("metrics", c.eval.metrics);
      c.eval.iwelbo_samples = e.value("iwelbo_samples", c.eval.iwelbo_samples);
      c.eval.iwelbo_chunk = e.value("iwelbo_chunk", c.eval.iwelbo_chunk);
      c.eval.grid_resolution = e.value("grid_resolution", c.eval.grid_resolution);
      c.eval.grid_bound = e.value("grid_bound", c.eval.grid_bound);
      c.eval.check_refinement = e.value("check_refinement", c.eval.check_refinement);
      c.eval.finetune_steps = e.value("finetune_steps", c.eval.finetune_steps);
      c.eval.substitute_iwelbo = e.value("substitute_iwelbo", c.eval.substitute_iwelbo);
      c.eval.posterior_grid_rows = e.value("posterior_grid_rows", c.eval.posterior_grid_rows);
    }
    if (doc.contains("early_stopping")) {
      c.early_stopping = doc["early_stopping"].value("enabled", false);
      c.early_stopping_patience = doc["early_stopping"].value("patience", c.early_stopping_patience);
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(to_json().dump())));
  return buf;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return ExperimentConfig::from_json(doc);
}

void check_fairness(const std::vector<ExperimentConfig>& configs, bool allow_mismatch) {
  if (configs.empty() || allow_mismatch) return;
  const Index ref = configs.front().sample_budget();
  for (const auto& c : configs)
    if (c.sample_budget() != ref)
      throw ConfigError("sample budgets differ across compared runs: " + to_string(configs.front().method) + " uses " +
                        std::to_string(ref) + ", " + to_string(c.method) + " uses " + std::to_string(c.sample_budget()));
}

} // namespace missvae
