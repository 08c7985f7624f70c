#include "mptlml/experiments.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"
#include "mptlml/bernoulli.hpp"
#include "mptlml/io.hpp"
#include "mptlml/parallel.hpp"
#include "mptlml/scoring.hpp"
#include "mptlml/text.hpp"
#include "mptlml/training.hpp"

namespace mptlml {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

Error config_error(const std::string& what) { return Error(ErrorCode::ConfigError, what); }

// Effective configuration: command defaults, overlaid by the config file,
// overlaid by command-line flags. Keys absent from the defaults are rejected.
class Config {
 public:
  Config(json defaults, const json& user, const RunOverrides& ov) : values_(std::move(defaults)) {
    values_["seed"] = 0;
    values_["out"] = "out";
    values_["workers"] = 1;
    if (!user.is_object()) throw config_error("config must be a JSON object");
    for (const auto& [key, value] : user.items()) {
      if (!values_.contains(key)) throw config_error("unknown config key '" + key + "'");
      values_[key] = value;
    }
    if (ov.seed) values_["seed"] = *ov.seed;
    if (ov.out) values_["out"] = *ov.out;
    if (ov.workers) values_["workers"] = *ov.workers;
    if (workers() < 1) throw config_error("workers must be >= 1");
  }

  const json& resolved() const { return values_; }

  bool is_null(const char* key) const { return values_.at(key).is_null(); }

  double real(const char* key) const {
    const json& v = values_.at(key);
    if (!v.is_number()) throw config_error(std::string("'") + key + "' must be a number");
    return v.get<double>();
  }

  Index integer(const char* key) const {
    const json& v = values_.at(key);
    if (!v.is_number_integer()) throw config_error(std::string("'") + key + "' must be an integer");
    return v.get<Index>();
  }

  bool flag(const char* key) const {
    const json& v = values_.at(key);
    if (!v.is_boolean()) throw config_error(std::string("'") + key + "' must be true or false");
    return v.get<bool>();
  }

  std::string text(const char* key) const {
    const json& v = values_.at(key);
    if (!v.is_string()) throw config_error(std::string("'") + key + "' must be a string");
    return v.get<std::string>();
  }

  std::vector<Index> integers(const char* key) const {
    const json& v = values_.at(key);
    std::vector<Index> out;
    if (!v.is_array()) throw config_error(std::string("'") + key + "' must be an array of integers");
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw config_error(std::string("'") + key + "' must be an array of integers");
      out.push_back(e.get<Index>());
    }
    return out;
  }

  std::vector<std::string> texts(const char* key) const {
    const json& v = values_.at(key);
    std::vector<std::string> out;
    if (!v.is_array()) throw config_error(std::string("'") + key + "' must be an array of strings");
    for (const auto& e : v) {
      if (!e.is_string()) throw config_error(std::string("'") + key + "' must be an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  std::uint64_t seed() const {
    const json& v = values_.at("seed");
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<Index>() < 0))
      throw config_error("'seed' must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  // data_seed falls back to seed.
  std::uint64_t data_seed() const {
    if (is_null("data_seed")) return seed();
    const json& v = values_.at("data_seed");
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<Index>() >= 0))
      throw config_error("'data_seed' must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  int workers() const { return static_cast<int>(integer("workers")); }
  std::string out() const { return text("out"); }

 private:
  json values_;
};

// Artifacts are written relative to the output directory and listed in the
// manifest in creation order.
class Run {
 public:
  explicit Run(const Config& cfg) : dir_(cfg.out()) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create output directory " + dir_.string());
  }

  std::string path(const std::string& name) {
    artifacts_.push_back(name);
    return (dir_ / name).string();
  }

  void write_json(const std::string& name, const json& j) { write_text_file(path(name), j.dump(2) + "\n"); }

  const std::vector<std::string>& artifacts() const { return artifacts_; }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<std::string> artifacts_;
};

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::IoError, "SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

OptimizerSettings optimizer_from(const Config& c) {
  OptimizerSettings s;
  const std::string kind = c.text("optimizer");
  if (kind == "adam")
    s.kind = OptimizerKind::Adam;
  else if (kind == "sgd")
    s.kind = OptimizerKind::Sgd;
  else
    throw config_error("optimizer must be 'adam' or 'sgd'");
  s.learning_rate = c.real("learning_rate");
  s.beta1 = c.real("beta1");
  s.beta2 = c.real("beta2");
  s.epsilon = c.real("epsilon");
  if (!(s.learning_rate >= 0.0)) throw config_error("learning_rate must be >= 0");
  if (!(s.beta1 >= 0.0 && s.beta1 < 1.0 && s.beta2 >= 0.0 && s.beta2 < 1.0 && s.epsilon > 0.0))
    throw config_error("invalid Adam constants");
  return s;
}

json optimizer_defaults(double lr) {
  return {{"optimizer", "adam"}, {"learning_rate", lr}, {"beta1", 0.9}, {"beta2", 0.999}, {"epsilon", 1e-8}};
}

json ppca_source_defaults() {
  return {{"data", nullptr},   {"params", nullptr}, {"D", 10},         {"K", 2},
          {"N", 2000},         {"w_std", 1.0},      {"mu_std", 1.0},   {"sigma2", 0.5},
          {"data_seed", nullptr}};
}

json merge(json a, const json& b) {
  for (const auto& [k, v] : b.items()) a[k] = v;
  return a;
}

PpcaParams generating_params(const Config& c) {
  const Index D = c.integer("D"), K = c.integer("K");
  if (D < 1 || K < 1 || K > D) throw config_error("need D >= 1 and 1 <= K <= D");
  if (!(c.real("sigma2") > 0.0)) throw config_error("sigma2 must be > 0");
  Stream s = Stream(c.data_seed()).child({tag::kParams});
  return random_params(D, K, c.real("w_std"), c.real("mu_std"), c.real("sigma2"), s);
}

struct PpcaSource {
  Dataset data;
  std::optional<PpcaParams> gt;
};

// Loads data and generating parameters from files, or synthesises both.
PpcaSource ppca_source(const Config& c) {
  PpcaSource src;
  if (!c.is_null("params")) src.gt = load_ppca(c.text("params"));
  if (!c.is_null("data")) {
    src.data.rows = read_dataset_csv(c.text("data"));
    src.data.meta.source = c.text("data");
  } else {
    if (!src.gt) src.gt = generating_params(c);
    const Index N = c.integer("N");
    if (N < 1) throw config_error("N must be >= 1");
    src.data = sample_dataset(*src.gt, N, c.data_seed());
  }
  if (src.gt && src.gt->dim() != src.data.dim())
    throw config_error("parameter and data dimensions differ");
  return src;
}

json summary_stats(const Vector& v) {
  const double n = static_cast<double>(v.size());
  const double mean = v.mean();
  const double var = v.size() > 1 ? (v.array() - mean).square().sum() / (n - 1.0) : 0.0;
  return {{"mean", mean}, {"std_err", std::sqrt(var / n)}};
}

// ---------------------------------------------------------------- gen-data

json cmd_gen_data(const Config& c, Run& run) {
  const std::string model = c.text("model");
  const Index N = c.integer("N");
  if (N < 1) throw config_error("N must be >= 1");
  json summary{{"command", "gen-data"}, {"model", model}, {"N", N}};
  if (model == "ppca") {
    const PpcaParams gt = generating_params(c);
    const Dataset data = sample_dataset(gt, N, c.data_seed());
    write_dataset_csv(run.path("data.csv"), data.rows);
    save_ppca(run.path("gt_params.json"), gt);
    const Vector rows = lml_rows(gt, data);
    const GaussianJoint joint = marginal_covariance(gt);
    const double D = static_cast<double>(gt.dim());
    const double expected = -0.5 * (D * kLog2Pi + joint.logdet() + D);
    const json stats = summary_stats(rows);
    summary["D"] = gt.dim();
    summary["K"] = gt.latent();
    summary["lml"] = rows.sum();
    summary["lml_per_obs"] = stats["mean"];
    summary["lml_per_obs_std_err"] = stats["std_err"];
    summary["expected_lml_per_obs"] = expected;
    summary["z_score"] = (stats["mean"].get<double>() - expected) / stats["std_err"].get<double>();
  } else if (model == "bernoulli") {
    const Index D = c.integer("D"), K = c.integer("K");
    if (D < 1 || K != 2) throw config_error("the Bernoulli model needs D >= 1 and K = 2");
    Stream s = Stream(c.data_seed()).child({tag::kParams});
    BernoulliLinearParams gt = init_bernoulli(D, K, c.real("w_std"), s);
    for (Index d = 0; d < D; ++d) gt.mu[d] = c.real("mu_std") * s.normal();
    const Matrix X = sample_bernoulli(gt, N, c.data_seed());
    write_binary_dataset(run.path("data.txt"), X);
    save_bernoulli(run.path("gt_params.json"), gt);
    const QuadratureGrid grid;
    const Vector rows = BernoulliQuadrature(gt, grid).lml_rows(X, c.workers());
    summary["D"] = D;
    summary["K"] = K;
    summary["lml"] = rows.sum();
    summary["lml_per_obs"] = rows.mean();
  } else {
    throw config_error("model must be 'ppca' or 'bernoulli'");
  }
  return summary;
}

// ------------------------------------------------------------- convergence

void write_rows_csv(const std::string& path, const std::vector<ConvergenceRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << "P,mean,std,std_err,rel_diff\n";
  for (const auto& r : rows)
    out << (r.P == 0 ? std::string("all") : std::to_string(r.P)) << ',' << format_double(r.mean) << ','
        << format_double(r.std) << ',' << format_double(r.std_err) << ',' << format_double(r.rel_diff) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path);
}

json rows_json(const std::vector<ConvergenceRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows)
    arr.push_back({{"P", r.P == 0 ? json("all") : json(r.P)},
                   {"mean", r.mean},
                   {"std", r.std},
                   {"std_err", r.std_err},
                   {"rel_diff", r.rel_diff}});
  return arr;
}

json cmd_convergence(const Config& c, Run& run) {
  const PpcaSource src = ppca_source(c);
  if (!src.gt) throw config_error("convergence needs model parameters ('params') when 'data' is given");
  ConvergenceSettings s;
  s.P_values = c.integers("P_values");
  for (Index P : s.P_values)
    if (P < 1) throw config_error("P_values must be >= 1");
  s.replicates = c.integer("replicates");
  s.seed = c.seed();
  s.include_exhaustive = c.flag("exhaustive");
  s.run_unfixed = c.flag("unfixed");
  if (!c.is_null("fixed_rate")) {
    s.fixed_rate = c.real("fixed_rate");
    if (!(*s.fixed_rate > 0.0 && *s.fixed_rate < 1.0)) throw config_error("fixed_rate must lie in (0, 1)");
  }
  s.bias_masks = c.integer("bias_masks");
  if (s.bias_masks < 2) throw config_error("bias_masks must be >= 2");
  s.workers = c.workers();
  if (s.include_exhaustive && src.gt->dim() > kExactMaxDim)
    throw config_error("exhaustive rows need D <= " + std::to_string(kExactMaxDim));

  const ConvergenceReport rep = convergence_study(*src.gt, src.data, s);
  json summary{{"command", "convergence"},
               {"D", src.gt->dim()},
               {"K", src.gt->latent()},
               {"N", src.data.size()},
               {"lml", rep.lml}};
  if (s.run_unfixed) {
    write_rows_csv(run.path("unfixed.csv"), rep.unfixed);
    summary["unfixed"] = rows_json(rep.unfixed);
  }
  if (rep.fixed) {
    write_rows_csv(run.path("fixed.csv"), rep.fixed->rows);
    summary["fixed"] = {{"rate", rep.fixed->rate},
                        {"mask_size", rep.fixed->mask_size},
                        {"rows", rows_json(rep.fixed->rows)},
                        {"bias", rep.fixed->bias},
                        {"bias_std_err", rep.fixed->bias_std_err},
                        {"bias_rel", rep.fixed->bias_rel},
                        {"bias_rel_std_err", rep.fixed->bias_rel_std_err}};
  }
  return summary;
}

// ------------------------------------------------------------------- train

struct WindowStats {
  double mean = 0.0, std_err = 0.0;
};

WindowStats window_stats(const std::vector<double>& v) {
  WindowStats w;
  const double n = static_cast<double>(v.size());
  for (double x : v) w.mean += x;
  w.mean /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - w.mean) * (x - w.mean);
  w.std_err = v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return w;
}

// Direct estimate of sum_i E_M[log p(x_i,R)] with `masks` masks per row.
WindowStats direct_rest_lml(const PpcaParams& params, const Dataset& data, Index m, Index masks,
                            const Stream& rng, int workers) {
  const GaussianJoint joint = marginal_covariance(params);
  std::vector<ScoreEstimate> est(static_cast<std::size_t>(data.size()));
  parallel_for(est.size(), workers, [&](std::size_t i) {
    est[i] = fixed_rate_bias(joint, data.rows.row(static_cast<Eigen::Index>(i)).transpose(), m,
                             MaskBudget::sampled(masks), rng.child({i}));
  });
  WindowStats w;
  double var = 0.0;
  for (const auto& e : est) {
    w.mean += e.value;
    var += e.std_err * e.std_err;
  }
  w.std_err = std::sqrt(var);
  return w;
}

json cmd_train(const Config& c, Run& run) {
  const PpcaSource src = ppca_source(c);
  const Dataset& data = src.data;
  const Index D = data.dim();
  const Index K = c.integer("latent");
  if (K < 1 || K > D) throw config_error("latent must satisfy 1 <= latent <= D");

  TrainConfig tc;
  const std::string regime = c.text("regime");
  if (regime == "unfixed")
    tc.regime = Regime::Unfixed;
  else if (regime == "fixed")
    tc.regime = Regime::Fixed;
  else
    throw config_error("regime must be 'unfixed' or 'fixed'");
  tc.rate = c.real("rate");
  tc.epochs = c.integer("epochs");
  tc.optimizer = optimizer_from(c);
  tc.masks_per_epoch = c.integer("masks_per_epoch");
  tc.init_w_std = c.real("init_w_std");
  const std::string form = c.text("form");
  if (form == "auto")
    tc.form = tc.regime == Regime::Fixed ? ConditionalForm::Block : ConditionalForm::TokenWise;
  else if (form == "token_wise")
    tc.form = ConditionalForm::TokenWise;
  else if (form == "block")
    tc.form = ConditionalForm::Block;
  else
    throw config_error("form must be 'auto', 'token_wise' or 'block'");
  tc.workers = c.workers();
  tc.checkpoint_epochs = c.integers("checkpoint_epochs");
  for (Index e : tc.checkpoint_epochs)
    if (e < 0 || e > tc.epochs) throw config_error("checkpoint epochs must lie in [0, epochs]");
  tc.validate();
  const Index inits = c.integer("inits");
  // The summary window is capped at the epoch budget.
  const Index window = std::min(c.integer("final_window"), tc.epochs);
  const Index bias_masks = c.integer("bias_masks");
  if (inits < 1) throw config_error("inits must be >= 1");
  if (c.integer("final_window") < 1) throw config_error("final_window must be >= 1");
  if (bias_masks < 2) throw config_error("bias_masks must be >= 2");
  if (tc.regime == Regime::Fixed && mask_size_for_rate(tc.rate, D) >= D)
    throw config_error("fixed rate leaves no unmasked tokens");

  const Stream base(c.seed());
  json summary{{"command", "train"}, {"regime", regime}, {"D", D}, {"K", K}, {"N", data.size()}};
  const double n = static_cast<double>(data.size());
  std::optional<double> gt_lml;
  if (src.gt && src.gt->latent() <= D) {
    gt_lml = lml(*src.gt, data);
    summary["gt_lml"] = *gt_lml;
    summary["gt_lml_per_obs"] = *gt_lml / n;
  }
  if (!src.gt && c.is_null("data")) throw config_error("no data source");

  json runs = json::array();
  int status = 0;
  std::string failure;
  for (Index k = 0; k < inits; ++k) {
    const std::string tagname = "init" + std::to_string(k);
    Stream init_rng = base.child({tag::kInit, static_cast<std::uint64_t>(k)});
    const PpcaParams init = init_params(D, K, tc.init_w_std, init_rng);
    TrainConfig run_cfg = tc;
    run_cfg.seed = base.child({tag::kInit, static_cast<std::uint64_t>(k), 1}).key();
    TrainTrace trace;
    try {
      trace = train(init, data, run_cfg);
    } catch (const TrainingAborted& aborted) {
      write_trace_csv(run.path("trace_" + tagname + ".csv"), aborted.partial().records);
      runs.push_back({{"init", k}, {"aborted_epoch", aborted.epoch()}});
      status = 4;
      failure = aborted.what();
      break;
    }
    write_trace_csv(run.path("trace_" + tagname + ".csv"), trace.records);
    save_ppca(run.path("final_params_" + tagname + ".json"), trace.final_params);
    for (const auto& [epoch, params] : trace.checkpoints)
      save_ppca(run.path("checkpoint_" + tagname + "_epoch" + std::to_string(epoch) + ".json"), params);

    const double final_lml = lml(trace.final_params, data);
    json r{{"init", k},
           {"initial_exact_lml", trace.records.front().exact_lml},
           {"final_exact_lml", final_lml},
           {"final_exact_lml_per_obs", final_lml / n}};
    if (gt_lml) r["final_rel_gap"] = (*gt_lml - final_lml) / std::abs(*gt_lml);

    std::vector<double> neg, gap;
    for (auto it = trace.records.end() - window; it != trace.records.end(); ++it) {
      neg.push_back(it->neg_mpt);
      gap.push_back(it->exact_lml - it->neg_mpt);
    }
    const WindowStats wn = window_stats(neg), wg = window_stats(gap);
    r["converged_neg_mpt"] = wn.mean;
    r["converged_neg_mpt_std_err"] = wn.std_err;
    if (tc.regime == Regime::Fixed) {
      const Index m = mask_size_for_rate(tc.rate, D);
      const WindowStats rest = direct_rest_lml(trace.final_params, data, m, bias_masks,
                                               base.child({tag::kBias, static_cast<std::uint64_t>(k)}), c.workers());
      // lml - masked objective is the lml of the unmasked block, so the gap
      // should match E_M[log p(x_R)]; the estimator's bias is its negative.
      const double se = std::sqrt(wg.std_err * wg.std_err + rest.std_err * rest.std_err);
      r["mask_size"] = m;
      r["window_gap"] = wg.mean;
      r["window_gap_std_err"] = wg.std_err;
      r["expected_rest_lml"] = rest.mean;
      r["expected_rest_lml_std_err"] = rest.std_err;
      r["bias"] = -rest.mean;
      r["gap_z"] = se > 0.0 ? (wg.mean - rest.mean) / se : 0.0;
    }
    runs.push_back(r);
  }
  summary["runs"] = runs;

  if (status == 0) {
    double worst_gap = 0.0;
    if (gt_lml)
      for (const auto& r : runs) worst_gap = std::max(worst_gap, std::abs(r["final_rel_gap"].get<double>()));
    if (gt_lml) summary["max_abs_rel_gap"] = worst_gap;
    double mean = 0.0, pooled = 0.0;
    for (const auto& r : runs) {
      mean += r["converged_neg_mpt"].get<double>();
      pooled += std::pow(r["converged_neg_mpt_std_err"].get<double>(), 2);
    }
    mean /= static_cast<double>(runs.size());
    pooled = std::sqrt(pooled / static_cast<double>(runs.size()));
    double spread = 0.0;
    for (const auto& r : runs) spread = std::max(spread, std::abs(r["converged_neg_mpt"].get<double>() - mean));
    summary["converged_neg_mpt_mean"] = mean;
    summary["converged_pooled_std_err"] = pooled;
    summary["converged_max_dev_in_pooled_se"] = pooled > 0.0 ? spread / pooled : 0.0;
  } else {
    summary["error"] = failure;
  }
  return summary;
}

// --------------------------------------------------------- train-bernoulli

json cmd_train_bernoulli(const Config& c, Run& run) {
  Matrix X;
  std::optional<BernoulliLinearParams> gt;
  if (!c.is_null("data") && !c.is_null("images")) throw config_error("give either 'data' or 'images', not both");
  if (!c.is_null("data")) {
    X = read_binary_dataset(c.text("data"));
    if (c.integer("max_rows") > 0 && X.rows() > c.integer("max_rows")) X.conservativeResize(c.integer("max_rows"), X.cols());
  } else if (!c.is_null("images")) {
    ImageSpec spec;
    spec.crop = c.integer("crop");
    spec.downsample = c.integer("downsample");
    spec.threshold = c.real("threshold");
    spec.max_rows = c.integer("max_rows");
    X = read_image_csv(c.text("images"), spec);
  } else {
    const Index D = c.integer("D"), N = c.integer("N");
    if (D < 1 || N < 1) throw config_error("need D >= 1 and N >= 1");
    Stream s = Stream(c.data_seed()).child({tag::kParams});
    gt = init_bernoulli(D, 2, c.real("w_std"), s);
    for (Index d = 0; d < D; ++d) gt->mu[d] = c.real("mu_std") * s.normal();
    X = sample_bernoulli(*gt, N, c.data_seed());
  }
  write_binary_dataset(run.path("data.txt"), X);
  const Index D = X.cols();
  const double n = static_cast<double>(X.rows());

  BernoulliTrainConfig bc;
  bc.rate = c.real("rate");
  bc.epochs = c.integer("epochs");
  bc.optimizer = optimizer_from(c);
  bc.init_w_std = c.real("init_w_std");
  bc.grid_half_width = c.real("grid_half_width");
  bc.grid_points = c.integer("grid_points");
  bc.hermite_order = c.integer("hermite_order");
  bc.log_every = c.integer("log_every");
  bc.workers = c.workers();
  bc.validate();
  const std::string objective = c.text("objective");
  if (objective != "both" && objective != "mpt" && objective != "elbo")
    throw config_error("objective must be 'both', 'mpt' or 'elbo'");
  const Index inits = c.integer("inits");
  if (inits < 1) throw config_error("inits must be >= 1");
  const std::string init_mode = c.text("init");
  if (init_mode != "pca" && init_mode != "random") throw config_error("init must be 'pca' or 'random'");

  const Stream base(c.seed());
  json summary{{"command", "train-bernoulli"}, {"D", D}, {"K", 2}, {"N", X.rows()}, {"objective", objective}};
  if (gt) {
    const QuadratureGrid grid(bc.grid_half_width, bc.grid_points);
    summary["gt_lml_per_obs"] = BernoulliQuadrature(*gt, grid).lml_rows(X, bc.workers).mean();
  }
  json runs = json::array();
  double worst_elbo_excess = -std::numeric_limits<double>::infinity();
  double worst_diff = 0.0;
  for (Index k = 0; k < inits; ++k) {
    const std::string name = "init" + std::to_string(k);
    Stream init_rng = base.child({tag::kInit, static_cast<std::uint64_t>(k)});
    const BernoulliLinearParams init = init_mode == "pca"
                                           ? init_bernoulli_pca(X, 2, c.real("init_scale"), bc.init_w_std, init_rng)
                                           : init_bernoulli(D, 2, bc.init_w_std, init_rng);
    BernoulliTrainConfig rc = bc;
    rc.seed = base.child({tag::kInit, static_cast<std::uint64_t>(k), 1}).key();
    json r{{"init", k}};
    if (objective != "elbo") {
      const BernoulliTrace t = train_mpt_bernoulli(init, X, rc);
      write_bernoulli_trace_csv(run.path("mpt_trace_" + name + ".csv"), t.records);
      save_bernoulli(run.path("mpt_params_" + name + ".json"), t.final_params);
      r["mpt_final_lml_per_obs"] = t.final_lml / n;
    }
    if (objective != "mpt") {
      const BernoulliTrace t = train_elbo_bernoulli(init, X, rc);
      write_bernoulli_trace_csv(run.path("elbo_trace_" + name + ".csv"), t.records);
      save_bernoulli(run.path("elbo_params_" + name + ".json"), t.final_params);
      r["elbo_final_lml_per_obs"] = t.final_lml / n;
      r["elbo_final_per_obs"] = t.records.back().objective / n;
      double excess = -std::numeric_limits<double>::infinity();
      for (const auto& rec : t.records) excess = std::max(excess, (rec.objective - rec.lml) / n);
      r["max_elbo_minus_lml_per_obs"] = excess;
      worst_elbo_excess = std::max(worst_elbo_excess, excess);
    }
    if (objective == "both") {
      const double d = r["mpt_final_lml_per_obs"].get<double>() - r["elbo_final_lml_per_obs"].get<double>();
      r["mpt_minus_elbo_lml_per_obs"] = d;
      worst_diff = std::max(worst_diff, std::abs(d));
    }
    runs.push_back(r);
  }
  summary["runs"] = runs;
  if (objective == "both") summary["max_abs_lml_diff_per_obs"] = worst_diff;
  if (objective != "mpt") summary["max_elbo_minus_lml_per_obs"] = worst_elbo_excess;
  return summary;
}

// ------------------------------------------------------------------- curve

struct CurveReport {
  double area = 0.0;
  double max_dev_in_pooled_se = 0.0;
};

CurveReport curve_report(const MptCurve& curve) {
  CurveReport r;
  r.area = curve_area(curve);
  double mean = 0.0, pooled = 0.0;
  for (const auto& p : curve.points) {
    mean += p.mean;
    pooled += p.std_err * p.std_err;
  }
  const double k = static_cast<double>(curve.points.size());
  mean /= k;
  pooled = std::sqrt(pooled / k);
  double dev = 0.0;
  for (const auto& p : curve.points) dev = std::max(dev, std::abs(p.mean - mean));
  r.max_dev_in_pooled_se = pooled > 0.0 ? dev / pooled : 0.0;
  return r;
}

json cmd_curve(const Config& c, Run& run) {
  const PpcaSource src = ppca_source(c);
  const Dataset& data = src.data;
  const Index D = data.dim();
  std::vector<std::pair<std::string, PpcaParams>> models;
  for (const auto& path : c.texts("checkpoints")) models.emplace_back(fs::path(path).stem().string(), load_ppca(path));
  if (models.empty()) {
    if (!src.gt) throw config_error("curve needs 'checkpoints' or 'params'");
    models.emplace_back("params", *src.gt);
  }
  for (const auto& [label, p] : models)
    if (p.dim() != D) throw config_error("checkpoint '" + label + "' does not match the data dimension");

  const std::string grid = c.text("grid");
  std::vector<Index> sizes;
  if (grid == "full") {
    for (Index m = 1; m <= D; ++m) sizes.push_back(m);
  } else if (grid == "percent") {
    sizes = percent_grid(D);
  } else {
    throw config_error("grid must be 'full' or 'percent'");
  }
  MaskBudget budget = MaskBudget::sampled(c.integer("P"));
  if (c.flag("exhaustive")) {
    if (D > kExactMaxDim) throw config_error("exhaustive curves need D <= " + std::to_string(kExactMaxDim));
    budget = MaskBudget::all();
  } else if (budget.count < 1) {
    throw config_error("P must be >= 1");
  }

  const Stream base = Stream(c.seed()).child({tag::kMask});
  const double n = static_cast<double>(data.size());
  std::ofstream areas(run.path("areas.csv"), std::ios::binary);
  if (!areas) throw Error(ErrorCode::IoError, "cannot write areas.csv");
  areas << "index,label,area,lml_per_obs,rel_err,max_dev_in_pooled_se\n";
  json items = json::array();
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& [label, params] = models[i];
    const MptCurve curve = mpt_curve(marginal_covariance(params), data.rows, sizes, budget, base, c.workers());
    const std::string name = "curve_" + std::to_string(i) + ".csv";
    write_curve_csv(run.path(name), curve);
    const CurveReport rep = curve_report(curve);
    const double lml_obs = lml(params, data) / n;
    const double rel = (rep.area - lml_obs) / std::abs(lml_obs);
    areas << i << ',' << label << ',' << format_double(rep.area) << ',' << format_double(lml_obs) << ','
          << format_double(rel) << ',' << format_double(rep.max_dev_in_pooled_se) << '\n';
    items.push_back({{"index", i},
                     {"label", label},
                     {"curve", name},
                     {"area", rep.area},
                     {"lml_per_obs", lml_obs},
                     {"rel_err", rel},
                     {"max_dev_in_pooled_se", rep.max_dev_in_pooled_se}});
  }
  if (!areas.flush()) throw Error(ErrorCode::IoError, "failed writing areas.csv");
  return {{"command", "curve"}, {"D", D}, {"N", data.size()}, {"grid", grid}, {"points", sizes.size()},
          {"curves", items}};
}

// ------------------------------------------------------------- area-import

json cmd_area_import(const Config& c, Run& run) {
  if (c.is_null("file")) throw config_error("area-import needs a curve file");
  std::optional<Index> dim;
  if (!c.is_null("dim")) {
    dim = c.integer("dim");
    if (*dim < 1) throw config_error("dim must be >= 1");
  }
  const MptCurve curve = read_curve_csv(c.text("file"), dim);
  write_curve_csv(run.path("curve.csv"), curve);
  bool full = static_cast<Index>(curve.points.size()) == curve.dim;
  return {{"command", "area-import"},
          {"file", c.text("file")},
          {"points", curve.points.size()},
          {"dim", curve.dim},
          {"full_grid", full},
          {"area", curve_area(curve)}};
}

struct CommandSpec {
  std::function<json()> defaults;
  std::function<json(const Config&, Run&)> run;
};

const std::map<std::string, CommandSpec>& commands() {
  static const std::map<std::string, CommandSpec> table = {
      {"gen-data",
       {[] {
          return json{{"model", "ppca"}, {"D", 10},       {"K", 2},        {"N", 2000},
                      {"w_std", 1.0},   {"mu_std", 1.0}, {"sigma2", 0.5}, {"data_seed", nullptr}};
        },
        cmd_gen_data}},
      {"convergence",
       {[] {
          return merge(ppca_source_defaults(), {{"D", 5},
                                                {"N", 20},
                                                {"P_values", {1, 10, 100}},
                                                {"replicates", 100},
                                                {"exhaustive", false},
                                                {"unfixed", true},
                                                {"fixed_rate", nullptr},
                                                {"bias_masks", 1000}});
        },
        cmd_convergence}},
      {"train",
       {[] {
          return merge(merge(ppca_source_defaults(), optimizer_defaults(1e-2)),
                       {{"latent", 2},
                        {"regime", "unfixed"},
                        {"rate", 0.2},
                        {"epochs", 1000},
                        {"masks_per_epoch", 1},
                        {"inits", 5},
                        {"init_w_std", 0.1},
                        {"form", "auto"},
                        {"checkpoint_epochs", json::array()},
                        {"final_window", 100},
                        {"bias_masks", 1000}});
        },
        cmd_train}},
      {"train-bernoulli",
       {[] {
          return merge(optimizer_defaults(0.05), {{"data", nullptr},
                                                  {"images", nullptr},
                                                  {"crop", 0},
                                                  {"downsample", 1},
                                                  {"threshold", 0.5},
                                                  {"max_rows", 2000},
                                                  {"D", 16},
                                                  {"N", 2000},
                                                  {"w_std", 2.0},
                                                  {"mu_std", 1.0},
                                                  {"data_seed", nullptr},
                                                  {"objective", "both"},
                                                  {"inits", 5},
                                                  {"rate", 0.33},
                                                  {"epochs", 200},
                                                  {"init", "pca"},
                                                  {"init_scale", 3.0},
                                                  {"init_w_std", 0.1},
                                                  {"grid_points", 80},
                                                  {"grid_half_width", 6.0},
                                                  {"hermite_order", 20},
                                                  {"log_every", 1}});
        },
        cmd_train_bernoulli}},
      {"curve",
       {[] {
          return merge(ppca_source_defaults(),
                       {{"checkpoints", json::array()}, {"grid", "full"}, {"P", 100}, {"exhaustive", false}});
        },
        cmd_curve}},
      {"area-import", {[] { return json{{"file", nullptr}, {"dim", nullptr}}; }, cmd_area_import}},
  };
  return table;
}

}  // namespace

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidMaskSize:
    case ErrorCode::EnumerationTooLarge:
    case ErrorCode::DimensionMismatch:
      return 2;
    case ErrorCode::IoError:
    case ErrorCode::MalformedCurveFile:
    case ErrorCode::MalformedInput:
    case ErrorCode::EmptyCurve:
      return 3;
    case ErrorCode::NotPositiveDefinite:
    case ErrorCode::AsymmetricInput:
    case ErrorCode::NonFiniteLoss:
      return 4;
  }
  return 4;
}

const std::vector<std::string>& experiment_commands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [name, spec] : commands()) v.push_back(name);
    return v;
  }();
  return names;
}

RunOutcome run_experiment(const std::string& command, const std::string& config_json,
                          const RunOverrides& overrides) {
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto it = commands().find(command);
    if (it == commands().end()) throw config_error("unknown command '" + command + "'");
    json user = json::object();
    if (!config_json.empty()) {
      try {
        user = json::parse(config_json);
      } catch (const json::parse_error& e) {
        throw config_error(std::string("config is not valid JSON: ") + e.what());
      }
    }
    const Config cfg(it->second.defaults(), user, overrides);
    Run run(cfg);
    const std::string resolved = cfg.resolved().dump(2) + "\n";
    write_text_file(run.path("resolved_config.json"), resolved);

    int status = 0;
    std::string message;
    json summary;
    try {
      summary = it->second.run(cfg, run);
    } catch (const Error& e) {
      if (exit_code_for(e.code()) != 4) throw;
      status = 4;
      message = e.what();
      summary = {{"command", command}, {"error", message}, {"error_code", to_string(e.code())}};
    }
    if (summary.contains("error") && status == 0) {
      status = 4;
      message = summary["error"].get<std::string>();
    }
    run.write_json("summary.json", summary);

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json manifest{{"command", command},
                  {"version", MPTLML_VERSION},
                  {"config_sha256", sha256_hex(resolved)},
                  {"resolved_config", "resolved_config.json"},
                  {"artifacts", run.artifacts()},
                  {"exit_code", status},
                  {"wall_clock_seconds", seconds}};
    write_text_file((run.dir() / "manifest.json").string(), manifest.dump(2) + "\n");
    return {status, message};
  } catch (const Error& e) {
    return {exit_code_for(e.code()), e.what()};
  } catch (const std::exception& e) {
    return {4, e.what()};
  }
}

}  // namespace mptlml
