#include "mptlml/training.hpp"

#include <cmath>

#include "mptlml/parallel.hpp"

namespace mptlml {

namespace {

struct Summary {
  double mean = 0.0, std = 0.0, std_err = 0.0;
};

Summary summarize(const std::vector<double>& values) {
  Summary s;
  const auto n = static_cast<double>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= n;
  if (values.size() < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / (n - 1.0));
  s.std_err = s.std / std::sqrt(n);
  return s;
}

ConvergenceRow make_row(Index P, const std::vector<double>& values, double lml) {
  const Summary s = summarize(values);
  return ConvergenceRow{P, s.mean, s.std, s.std_err, (s.mean - lml) / std::abs(lml)};
}

}  // namespace

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { return Error(ErrorCode::ConfigError, what); };
  if (regime == Regime::Fixed && !(rate > 0.0 && rate < 1.0)) throw bad("fixed masking rate must lie in (0, 1)");
  if (epochs < 1) throw bad("epochs must be >= 1");
  if (!(optimizer.learning_rate >= 0.0)) throw bad("learning rate must be >= 0");
  if (masks_per_epoch < 1) throw bad("masks per epoch must be >= 1");
  if (workers < 1) throw bad("workers must be >= 1");
}

TrainingAborted::TrainingAborted(Index epoch, TrainTrace partial)
    : Error(ErrorCode::NonFiniteLoss, "non-finite objective at epoch " + std::to_string(epoch)),
      epoch_(epoch),
      partial_(std::move(partial)) {}

TrainTrace train(const PpcaParams& init, const Dataset& data, const TrainConfig& config) {
  config.validate();
  init.validate();
  data.validate();
  if (data.dim() != init.dim()) throw Error(ErrorCode::DimensionMismatch, "data/model dimension mismatch");

  const Index D = init.dim(), K = init.latent();
  const auto n = static_cast<std::size_t>(data.size());
  const Stream base(config.seed);
  Optimizer opt(D * K + D + 1, config.optimizer);
  Vector flat = flatten(init);

  TrainTrace trace;
  trace.config = config;
  trace.records.reserve(static_cast<std::size_t>(config.epochs));
  std::vector<ParamGrad> grads(n, ParamGrad::zeros(D, K));
  std::vector<double> values(n);

  for (Index e = 0; e < config.epochs; ++e) {
    const PpcaParams params = unflatten_params(flat, D, K);
    for (Index c : config.checkpoint_epochs)
      if (c == e) trace.checkpoints.emplace(e, params);

    Index m = 0;
    if (config.regime == Regime::Unfixed) {
      Stream s = base.child({tag::kMaskSize, static_cast<std::uint64_t>(e)});
      m = sample_mask_size(D, s);
    } else {
      m = mask_size_for_rate(config.rate, D);
    }
    const double scale = (config.regime == Regime::Unfixed ? static_cast<double>(D) / static_cast<double>(m) : 1.0) /
                         static_cast<double>(config.masks_per_epoch);

    EpochRecord rec;
    rec.epoch = e;
    rec.mask_size = m;
    bool finite = true;
    try {
      const MaskedObjective objective(params);
      parallel_for(n, config.workers, [&](std::size_t i) {
        ParamGrad& g = grads[i];
        g.dW.setZero();
        g.dmu.setZero();
        g.dlog_sigma2 = 0.0;
        const auto x = data.rows.row(static_cast<Eigen::Index>(i)).transpose();
        double v = 0.0;
        for (Index p = 0; p < config.masks_per_epoch; ++p) {
          Stream s = base.child({tag::kMask, static_cast<std::uint64_t>(e), i, static_cast<std::uint64_t>(p)});
          const MaskPair mask = sample_mask(D, m, s);
          v += scale * objective.accumulate(x, mask, config.form, scale, &g);
        }
        values[i] = v;
      });
      rec.exact_lml = lml(params, data);
    } catch (const Error& err) {
      if (err.code() != ErrorCode::NotPositiveDefinite) throw;
      finite = false;
    }

    ParamGrad total = ParamGrad::zeros(D, K);
    if (finite) {
      for (std::size_t i = 0; i < n; ++i) {
        rec.neg_mpt += values[i];
        total += grads[i];
      }
      total *= 1.0 / static_cast<double>(n);
      rec.grad_norm = total.norm();
      finite = std::isfinite(rec.neg_mpt) && std::isfinite(rec.exact_lml) && std::isfinite(rec.grad_norm);
    }
    if (!finite) {
      trace.final_params = params;
      throw TrainingAborted(e, std::move(trace));
    }
    trace.records.push_back(rec);
    opt.ascend(flat, flatten(total));
  }
  trace.final_params = unflatten_params(flat, D, K);
  for (Index c : config.checkpoint_epochs)
    if (c == config.epochs) trace.checkpoints.emplace(c, trace.final_params);
  return trace;
}

ConvergenceReport convergence_study(const PpcaParams& params, const Dataset& data,
                                    const ConvergenceSettings& settings) {
  if (settings.replicates < 2) throw Error(ErrorCode::ConfigError, "replicates must be >= 2");
  const GaussianJoint joint = marginal_covariance(params);
  const Index D = joint.dim();
  if (data.dim() != D) throw Error(ErrorCode::DimensionMismatch, "data/model dimension mismatch");
  const auto n = data.size();
  const auto R = static_cast<std::size_t>(settings.replicates);
  const Stream base(settings.seed);

  ConvergenceReport report;
  report.lml = lml(params, data);

  // Runs one replicate-summed estimator for every replicate at budget P.
  auto replicate = [&](Index P, auto&& per_row) {
    std::vector<double> out(R);
    parallel_for(R, settings.workers, [&](std::size_t r) {
      const Stream rep = base.child({tag::kReplicate, r, static_cast<std::uint64_t>(P)});
      double total = 0.0;
      for (Index i = 0; i < n; ++i)
        total += per_row(data.rows.row(i).transpose(), MaskBudget::sampled(P),
                         rep.child({static_cast<std::uint64_t>(i)}));
      out[r] = total;
    });
    return out;
  };

  if (settings.run_unfixed) {
    for (Index P : settings.P_values) {
      const auto vals = replicate(P, [&](const Vector& x, const MaskBudget& b, const Stream& s) {
        return cumulative_mpt(joint, x, b, s);
      });
      report.unfixed.push_back(make_row(P, vals, report.lml));
    }
    if (settings.include_exhaustive) {
      double total = 0.0;
      for (Index i = 0; i < n; ++i) total += exact_cumulative(joint, data.rows.row(i).transpose());
      report.unfixed.push_back({0, total, 0.0, 0.0, (total - report.lml) / std::abs(report.lml)});
    }
  }

  if (settings.fixed_rate) {
    FixedRateStudy study;
    study.rate = *settings.fixed_rate;
    study.mask_size = mask_size_for_rate(study.rate, D);
    const Index m = study.mask_size;
    for (Index P : settings.P_values) {
      const auto vals = replicate(P, [&](const Vector& x, const MaskBudget& b, const Stream& s) {
        return fixed_rate_loss(joint, x, m, b, s, ConditionalForm::Block).value;
      });
      study.rows.push_back(make_row(P, vals, report.lml));
    }
    if (settings.include_exhaustive) {
      double total = 0.0;
      for (Index i = 0; i < n; ++i)
        total += fixed_rate_loss(joint, data.rows.row(i).transpose(), m, MaskBudget::all(), base).value;
      study.rows.push_back({0, total, 0.0, 0.0, (total - report.lml) / std::abs(report.lml)});
    }
    // Direct bias from independent masks.
    std::vector<ScoreEstimate> bias(static_cast<std::size_t>(n));
    const Stream bias_stream = base.child({tag::kBias});
    parallel_for(static_cast<std::size_t>(n), settings.workers, [&](std::size_t i) {
      bias[i] = fixed_rate_bias(joint, data.rows.row(static_cast<Eigen::Index>(i)).transpose(), m,
                                MaskBudget::sampled(settings.bias_masks), bias_stream.child({i}));
    });
    double mean = 0.0, var = 0.0;
    for (const auto& b : bias) {
      mean += b.value;
      var += b.std_err * b.std_err;
    }
    study.bias = -mean;
    study.bias_std_err = std::sqrt(var);
    study.bias_rel = study.bias / std::abs(report.lml);
    study.bias_rel_std_err = study.bias_std_err / std::abs(report.lml);
    report.fixed = std::move(study);
  }
  return report;
}

}  // namespace mptlml
