#include "mptlml/scoring.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mptlml/error.hpp"
#include "mptlml/text.hpp"
#include "mptlml/parallel.hpp"

namespace mptlml {

namespace {

void finish(ScoreEstimate& est, bool exact) {
  const auto P = static_cast<double>(est.samples.size());
  double sum = 0.0;
  for (double s : est.samples) sum += s;
  est.value = sum / P;
  est.num_masks = static_cast<Index>(est.samples.size());
  est.single_sample = est.samples.size() == 1 && !exact;
  if (exact || est.samples.size() < 2) {
    est.std_err = 0.0;
    return;
  }
  double ss = 0.0;
  for (double s : est.samples) ss += (s - est.value) * (s - est.value);
  est.std_err = std::sqrt(ss / (P - 1.0)) / std::sqrt(P);
}

double token_sum(const GaussianJoint& joint, const Eigen::Ref<const Vector>& x, const MaskPair& mask) {
  const ConditionalGaussian c = conditional(joint, mask, gather(x, mask.rest));
  double total = 0.0;
  for (std::size_t t = 0; t < mask.masked.size(); ++t) {
    const auto k = static_cast<Eigen::Index>(t);
    total += log_normal_1d(x[mask.masked[t]], c.mean[k], c.cov(k, k));
  }
  return total;
}

void check_fixed_size(Index dim, Index m) {
  if (m < 1 || m >= dim)
    throw Error(ErrorCode::InvalidMaskSize, "fixed-rate mask size must satisfy 1 <= m < D");
}

}  // namespace

MaskBudget MaskBudget::sampled(Index P) {
  if (P < 1) throw Error(ErrorCode::ConfigError, "number of masks P must be >= 1");
  return MaskBudget{P, false};
}

std::vector<MaskPair> masks_for(Index dim, Index m, const MaskBudget& budget, const Stream& rng) {
  if (budget.exhaustive) return enumerate_masks(dim, m);
  std::vector<MaskPair> masks;
  masks.reserve(static_cast<std::size_t>(budget.count));
  for (Index p = 0; p < budget.count; ++p) {
    Stream s = rng.child({tag::kMask, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(p)});
    masks.push_back(sample_mask(dim, m, s));
  }
  return masks;
}

ScoreEstimate score(const GaussianJoint& joint, const Eigen::Ref<const Vector>& x, Index m,
                    const MaskBudget& budget, const Stream& rng) {
  const Index D = joint.dim();
  if (x.size() != D) throw Error(ErrorCode::DimensionMismatch, "observation dimension mismatch");
  ScoreEstimate est;
  est.mask_size = m;
  for (const auto& mask : masks_for(D, m, budget, rng))
    est.samples.push_back(token_sum(joint, x, mask) / static_cast<double>(m));
  finish(est, budget.exhaustive || m == D);
  return est;
}

double cumulative_mpt(const GaussianJoint& joint, const Eigen::Ref<const Vector>& x,
                      const MaskBudget& budget, const Stream& rng) {
  double total = 0.0;
  for (Index m = 1; m <= joint.dim(); ++m) total += score(joint, x, m, budget, rng).value;
  return total;
}

double exact_cumulative(const GaussianJoint& joint, const Eigen::Ref<const Vector>& x) {
  if (joint.dim() > kExactMaxDim)
    throw Error(ErrorCode::EnumerationTooLarge,
                "exhaustive cumulative score is limited to D <= " + std::to_string(kExactMaxDim));
  return cumulative_mpt(joint, x, MaskBudget::all(), Stream(0));
}

ScoreEstimate fixed_rate_loss(const GaussianJoint& joint, const Eigen::Ref<const Vector>& x, Index m,
                              const MaskBudget& budget, const Stream& rng, ConditionalForm form) {
  const Index D = joint.dim();
  check_fixed_size(D, m);
  if (x.size() != D) throw Error(ErrorCode::DimensionMismatch, "observation dimension mismatch");
  ScoreEstimate est;
  est.mask_size = m;
  for (const auto& mask : masks_for(D, m, budget, rng)) {
    if (form == ConditionalForm::TokenWise) {
      est.samples.push_back(token_sum(joint, x, mask));
    } else {
      const ConditionalGaussian c = conditional(joint, mask, gather(x, mask.rest));
      est.samples.push_back(log_density(c, gather(x, mask.masked)));
    }
  }
  finish(est, budget.exhaustive);
  return est;
}

ScoreEstimate fixed_rate_bias(const GaussianJoint& joint, const Eigen::Ref<const Vector>& x, Index m,
                              const MaskBudget& budget, const Stream& rng) {
  const Index D = joint.dim();
  check_fixed_size(D, m);
  if (x.size() != D) throw Error(ErrorCode::DimensionMismatch, "observation dimension mismatch");
  ScoreEstimate est;
  est.mask_size = m;
  for (const auto& mask : masks_for(D, m, budget, rng))
    est.samples.push_back(log_density(marginal(joint, mask.rest), gather(x, mask.rest)));
  finish(est, budget.exhaustive);
  return est;
}

MptCurve mpt_curve(const GaussianJoint& joint, const Matrix& data, const std::vector<Index>& sizes,
                   const MaskBudget& budget, const Stream& rng, int workers) {
  const Index D = joint.dim();
  if (data.cols() != D) throw Error(ErrorCode::DimensionMismatch, "data/model dimension mismatch");
  for (std::size_t s = 0; s < sizes.size(); ++s)
    if (sizes[s] < 1 || sizes[s] > D || (s > 0 && sizes[s] <= sizes[s - 1]))
      throw Error(ErrorCode::InvalidMaskSize, "curve sizes must be strictly increasing within 1..D");

  const auto n = static_cast<std::size_t>(data.rows());
  // per_obs[i][s] holds the per-mask samples of observation i at size s.
  std::vector<std::vector<std::vector<double>>> per_obs(n);
  parallel_for(n, workers, [&](std::size_t i) {
    const Vector x = data.row(static_cast<Eigen::Index>(i)).transpose();
    const Stream obs = rng.child({static_cast<std::uint64_t>(i)});
    per_obs[i].reserve(sizes.size());
    for (Index m : sizes) per_obs[i].push_back(score(joint, x, m, budget, obs).samples);
  });

  MptCurve curve;
  curve.dim = D;
  curve.num_masks = budget.exhaustive ? 0 : budget.count;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    double sum = 0.0, count = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (double v : per_obs[i][s]) sum += v, count += 1.0;
    const double mean = sum / count;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (double v : per_obs[i][s]) ss += (v - mean) * (v - mean);
    const double se = count > 1.0 ? std::sqrt(ss / (count - 1.0) / count) : 0.0;
    curve.points.push_back({sizes[s], static_cast<double>(sizes[s]) / static_cast<double>(D), mean, se});
  }
  return curve;
}

double curve_area(const MptCurve& curve) {
  if (curve.points.empty()) throw Error(ErrorCode::EmptyCurve, "curve has no points");
  double sum = 0.0;
  for (const auto& p : curve.points) sum += p.mean;
  bool full = static_cast<Index>(curve.points.size()) == curve.dim;
  for (std::size_t i = 0; full && i < curve.points.size(); ++i)
    full = curve.points[i].mask_size == static_cast<Index>(i) + 1;
  if (full) return sum;
  return sum * static_cast<double>(curve.dim) / static_cast<double>(curve.points.size());
}

void write_curve_csv(std::ostream& out, const MptCurve& curve) {
  out << "mask_size,rate,score_mean,score_stderr\n";
  for (const auto& p : curve.points)
    out << p.mask_size << ',' << format_double(p.rate) << ',' << format_double(p.mean) << ','
        << format_double(p.std_err) << '\n';
}

void write_curve_csv(const std::string& path, const MptCurve& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  write_curve_csv(out, curve);
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path);
}

MptCurve read_curve_csv(std::istream& in, std::optional<Index> dim) {
  auto fail = [](std::size_t line, const std::string& why) {
    return Error(ErrorCode::MalformedCurveFile, "line " + std::to_string(line) + ": " + why);
  };
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw fail(1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "mask_size,rate,score_mean,score_stderr") throw fail(1, "unexpected header '" + line + "'");

  MptCurve curve;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 4) throw fail(lineno, "expected 4 fields, got " + std::to_string(fields.size()));
    CurvePoint p;
    double size = 0.0;
    if (!parse_double(fields[0], size) || size < 1 || size != std::floor(size))
      throw fail(lineno, "mask_size must be a positive integer");
    p.mask_size = static_cast<Index>(size);
    if (!parse_double(fields[1], p.rate) || !(p.rate > 0.0 && p.rate <= 1.0))
      throw fail(lineno, "rate must lie in (0, 1]");
    if (!parse_double(fields[2], p.mean) || !std::isfinite(p.mean)) throw fail(lineno, "bad score_mean");
    if (!parse_double(fields[3], p.std_err) || !(p.std_err >= 0.0)) throw fail(lineno, "bad score_stderr");
    if (!curve.points.empty() && p.mask_size <= curve.points.back().mask_size)
      throw fail(lineno, "mask sizes must be strictly increasing");
    curve.points.push_back(p);
  }
  if (curve.points.empty()) throw Error(ErrorCode::EmptyCurve, "curve file has no data rows");
  const auto& last = curve.points.back();
  curve.dim = dim ? *dim : static_cast<Index>(std::llround(static_cast<double>(last.mask_size) / last.rate));
  if (curve.dim < last.mask_size)
    throw Error(ErrorCode::MalformedCurveFile, "mask sizes exceed the dimension " + std::to_string(curve.dim));
  return curve;
}

MptCurve read_curve_csv(const std::string& path, std::optional<Index> dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return read_curve_csv(in, dim);
}

}  // namespace mptlml
