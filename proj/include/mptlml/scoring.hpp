#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mptlml/gaussian.hpp"
#include "mptlml/masking.hpp"
#include "mptlml/ppca.hpp"

namespace mptlml {

// How many masks to average per mask size: P i.i.d. uniform draws (with
// replacement), or every one of the binom(D, m) masks.
struct MaskBudget {
  Index count = 1;
  bool exhaustive = false;

  static MaskBudget sampled(Index P);
  static MaskBudget all() { return MaskBudget{0, true}; }
};

struct ScoreEstimate {
  double value = 0.0;
  std::vector<double> samples;  // one per mask
  double std_err = 0.0;         // std(samples) / sqrt(P); 0 when exact or P = 1
  Index mask_size = 0;
  Index num_masks = 0;
  bool single_sample = false;  // std_err is 0 only by convention
};

struct CurvePoint {
  Index mask_size = 0;
  double rate = 0.0;
  double mean = 0.0;
  double std_err = 0.0;
};

struct MptCurve {
  std::vector<CurvePoint> points;  // strictly increasing mask sizes
  Index dim = 0;
  Index num_masks = 0;
};

// The masks used for size m: enumerated in lexicographic order, or drawn from
// rng.child({tag::kMask, m, p}) for p = 0..P-1.
std::vector<MaskPair> masks_for(Index dim, Index m, const MaskBudget& budget, const Stream& rng);

// Average over masks of (1/m) sum_{j in M} log p(x_j | x_R). Each per-token
// conditional is the diagonal of the block conditional given the full rest.
ScoreEstimate score(const GaussianJoint& joint, const Eigen::Ref<const Vector>& x, Index m,
                    const MaskBudget& budget, const Stream& rng);

// sum_{m=1}^{D} score(x; m): an estimator of log p(x), exact for MaskBudget::all().
double cumulative_mpt(const GaussianJoint& joint, const Eigen::Ref<const Vector>& x,
                      const MaskBudget& budget, const Stream& rng);

inline constexpr Index kExactMaxDim = 12;

// Deterministic exhaustive sum; throws EnumerationTooLarge for D > 12.
double exact_cumulative(const GaussianJoint& joint, const Eigen::Ref<const Vector>& x);

// Unnormalised masked objective at a fixed size, 1 <= m < D: the average over
// masks of log p(x_M | x_R) in the chosen form.
ScoreEstimate fixed_rate_loss(const GaussianJoint& joint, const Eigen::Ref<const Vector>& x, Index m,
                              const MaskBudget& budget, const Stream& rng,
                              ConditionalForm form = ConditionalForm::Block);

// Average over masks of log p(x_R). With the block form, loss + bias = log p(x)
// holds mask by mask when both use the same rng.
ScoreEstimate fixed_rate_bias(const GaussianJoint& joint, const Eigen::Ref<const Vector>& x, Index m,
                              const MaskBudget& budget, const Stream& rng);

// Dataset-mean score per size. Observation i uses rng.child({i}). The standard
// error pools every (observation, mask) sample; with a single mask per size it
// is the across-observation spread.
MptCurve mpt_curve(const GaussianJoint& joint, const Matrix& data, const std::vector<Index>& sizes,
                   const MaskBudget& budget, const Stream& rng, int workers = 1);

// Sum of point means when the sizes cover 1..D, otherwise the sum rescaled by
// D / (number of points). Throws EmptyCurve.
double curve_area(const MptCurve& curve);

// CSV with header mask_size,rate,score_mean,score_stderr.
void write_curve_csv(std::ostream& out, const MptCurve& curve);
void write_curve_csv(const std::string& path, const MptCurve& curve);
// Throws MalformedCurveFile naming the offending line. When dim is not given
// it is inferred as round(mask_size / rate) of the last row.
MptCurve read_curve_csv(std::istream& in, std::optional<Index> dim = std::nullopt);
MptCurve read_curve_csv(const std::string& path, std::optional<Index> dim = std::nullopt);

}  // namespace mptlml
