#pragma once

#include <map>
#include <optional>
#include <vector>

#include "mptlml/error.hpp"
#include "mptlml/optim.hpp"
#include "mptlml/ppca.hpp"
#include "mptlml/scoring.hpp"

namespace mptlml {

enum class Regime {
  Unfixed,  // mask size uniform on {1..D} each epoch
  Fixed,    // mask size floor(rate * D)
};

struct TrainConfig {
  Regime regime = Regime::Unfixed;
  double rate = 0.2;  // fixed regime only, 0 < rate < 1
  Index epochs = 1000;
  OptimizerSettings optimizer;
  Index masks_per_epoch = 1;  // P masks per observation per epoch
  std::uint64_t seed = 0;
  double init_w_std = 0.1;
  // Token-wise is what the unfixed-rate estimator needs to be unbiased; the
  // block form makes loss + bias = lml exact per mask.
  ConditionalForm form = ConditionalForm::TokenWise;
  int workers = 1;
  std::vector<Index> checkpoint_epochs;

  void validate() const;
};

struct EpochRecord {
  Index epoch = 0;
  double neg_mpt = 0.0;    // dataset sum of the masked objective estimate
  double exact_lml = 0.0;  // dataset lml at the same parameters
  double grad_norm = 0.0;  // norm of the per-observation mean gradient
  Index mask_size = 0;
};

struct TrainTrace {
  std::vector<EpochRecord> records;
  PpcaParams final_params;
  TrainConfig config;
  std::map<Index, PpcaParams> checkpoints;  // parameters at the start of each listed epoch
};

// Thrown when an epoch produces a non-finite objective or gradient; carries
// the records completed before the failing epoch.
class TrainingAborted : public Error {
 public:
  TrainingAborted(Index epoch, TrainTrace partial);
  Index epoch() const { return epoch_; }
  const TrainTrace& partial() const { return partial_; }

 private:
  Index epoch_;
  TrainTrace partial_;
};

// Full-batch stochastic ascent of the masked objective. Epoch e draws its mask
// size from Stream(seed).child({kMaskSize, e}) and the p-th mask of
// observation i from Stream(seed).child({kMask, e, i, p}). In the unfixed
// regime each masked-token sum is scaled by D/m, giving an unbiased estimate
// of the row lml; the optimizer sees the gradient averaged over observations.
TrainTrace train(const PpcaParams& init, const Dataset& data, const TrainConfig& config);

struct ConvergenceRow {
  Index P = 0;  // 0 marks the exhaustive row
  double mean = 0.0;
  double std = 0.0;
  double std_err = 0.0;
  double rel_diff = 0.0;  // (mean - lml) / |lml|
};

struct FixedRateStudy {
  double rate = 0.0;
  Index mask_size = 0;
  std::vector<ConvergenceRow> rows;
  // Direct estimate of -sum_i E_M[log p(x_R)], its standard error, and the same
  // quantity relative to |lml|.
  double bias = 0.0;
  double bias_std_err = 0.0;
  double bias_rel = 0.0;
  double bias_rel_std_err = 0.0;
};

struct ConvergenceReport {
  double lml = 0.0;
  std::vector<ConvergenceRow> unfixed;
  std::optional<FixedRateStudy> fixed;
};

struct ConvergenceSettings {
  std::vector<Index> P_values{1, 10, 100};
  Index replicates = 100;
  std::uint64_t seed = 0;
  bool include_exhaustive = false;  // appends a P = 0 row, needs D <= 12
  bool run_unfixed = true;
  std::optional<double> fixed_rate;
  Index bias_masks = 1000;  // masks per observation for the direct bias
  int workers = 1;
};

// Replicate r at budget P uses Stream(seed).child({kReplicate, r, P}) and
// observation i its child({i}). Each replicate sums the estimator over the
// dataset; rows report the across-replicate mean and spread.
ConvergenceReport convergence_study(const PpcaParams& params, const Dataset& data,
                                    const ConvergenceSettings& settings);

}  // namespace mptlml
