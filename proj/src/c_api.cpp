#include "mptlml/mptlml.h"

#include <algorithm>
#include <cstring>
#include <memory>
#include <optional>
#include <string>

#include "mptlml/error.hpp"
#include "mptlml/experiments.hpp"
#include "mptlml/io.hpp"
#include "mptlml/scoring.hpp"

struct mpt_ppca {
  mptlml::PpcaParams params;
};

struct mpt_dataset {
  mptlml::Dataset data;
};

namespace {

thread_local std::string last_error;

mpt_status status_for(mptlml::ErrorCode code) {
  using mptlml::ErrorCode;
  switch (code) {
    case ErrorCode::NotPositiveDefinite: return MPT_ERR_NOT_POSITIVE_DEFINITE;
    case ErrorCode::AsymmetricInput: return MPT_ERR_ASYMMETRIC_INPUT;
    case ErrorCode::DimensionMismatch: return MPT_ERR_DIMENSION_MISMATCH;
    case ErrorCode::InvalidMaskSize: return MPT_ERR_INVALID_MASK_SIZE;
    case ErrorCode::EnumerationTooLarge: return MPT_ERR_ENUMERATION_TOO_LARGE;
    case ErrorCode::EmptyCurve: return MPT_ERR_EMPTY_CURVE;
    case ErrorCode::MalformedCurveFile: return MPT_ERR_MALFORMED_CURVE_FILE;
    case ErrorCode::MalformedInput: return MPT_ERR_MALFORMED_INPUT;
    case ErrorCode::NonFiniteLoss: return MPT_ERR_NON_FINITE_LOSS;
    case ErrorCode::ConfigError: return MPT_ERR_CONFIG;
    case ErrorCode::IoError: return MPT_ERR_IO;
  }
  return MPT_ERR_INTERNAL;
}

template <class Fn>
mpt_status guard(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return MPT_OK;
  } catch (const mptlml::Error& e) {
    last_error = e.what();
    return status_for(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown error";
  }
  return MPT_ERR_INTERNAL;
}


mpt_status invalid(const char* what) {
  last_error = what;
  return MPT_ERR_INVALID_ARGUMENT;
}

Eigen::Map<const mptlml::Vector> observation(const mpt_ppca* p, const double* x, size_t len) {
  if (static_cast<mptlml::Index>(len) != p->params.dim())
    throw mptlml::Error(mptlml::ErrorCode::DimensionMismatch, "observation length differs from D");
  return {x, static_cast<Eigen::Index>(len)};
}

mptlml::MaskBudget budget_for(int64_t masks) {
  return masks == 0 ? mptlml::MaskBudget::all() : mptlml::MaskBudget::sampled(masks);
}

}  // namespace

#define MPT_CHECK(cond, msg) \
  if (!(cond)) return invalid(msg)

extern "C" {

const char* mpt_version(void) { return MPTLML_VERSION; }

const char* mpt_status_string(mpt_status status) {
  switch (status) {
    case MPT_OK: return "ok";
    case MPT_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MPT_ERR_INTERNAL: return "internal error";
    default: break;
  }
  if (status >= MPT_ERR_NOT_POSITIVE_DEFINITE && status <= MPT_ERR_IO)
    return mptlml::to_string(static_cast<mptlml::ErrorCode>(status - 1));
  return "unknown status";
}

const char* mpt_last_error(void) { return last_error.c_str(); }

mpt_status mpt_ppca_create(int64_t dim, int64_t latent, const double* W, const double* mu, double log_sigma2,
                           mpt_ppca** out) {
  MPT_CHECK(out && W && mu, "null pointer argument");
  MPT_CHECK(dim >= 1 && latent >= 1, "dimensions must be positive");
  return guard([&] {
    auto h = std::make_unique<mpt_ppca>();
    h->params.W.resize(dim, latent);
    for (int64_t i = 0; i < dim; ++i)
      for (int64_t k = 0; k < latent; ++k) h->params.W(i, k) = W[i * latent + k];
    h->params.mu = Eigen::Map<const mptlml::Vector>(mu, dim);
    h->params.log_sigma2 = log_sigma2;
    h->params.validate();
    *out = h.release();
  });
}

mpt_status mpt_ppca_load(const char* path, mpt_ppca** out) {
  MPT_CHECK(path && out, "null pointer argument");
  return guard([&] { *out = new mpt_ppca{mptlml::load_ppca(path)}; });
}

mpt_status mpt_ppca_save(const mpt_ppca* params, const char* path) {
  MPT_CHECK(params && path, "null pointer argument");
  return guard([&] { mptlml::save_ppca(path, params->params); });
}

mpt_status mpt_ppca_dims(const mpt_ppca* params, int64_t* dim, int64_t* latent) {
  MPT_CHECK(params, "null pointer argument");
  if (dim) *dim = params->params.dim();
  if (latent) *latent = params->params.latent();
  return MPT_OK;
}

void mpt_ppca_destroy(mpt_ppca* params) { delete params; }

mpt_status mpt_dataset_sample(const mpt_ppca* params, int64_t n, uint64_t seed, mpt_dataset** out) {
  MPT_CHECK(params && out, "null pointer argument");
  MPT_CHECK(n >= 1, "n must be >= 1");
  return guard([&] { *out = new mpt_dataset{mptlml::sample_dataset(params->params, n, seed)}; });
}

mpt_status mpt_dataset_load(const char* path, mpt_dataset** out) {
  MPT_CHECK(path && out, "null pointer argument");
  return guard([&] {
    auto h = std::make_unique<mpt_dataset>();
    h->data.rows = mptlml::read_dataset_csv(std::string(path));
    h->data.meta.source = path;
    *out = h.release();
  });
}

mpt_status mpt_dataset_save(const mpt_dataset* data, const char* path) {
  MPT_CHECK(data && path, "null pointer argument");
  return guard([&] { mptlml::write_dataset_csv(std::string(path), data->data.rows); });
}

mpt_status mpt_dataset_shape(const mpt_dataset* data, int64_t* n, int64_t* dim) {
  MPT_CHECK(data, "null pointer argument");
  if (n) *n = data->data.size();
  if (dim) *dim = data->data.dim();
  return MPT_OK;
}

mpt_status mpt_dataset_row(const mpt_dataset* data, int64_t row, double* out, size_t len) {
  MPT_CHECK(data && out, "null pointer argument");
  MPT_CHECK(row >= 0 && row < data->data.size(), "row index out of range");
  MPT_CHECK(static_cast<int64_t>(len) == data->data.dim(), "buffer length differs from D");
  for (int64_t j = 0; j < data->data.dim(); ++j) out[j] = data->data.rows(row, j);
  return MPT_OK;
}

void mpt_dataset_destroy(mpt_dataset* data) { delete data; }

mpt_status mpt_lml(const mpt_ppca* params, const mpt_dataset* data, double* out) {
  MPT_CHECK(params && data && out, "null pointer argument");
  return guard([&] { *out = mptlml::lml(params->params, data->data); });
}

mpt_status mpt_log_density(const mpt_ppca* params, const double* x, size_t len, double* out) {
  MPT_CHECK(params && x && out, "null pointer argument");
  return guard([&] { *out = mptlml::log_density(mptlml::marginal_covariance(params->params), observation(params, x, len)); });
}

mpt_status mpt_score(const mpt_ppca* params, const double* x, size_t len, int64_t m, int64_t masks, uint64_t seed,
                     double* value, double* std_err) {
  MPT_CHECK(params && x && value, "null pointer argument");
  MPT_CHECK(masks >= 0, "masks must be >= 0");
  return guard([&] {
    const auto est = mptlml::score(mptlml::marginal_covariance(params->params), observation(params, x, len), m,
                                   budget_for(masks), mptlml::Stream(seed));
    *value = est.value;
    if (std_err) *std_err = est.std_err;
  });
}

mpt_status mpt_cumulative(const mpt_ppca* params, const double* x, size_t len, int64_t masks, uint64_t seed,
                          double* out) {
  MPT_CHECK(params && x && out, "null pointer argument");
  MPT_CHECK(masks >= 0, "masks must be >= 0");
  return guard([&] {
    *out = mptlml::cumulative_mpt(mptlml::marginal_covariance(params->params), observation(params, x, len),
                                  budget_for(masks), mptlml::Stream(seed));
  });
}

mpt_status mpt_exact_cumulative(const mpt_ppca* params, const double* x, size_t len, double* out) {
  MPT_CHECK(params && x && out, "null pointer argument");
  return guard([&] {
    *out = mptlml::exact_cumulative(mptlml::marginal_covariance(params->params), observation(params, x, len));
  });
}

mpt_status mpt_count_masks(int64_t dim, int64_t masked, double* log10_out, char* digits, size_t cap) {
  MPT_CHECK(dim >= 0 && masked >= 0 && masked <= dim, "need 0 <= masked <= dim");
  return guard([&] {
    const auto c = mptlml::count_masks(dim, masked);
    if (log10_out) *log10_out = c.log10;
    if (digits && cap > 0) {
      const size_t n = std::min(cap - 1, c.value.size());
      std::memcpy(digits, c.value.data(), n);
      digits[n] = '\0';
    }
  });
}

mpt_status mpt_curve_area_file(const char* path, int64_t dim, double* out) {
  MPT_CHECK(path && out, "null pointer argument");
  return guard([&] {
    std::optional<mptlml::Index> d;
    if (dim > 0) d = dim;
    *out = mptlml::curve_area(mptlml::read_curve_csv(std::string(path), d));
  });
}

int mpt_run_experiment(const char* command, const char* config_json, const char* out_dir, int has_seed,
                       uint64_t seed, int workers) {
  if (!command) {
    last_error = "null command";
    return 2;
  }
  try {
    mptlml::RunOverrides ov;
    if (has_seed) ov.seed = seed;
    if (out_dir) ov.out = out_dir;
    if (workers > 0) ov.workers = workers;
    const auto res = mptlml::run_experiment(command, config_json ? config_json : "", ov);
    last_error = res.message;
    return res.exit_code;
  } catch (const std::exception& e) {
    last_error = e.what();
    return 4;
  }
}

}  // extern "C"
