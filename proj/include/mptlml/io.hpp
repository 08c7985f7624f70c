#pragma once

#include <iosfwd>
#include <string>

#include "mptlml/bernoulli.hpp"
#include "mptlml/ppca.hpp"
#include "mptlml/training.hpp"

namespace mptlml {

// Dataset CSV: header x1..xD, one observation per line.
void write_dataset_csv(std::ostream& out, const Matrix& rows);
void write_dataset_csv(const std::string& path, const Matrix& rows);
Matrix read_dataset_csv(std::istream& in);
Matrix read_dataset_csv(const std::string& path);

// Binary dataset: one observation per line as a string of '0'/'1'.
void write_binary_dataset(const std::string& path, const Matrix& rows);
Matrix read_binary_dataset(const std::string& path);

// Flat image CSV: one image per line, square, intensities in [0, 1]. A
// non-numeric first line is treated as a header. Images are cropped by
// `crop` pixels on every border, average-pooled by `downsample`, then
// thresholded (pixel > threshold gives 1).
struct ImageSpec {
  Index crop = 0;
  Index downsample = 1;
  double threshold = 0.5;
  Index max_rows = 0;  // 0 keeps every row
};
Matrix read_image_csv(const std::string& path, const ImageSpec& spec);
Matrix binarize_images(const Matrix& pixels, const ImageSpec& spec);

// Checkpoints: {"W": row-major array, "mu", "log_sigma2", "D", "K"}.
std::string ppca_to_json(const PpcaParams& params);
PpcaParams ppca_from_json(const std::string& text);
void save_ppca(const std::string& path, const PpcaParams& params);
PpcaParams load_ppca(const std::string& path);

// {"W": row-major array, "mu", "D", "K"}.
std::string bernoulli_to_json(const BernoulliLinearParams& params);
BernoulliLinearParams bernoulli_from_json(const std::string& text);
void save_bernoulli(const std::string& path, const BernoulliLinearParams& params);
BernoulliLinearParams load_bernoulli(const std::string& path);

// epoch,neg_mpt,exact_lml,grad_norm,mask_size
void write_trace_csv(std::ostream& out, const std::vector<EpochRecord>& records);
void write_trace_csv(const std::string& path, const std::vector<EpochRecord>& records);
std::vector<EpochRecord> read_trace_csv(std::istream& in);

// epoch,objective,lml,grad_norm,mask_size
void write_bernoulli_trace_csv(std::ostream& out, const std::vector<BernoulliRecord>& records);
void write_bernoulli_trace_csv(const std::string& path, const std::vector<BernoulliRecord>& records);
std::vector<BernoulliRecord> read_bernoulli_trace_csv(std::istream& in);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace mptlml
