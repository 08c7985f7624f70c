#include "mptlml/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mptlml/error.hpp"
#include "mptlml/text.hpp"

namespace mptlml {

namespace {

using nlohmann::json;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return in;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path);
}

bool next_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

Error malformed(std::size_t line, const std::string& why) {
  return Error(ErrorCode::MalformedInput, "line " + std::to_string(line) + ": " + why);
}

Matrix to_matrix(const std::vector<std::vector<double>>& rows, Index cols) {
  Matrix m(static_cast<Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index j = 0; j < cols; ++j) m(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  return m;
}

json matrix_json(const Matrix& W) {
  json arr = json::array();
  for (Index i = 0; i < W.rows(); ++i)
    for (Index j = 0; j < W.cols(); ++j) arr.push_back(W(i, j));
  return arr;
}

json vector_json(const Vector& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

template <class T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::MalformedInput, std::string("checkpoint lacks '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedInput, std::string("checkpoint field '") + key + "': " + e.what());
  }
}

void read_shape(const json& j, Index& D, Index& K, Matrix& W, Vector& mu) {
  D = field<Index>(j, "D");
  K = field<Index>(j, "K");
  const auto w = field<std::vector<double>>(j, "W");
  const auto m = field<std::vector<double>>(j, "mu");
  if (D < 1 || K < 1 || static_cast<Index>(w.size()) != D * K || static_cast<Index>(m.size()) != D)
    throw Error(ErrorCode::MalformedInput, "checkpoint arrays do not match D and K");
  W.resize(D, K);
  for (Index i = 0; i < D; ++i)
    for (Index k = 0; k < K; ++k) W(i, k) = w[static_cast<std::size_t>(i * K + k)];
  mu = Eigen::Map<const Vector>(m.data(), D);
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedInput, std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

std::string read_text_file(const std::string& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  finish(out, path);
}

void write_dataset_csv(std::ostream& out, const Matrix& rows) {
  for (Index j = 0; j < rows.cols(); ++j) out << (j ? ",x" : "x") << j + 1;
  out << '\n';
  std::string line;
  for (Index i = 0; i < rows.rows(); ++i) {
    line.clear();
    for (Index j = 0; j < rows.cols(); ++j) {
      if (j) line += ',';
      line += format_double(rows(i, j));
    }
    out << line << '\n';
  }
}

void write_dataset_csv(const std::string& path, const Matrix& rows) {
  auto out = open_out(path);
  write_dataset_csv(out, rows);
  finish(out, path);
}

Matrix read_dataset_csv(std::istream& in) {
  std::string line;
  if (!next_line(in, line)) throw malformed(1, "missing header");
  const auto header = split_csv_line(line);
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] != "x" + std::to_string(j + 1)) throw malformed(1, "header must be x1..xD");
  const auto D = static_cast<Index>(header.size());
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (next_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (static_cast<Index>(fields.size()) != D)
      throw malformed(lineno, "expected " + std::to_string(D) + " fields");
    std::vector<double> row(fields.size());
    for (std::size_t j = 0; j < fields.size(); ++j)
      if (!parse_double(fields[j], row[j]) || !std::isfinite(row[j])) throw malformed(lineno, "bad number");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw malformed(lineno, "no observations");
  return to_matrix(rows, D);
}

Matrix read_dataset_csv(const std::string& path) {
  auto in = open_in(path);
  return read_dataset_csv(in);
}

void write_binary_dataset(const std::string& path, const Matrix& rows) {
  auto out = open_out(path);
  std::string line(static_cast<std::size_t>(rows.cols()), '0');
  for (Index i = 0; i < rows.rows(); ++i) {
    for (Index j = 0; j < rows.cols(); ++j) {
      if (rows(i, j) != 0.0 && rows(i, j) != 1.0) throw Error(ErrorCode::MalformedInput, "data are not binary");
      line[static_cast<std::size_t>(j)] = rows(i, j) == 1.0 ? '1' : '0';
    }
    out << line << '\n';
  }
  finish(out, path);
}

Matrix read_binary_dataset(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 0;
  Index D = -1;
  while (next_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (D < 0) D = static_cast<Index>(line.size());
    if (static_cast<Index>(line.size()) != D) throw malformed(lineno, "row length differs");
    std::vector<double> row(line.size());
    for (std::size_t j = 0; j < line.size(); ++j) {
      if (line[j] != '0' && line[j] != '1') throw malformed(lineno, "expected only 0/1 characters");
      row[j] = line[j] == '1' ? 1.0 : 0.0;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw malformed(lineno, "no observations");
  return to_matrix(rows, D);
}

Matrix binarize_images(const Matrix& pixels, const ImageSpec& spec) {
  const auto side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(pixels.cols()))));
  if (side * side != pixels.cols()) throw Error(ErrorCode::MalformedInput, "images must be square");
  if (spec.crop < 0 || 2 * spec.crop >= side) throw Error(ErrorCode::ConfigError, "crop leaves no pixels");
  const Index inner = side - 2 * spec.crop;
  if (spec.downsample < 1 || inner % spec.downsample != 0)
    throw Error(ErrorCode::ConfigError, "downsample factor must divide the cropped side");
  const Index out_side = inner / spec.downsample;
  const double area = static_cast<double>(spec.downsample * spec.downsample);
  Matrix out(pixels.rows(), out_side * out_side);
  for (Index i = 0; i < pixels.rows(); ++i)
    for (Index a = 0; a < out_side; ++a)
      for (Index b = 0; b < out_side; ++b) {
        double s = 0.0;
        for (Index u = 0; u < spec.downsample; ++u)
          for (Index v = 0; v < spec.downsample; ++v) {
            const Index r = spec.crop + a * spec.downsample + u, c = spec.crop + b * spec.downsample + v;
            s += pixels(i, r * side + c);
          }
        out(i, a * out_side + b) = s / area > spec.threshold ? 1.0 : 0.0;
      }
  return out;
}

Matrix read_image_csv(const std::string& path, const ImageSpec& spec) {
  auto in = open_in(path);
  std::string line;
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 0;
  std::size_t width = 0;
  while (next_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    std::vector<double> row(fields.size());
    bool numeric = true;
    for (std::size_t j = 0; j < fields.size() && numeric; ++j) numeric = parse_double(fields[j], row[j]);
    if (!numeric) {
      if (lineno == 1) continue;  // header
      throw malformed(lineno, "bad pixel value");
    }
    if (width == 0) width = row.size();
    if (row.size() != width) throw malformed(lineno, "row length differs");
    for (double p : row)
      if (!(p >= 0.0 && p <= 1.0)) throw malformed(lineno, "pixel intensities must lie in [0, 1]");
    rows.push_back(std::move(row));
    if (spec.max_rows > 0 && static_cast<Index>(rows.size()) == spec.max_rows) break;
  }
  if (rows.empty()) throw malformed(lineno, "no images");
  return binarize_images(to_matrix(rows, static_cast<Index>(width)), spec);
}

std::string ppca_to_json(const PpcaParams& params) {
  params.validate();
  json j;
  j["D"] = params.dim();
  j["K"] = params.latent();
  j["W"] = matrix_json(params.W);
  j["mu"] = vector_json(params.mu);
  j["log_sigma2"] = params.log_sigma2;
  return j.dump(2) + "\n";
}

PpcaParams ppca_from_json(const std::string& text) {
  const json j = parse_json(text);
  PpcaParams p;
  Index D = 0, K = 0;
  read_shape(j, D, K, p.W, p.mu);
  p.log_sigma2 = field<double>(j, "log_sigma2");
  p.validate();
  return p;
}

void save_ppca(const std::string& path, const PpcaParams& params) { write_text_file(path, ppca_to_json(params)); }
PpcaParams load_ppca(const std::string& path) { return ppca_from_json(read_text_file(path)); }

std::string bernoulli_to_json(const BernoulliLinearParams& params) {
  params.validate(false);
  json j;
  j["D"] = params.dim();
  j["K"] = params.latent();
  j["W"] = matrix_json(params.W);
  j["mu"] = vector_json(params.mu);
  return j.dump(2) + "\n";
}

BernoulliLinearParams bernoulli_from_json(const std::string& text) {
  const json j = parse_json(text);
  BernoulliLinearParams p;
  Index D = 0, K = 0;
  read_shape(j, D, K, p.W, p.mu);
  p.validate(false);
  return p;
}

void save_bernoulli(const std::string& path, const BernoulliLinearParams& params) {
  write_text_file(path, bernoulli_to_json(params));
}
BernoulliLinearParams load_bernoulli(const std::string& path) { return bernoulli_from_json(read_text_file(path)); }

void write_trace_csv(std::ostream& out, const std::vector<EpochRecord>& records) {
  out << "epoch,neg_mpt,exact_lml,grad_norm,mask_size\n";
  for (const auto& r : records)
    out << r.epoch << ',' << format_double(r.neg_mpt) << ',' << format_double(r.exact_lml) << ','
        << format_double(r.grad_norm) << ',' << r.mask_size << '\n';
}

void write_trace_csv(const std::string& path, const std::vector<EpochRecord>& records) {
  auto out = open_out(path);
  write_trace_csv(out, records);
  finish(out, path);
}

namespace {

template <class Record, class Assign>
std::vector<Record> read_five_column(std::istream& in, const std::string& header, Assign assign) {
  std::string line;
  if (!next_line(in, line) || line != header) throw malformed(1, "expected header " + header);
  std::vector<Record> out;
  std::size_t lineno = 1;
  while (next_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    double v[5];
    if (f.size() != 5) throw malformed(lineno, "expected 5 fields");
    for (std::size_t k = 0; k < 5; ++k)
      if (!parse_double(f[k], v[k])) throw malformed(lineno, "bad number");
    Record r;
    assign(r, v);
    out.push_back(r);
  }
  return out;
}

}  // namespace

std::vector<EpochRecord> read_trace_csv(std::istream& in) {
  return read_five_column<EpochRecord>(in, "epoch,neg_mpt,exact_lml,grad_norm,mask_size",
                                       [](EpochRecord& r, const double* v) {
                                         r = {static_cast<Index>(v[0]), v[1], v[2], v[3], static_cast<Index>(v[4])};
                                       });
}

void write_bernoulli_trace_csv(std::ostream& out, const std::vector<BernoulliRecord>& records) {
  out << "epoch,objective,lml,grad_norm,mask_size\n";
  for (const auto& r : records)
    out << r.epoch << ',' << format_double(r.objective) << ',' << format_double(r.lml) << ','
        << format_double(r.grad_norm) << ',' << r.mask_size << '\n';
}

void write_bernoulli_trace_csv(const std::string& path, const std::vector<BernoulliRecord>& records) {
  auto out = open_out(path);
  write_bernoulli_trace_csv(out, records);
  finish(out, path);
}

std::vector<BernoulliRecord> read_bernoulli_trace_csv(std::istream& in) {
  return read_five_column<BernoulliRecord>(in, "epoch,objective,lml,grad_norm,mask_size",
                                           [](BernoulliRecord& r, const double* v) {
                                             r = {static_cast<Index>(v[0]), v[1], v[2], v[3],
                                                  static_cast<Index>(v[4])};
                                           });
}

}  // namespace mptlml
