#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfol/core.hpp"

namespace cfol {

struct SyntheticSpec {
  int k = 3;
  int d = 20;
  std::vector<int> per_class_counts;          // supports imbalance
  std::vector<std::vector<double>> means;     // k vectors of dim d
  double std_dev = 1.0;
  // moves class `hard_class`'s mean toward class `overlap_target`'s mean by
  // fraction overlap_lambda
  int hard_class = -1;
  int overlap_target = -1;
  double overlap_lambda = 0.0;

  void validate() const {
    if (k < 2 || d < 1) throw std::invalid_argument("SyntheticSpec: need k >= 2, d >= 1");
    if (static_cast<int>(per_class_counts.size()) != k ||
        static_cast<int>(means.size()) != k)
      throw std::invalid_argument("SyntheticSpec: per-class fields must have length k");
    for (int c : per_class_counts)
      if (c < 1) throw std::invalid_argument("SyntheticSpec: counts must be >= 1");
    for (const auto& m : means)
      if (static_cast<int>(m.size()) != d)
        throw std::invalid_argument("SyntheticSpec: mean dimension mismatch");
    if (!(std_dev > 0.0)) throw std::invalid_argument("SyntheticSpec: std must be > 0");
    if (!(overlap_lambda >= 0.0 && overlap_lambda <= 1.0))
      throw std::invalid_argument("SyntheticSpec: lambda must be in [0,1]");
    if (hard_class >= 0 &&
        (hard_class >= k || overlap_target < 0 || overlap_target >= k))
      throw std::invalid_argument("SyntheticSpec: bad hard-class indices");
  }
};

inline LabeledDataset generate_synthetic(const SyntheticSpec& spec,
                                         SeededRng& rng) {
  spec.validate();
  std::vector<Eigen::VectorXd> means(spec.k);
  for (int y = 0; y < spec.k; ++y)
    means[y] = Eigen::Map<const Eigen::VectorXd>(spec.means[y].data(), spec.d);
  if (spec.hard_class >= 0)
    means[spec.hard_class] =
        (1.0 - spec.overlap_lambda) * means[spec.hard_class] +
        spec.overlap_lambda * means[spec.overlap_target];

  int total = 0;
  for (int c : spec.per_class_counts) total += c;
  LabeledDataset ds;
  ds.k = spec.k;
  ds.features.resize(total, spec.d);
  ds.labels.resize(total);
  int row = 0;
  for (int y = 0; y < spec.k; ++y) {
    for (int i = 0; i < spec.per_class_counts[y]; ++i, ++row) {
      for (int j = 0; j < spec.d; ++j)
        ds.features(row, j) = means[y][j] + spec.std_dev * rng.normal();
      ds.labels[row] = y;
    }
  }
  return ds;
}

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& what)
      : std::runtime_error("parse error at line " + std::to_string(line) +
                           ", column " + std::to_string(column) + ": " + what),
        line(line),
        column(column) {}
  std::size_t line, column;
};

class MissingClassError : public std::runtime_error {
 public:
  explicit MissingClassError(int y)
      : std::runtime_error("labels are not contiguous: class " +
                           std::to_string(y) + " is missing"),
        class_id(y) {}
  int class_id;
};

// Header `label,f0,f1,...`; integer labels, decimal features.
inline LabeledDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, 1, "missing header");
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    std::vector<double> row;
    int label = 0;
    while (std::getline(ss, cell, ',')) {
      ++col;
      try {
        std::size_t used = 0;
        if (col == 1) {
          label = std::stoi(cell, &used);
        } else {
          row.push_back(std::stod(cell, &used));
        }
        if (used != cell.size()) throw std::invalid_argument("trailing junk");
      } catch (const std::exception&) {
        throw ParseError(line_no, col, "cannot parse '" + cell + "'");
      }
    }
    if (col < 2) throw ParseError(line_no, col, "need a label and features");
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(line_no, col, "inconsistent feature count");
    if (label < 0) throw ParseError(line_no, 1, "negative label");
    rows.push_back(std::move(row));
    labels.push_back(label);
  }
  if (rows.empty()) throw ParseError(line_no, 1, "no data rows");

  int k = 0;
  for (int y : labels) k = std::max(k, y + 1);
  std::vector<bool> seen(k, false);
  for (int y : labels) seen[y] = true;
  for (int y = 0; y < k; ++y)
    if (!seen[y]) throw MissingClassError(y);

  LabeledDataset ds;
  ds.k = k;
  ds.labels = std::move(labels);
  ds.features.resize(static_cast<Eigen::Index>(rows.size()),
                     static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows[i][j];
  return ds;
}

class BadMagicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CountMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("idx: truncated header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

// IDX image/label pair (big-endian magic 0x803 / 0x801, raw bytes). Features
// are scaled to [0,1] by /255. limit_per_class keeps the first occurrences.
inline LabeledDataset load_idx(const std::string& images_path,
                               const std::string& labels_path,
                               int limit_per_class = 0) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("load_idx: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("load_idx: cannot open " + labels_path);

  if (detail::read_be_u32(img) != 0x00000803u)
    throw BadMagicError("load_idx: bad image magic");
  if (detail::read_be_u32(lab) != 0x00000801u)
    throw BadMagicError("load_idx: bad label magic");

  const std::uint32_t n_images = detail::read_be_u32(img);
  const std::uint32_t rows = detail::read_be_u32(img);
  const std::uint32_t cols = detail::read_be_u32(img);
  const std::uint32_t n_labels = detail::read_be_u32(lab);
  if (n_images != n_labels)
    throw CountMismatchError("load_idx: image/label count mismatch");

  const std::size_t pixels = std::size_t(rows) * cols;
  std::vector<unsigned char> image_buf(pixels);
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  std::vector<int> taken_per_class;

  for (std::uint32_t i = 0; i < n_images; ++i) {
    img.read(reinterpret_cast<char*>(image_buf.data()),
             static_cast<std::streamsize>(pixels));
    int label = lab.get();
    if (!img || label == EOF)
      throw CountMismatchError("load_idx: truncated payload");
    if (static_cast<std::size_t>(label) >= taken_per_class.size())
      taken_per_class.resize(label + 1, 0);
    if (limit_per_class > 0 && taken_per_class[label] >= limit_per_class)
      continue;
    ++taken_per_class[label];
    std::vector<double> row(pixels);
    for (std::size_t p = 0; p < pixels; ++p) row[p] = image_buf[p] / 255.0;
    features.push_back(std::move(row));
    labels.push_back(label);
  }

  LabeledDataset ds;
  ds.k = static_cast<int>(taken_per_class.size());
  ds.labels = std::move(labels);
  ds.features.resize(static_cast<Eigen::Index>(features.size()),
                     static_cast<Eigen::Index>(pixels));
  for (std::size_t i = 0; i < features.size(); ++i)
    for (std::size_t j = 0; j < pixels; ++j)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          features[i][j];
  return ds;
}

}  // namespace cfol
