#pragma once

#include "dap/common.hpp"

#include <iosfwd>
#include <string>

namespace dap {

enum class Split { train, test };

const char* to_string(Split split);

// Real samples with integer class labels. `classes` lists every label that may
// appear, in ascending order; a label's position there is its class index.
struct LabeledDataset {
  VecList samples;
  std::vector<int> labels;
  std::vector<int> classes;
  Split split = Split::train;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  Eigen::Index dim() const { return samples.empty() ? 0 : samples.front().size(); }

  // Throws ValidationError on ragged rows, unknown labels or length mismatch.
  void validate() const;

  int class_index(int label) const;
  bool has_class(int label) const;

  // All samples with the given label, in dataset order.
  VecList of_class(int label) const;
  std::size_t count(int label) const;

  // Samples as columns of a dim x n matrix.
  Mat as_matrix() const;
};

// Sorted unique labels.
std::vector<int> unique_labels(const std::vector<int>& labels);

// CSV: one row per sample, feature columns then an integer label column.
// A first line that does not parse as numbers is treated as a header.
LabeledDataset read_csv_dataset(const std::string& path, Split split = Split::train);
LabeledDataset parse_csv_dataset(std::istream& in, Split split = Split::train);
void write_csv_dataset(const std::string& path, const LabeledDataset& data);

}  // namespace dap
