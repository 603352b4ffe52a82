#include "dap/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dap {

const char* to_string(Split split) { return split == Split::train ? "train" : "test"; }

std::vector<int> unique_labels(const std::vector<int>& labels) {
  std::vector<int> out(labels);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void LabeledDataset::validate() const {
  require(samples.size() == labels.size(), "dataset: samples and labels differ in length");
  require(std::is_sorted(classes.begin(), classes.end()) &&
              std::adjacent_find(classes.begin(), classes.end()) == classes.end(),
          "dataset: class list must be sorted and unique");
  const Eigen::Index d = dim();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    require(samples[i].size() == d, "dataset: row " + std::to_string(i) + " has dimension " +
                                        std::to_string(samples[i].size()) + ", expected " +
                                        std::to_string(d));
    require(samples[i].allFinite(), "dataset: row " + std::to_string(i) + " has non-finite entries");
    require(has_class(labels[i]), "dataset: label " + std::to_string(labels[i]) + " not in class list");
  }
}

int LabeledDataset::class_index(int label) const {
  const auto it = std::lower_bound(classes.begin(), classes.end(), label);
  if (it == classes.end() || *it != label) throw ValidationError("unknown class " + std::to_string(label));
  return static_cast<int>(it - classes.begin());
}

bool LabeledDataset::has_class(int label) const {
  return std::binary_search(classes.begin(), classes.end(), label);
}

VecList LabeledDataset::of_class(int label) const {
  VecList out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (labels[i] == label) out.push_back(samples[i]);
  }
  return out;
}

std::size_t LabeledDataset::count(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

Mat LabeledDataset::as_matrix() const {
  Mat m(dim(), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = samples[i];
  return m;
}

namespace {

bool parse_row(const std::string& line, std::vector<double>& out) {
  out.clear();
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    if (b == std::string::npos) return false;
    const std::string trimmed = cell.substr(b, e - b + 1);
    char* end = nullptr;
    const double v = std::strtod(trimmed.c_str(), &end);
    if (end != trimmed.c_str() + trimmed.size()) return false;
    out.push_back(v);
  }
  return !out.empty();
}

}  // namespace

LabeledDataset parse_csv_dataset(std::istream& in, Split split) {
  LabeledDataset data;
  data.split = split;
  std::string line;
  std::vector<double> row;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!parse_row(line, row)) {
      if (line_no == 1) continue;  // header
      throw ValidationError("csv line " + std::to_string(line_no) + ": not numeric");
    }
    if (width == 0) width = row.size();
    require(row.size() == width, "csv line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(width) + " columns");
    require(width >= 2, "csv needs at least one feature column and a label column");
    const double label = row.back();
    require(std::isfinite(label) && label == std::floor(label),
            "csv line " + std::to_string(line_no) + ": label must be an integer");
    Vec x(static_cast<Eigen::Index>(width - 1));
    for (std::size_t j = 0; j + 1 < width; ++j) x[static_cast<Eigen::Index>(j)] = row[j];
    data.samples.push_back(std::move(x));
    data.labels.push_back(static_cast<int>(label));
  }
  require(!data.samples.empty(), "csv dataset is empty");
  data.classes = unique_labels(data.labels);
  data.validate();
  return data;
}

LabeledDataset read_csv_dataset(const std::string& path, Split split) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset '" + path + "'");
  return parse_csv_dataset(in, split);
}

void write_csv_dataset(const std::string& path, const LabeledDataset& data) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.samples[i].size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", data.samples[i][j]);
      out << buf << ',';
    }
    out << data.labels[i] << '\n';
  }
}

}  // namespace dap
