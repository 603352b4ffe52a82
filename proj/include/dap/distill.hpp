#pragma once

#include "dap/common.hpp"
#include "dap/dataset.hpp"
#include "dap/guidance.hpp"
#include "dap/scores.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>

namespace dap {

// Per-class synthetic samples plus a provenance record complete enough to
// rerun the producing call bit for bit.
struct DistilledSet {
  std::string method;        // "dap", "unguided", "random" (subsampled sets keep the parent's)
  std::vector<int> classes;  // ascending labels
  int ipc = 0;
  Eigen::Index dim = 0;
  std::vector<VecList> samples;  // samples[c] belongs to classes[c]
  nlohmann::json provenance;
  double wall_seconds = 0.0;  // not serialized: reruns must stay byte-identical

  void validate() const;
  const VecList& of_class(int label) const;
  LabeledDataset to_dataset() const;
  std::size_t total() const { return classes.size() * static_cast<std::size_t>(ipc); }
};

nlohmann::json describe(const GuidanceConfig& cfg);
nlohmann::json describe(const NoiseSchedule& schedule);

// Guided sampling for every class of `train`. gamma == 0 or t_stop == T is
// recorded as the "unguided" baseline.
DistilledSet distill_dap(const LabeledDataset& train, const GuidanceConfig& cfg, const NoiseSchedule& schedule,
                         const ScoreModel& score, int ipc, std::uint64_t seed, Exec exec = Exec::parallel);

// Uniform per-class subset of the real training samples, without replacement.
DistilledSet distill_random(const LabeledDataset& train, int ipc, std::uint64_t seed);

// Uniform per-class subsample of an existing set; provenance chains to the parent.
DistilledSet subsample_set(const DistilledSet& set, int new_ipc, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Container file (version 1, little-endian):
//   char[8]  magic "DAPDSET\0"
//   u32      version (1)
//   u32      dim
//   u32      class count C
//   u32      ipc
//   i32[C]   class labels, ascending
//   u32      provenance length P
//   u8[P]    provenance, UTF-8 JSON (method under key "method")
//   f64[C*ipc*dim]  samples: class-major, then sample, then coordinate
//   u64      FNV-1a 64 of every preceding byte

inline constexpr char kContainerMagic[8] = {'D', 'A', 'P', 'D', 'S', 'E', 'T', '\0'};
inline constexpr std::uint32_t kContainerVersion = 1;

void write_container(std::ostream& out, const DistilledSet& set);
void write_container(const std::string& path, const DistilledSet& set);
DistilledSet read_container(std::istream& in);
DistilledSet read_container(const std::string& path);
std::string container_bytes(const DistilledSet& set);

bool is_container_file(const std::string& path);

// CSV or container, detected from the file's first bytes.
LabeledDataset load_dataset(const std::string& path, Split split);

// ---------------------------------------------------------------------------
// Built-in tasks

// Four classes in 2-D; each class is a broad core blob plus a compact
// satellite blob on the outer ring, 50 degrees past its core and so closer to
// the next class's core than to its own. A single prototype per class cannot
// cover both modes.
GmmSpec rings_and_blobs();

struct TaskData {
  std::string name;
  LabeledDataset train;
  LabeledDataset test;
  std::optional<GmmSpec> spec;  // present for analytic tasks
};

// Draws train/test splits from rings_and_blobs().
TaskData make_rings_and_blobs(std::size_t train_per_class, std::size_t test_per_class, std::uint64_t seed);

// The 8x8 digit images at `csv_path` (64 pixel columns + label), split
// stratified 70/30, projected to `components` dimensions by PCA fitted on the
// training split and rescaled to unit average variance.
TaskData make_digits_pca(const std::string& csv_path, int components, std::uint64_t seed);

}  // namespace dap
