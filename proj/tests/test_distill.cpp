#include "dap/distill.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace dap;

namespace {

struct Task {
  TaskData data = make_rings_and_blobs(200, 50, 3);
  NoiseSchedule sched = NoiseSchedule::make_default();
  AnalyticScore score{*data.spec, sched};
};

LabeledDataset only_classes(const LabeledDataset& d, std::vector<int> keep) {
  LabeledDataset out;
  out.split = d.split;
  out.classes = keep;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (std::find(keep.begin(), keep.end(), d.labels[i]) != keep.end()) {
      out.samples.push_back(d.samples[i]);
      out.labels.push_back(d.labels[i]);
    }
  }
  return out;
}

std::vector<std::vector<double>> as_rows(const VecList& xs) {
  std::vector<std::vector<double>> rows;
  for (const auto& x : xs) rows.emplace_back(x.data(), x.data() + x.size());
  std::sort(rows.begin(), rows.end());
  return rows;
}

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "dap_test_distill";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::uint32_t read_u32(const std::string& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

void rewrite_checksum(std::string& b) {
  const std::uint64_t h = fnv1a(b.data(), b.size() - 8);
  for (int i = 0; i < 8; ++i) b[b.size() - 8 + i] = static_cast<char>((h >> (8 * i)) & 0xFF);
}

}  // namespace

TEST(DistillDap, CardinalityAndLabels) {
  Task t;
  const auto two = only_classes(t.data.train, {0, 1});
  GuidanceConfig cfg;
  const DistilledSet s = distill_dap(two, cfg, t.sched, t.score, 10, 1);
  EXPECT_EQ(s.total(), 20u);
  EXPECT_EQ(s.to_dataset().size(), 20u);
  EXPECT_EQ(s.classes, (std::vector<int>{0, 1}));
  EXPECT_EQ(s.method, "dap");
  EXPECT_EQ(s.provenance["guided_steps_per_trajectory"], 1000 - cfg.t_stop);
  EXPECT_NO_THROW(s.validate());
}

TEST(DistillDap, ZeroGuidanceIsLabeledUnguided) {
  Task t;
  GuidanceConfig cfg;
  cfg.gamma = 0.0;
  EXPECT_EQ(distill_dap(t.data.train, cfg, t.sched, t.score, 2, 1).method, "unguided");
  cfg.gamma = 0.1;
  cfg.t_stop = t.sched.steps();
  EXPECT_EQ(distill_dap(t.data.train, cfg, t.sched, t.score, 2, 1).method, "unguided");
}

TEST(DistillDap, SameConfigAndSeedGiveIdenticalBytes) {
  Task t;
  GuidanceConfig cfg;
  const auto a = distill_dap(t.data.train, cfg, t.sched, t.score, 4, 9, Exec::parallel);
  const auto b = distill_dap(t.data.train, cfg, t.sched, t.score, 4, 9, Exec::serial);
  const auto c = distill_dap(t.data.train, cfg, t.sched, t.score, 4, 10);
  EXPECT_EQ(container_bytes(a), container_bytes(b));
  EXPECT_EQ(fnv1a(container_bytes(a)), fnv1a(container_bytes(b)));
  EXPECT_NE(container_bytes(a), container_bytes(c));
}

TEST(DistillDap, RejectsMissingClassOrWrongDimension) {
  Task t;
  LabeledDataset train = t.data.train;
  train.classes.push_back(9);
  GuidanceConfig cfg;
  EXPECT_THROW(distill_dap(train, cfg, t.sched, t.score, 2, 1), ValidationError);
  LabeledDataset wide;
  wide.classes = {0};
  wide.samples = {Vec::Zero(3)};
  wide.labels = {0};
  EXPECT_THROW(distill_dap(wide, cfg, t.sched, t.score, 2, 1), ValidationError);
  EXPECT_THROW(distill_dap(t.data.train, cfg, t.sched, t.score, 0, 1), ValidationError);
}

TEST(DistillRandom, WholeClassWhenIpcEqualsClassSize) {
  Task t;
  const auto s = distill_random(t.data.train, 200, 5);
  for (int label : s.classes) EXPECT_EQ(as_rows(s.of_class(label)), as_rows(t.data.train.of_class(label)));
}

TEST(DistillRandom, SamplesAreDistinctTrainMembers) {
  Task t;
  const auto s = distill_random(t.data.train, 10, 5);
  for (int label : s.classes) {
    const auto pool = as_rows(t.data.train.of_class(label));
    const auto got = as_rows(s.of_class(label));
    EXPECT_EQ(std::set(got.begin(), got.end()).size(), 10u);
    for (const auto& row : got) EXPECT_TRUE(std::binary_search(pool.begin(), pool.end(), row));
  }
}

// Two seeds pick the same 10 of 200 with probability 1 / C(200, 10) ~ 4e-17.
TEST(DistillRandom, SeedsDifferAndRepeat) {
  Task t;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto a = distill_random(t.data.train, 10, seed);
    const auto b = distill_random(t.data.train, 10, seed + 100);
    EXPECT_NE(as_rows(a.of_class(0)), as_rows(b.of_class(0)));
    EXPECT_EQ(container_bytes(a), container_bytes(distill_random(t.data.train, 10, seed)));
  }
  EXPECT_THROW(distill_random(t.data.train, 201, 1), ValidationError);
}

TEST(Subsample, IdentityAtSameIpc) {
  Task t;
  const auto parent = distill_random(t.data.train, 12, 2);
  const auto same = subsample_set(parent, 12, 99);
  EXPECT_EQ(same.samples, parent.samples);
}

TEST(Subsample, ReducesIpcAndChainsProvenance) {
  Task t;
  const auto parent = distill_random(t.data.train, 100, 2);
  const auto child = subsample_set(parent, 10, 7);
  EXPECT_EQ(child.ipc, 10);
  EXPECT_EQ(child.method, "random");
  EXPECT_EQ(child.provenance["parent"], parent.provenance);
  EXPECT_EQ(child.provenance["subsample"]["from_ipc"], 100);
  for (std::size_t c = 0; c < child.classes.size(); ++c) {
    ASSERT_EQ(child.samples[c].size(), 10u);
    const auto pool = as_rows(parent.samples[c]);
    for (const auto& row : as_rows(child.samples[c])) EXPECT_TRUE(std::binary_search(pool.begin(), pool.end(), row));
  }
  EXPECT_EQ(container_bytes(child), container_bytes(subsample_set(parent, 10, 7)));
  EXPECT_NE(container_bytes(child), container_bytes(subsample_set(parent, 10, 8)));
  EXPECT_THROW(subsample_set(parent, 101, 1), ValidationError);
  EXPECT_THROW(subsample_set(parent, 0, 1), ValidationError);
}

TEST(Container, RoundTripThroughFile) {
  Task t;
  GuidanceConfig cfg;
  const auto s = distill_dap(t.data.train, cfg, t.sched, t.score, 3, 4);
  const std::string path = temp_path("roundtrip.dset");
  write_container(path, s);
  EXPECT_TRUE(is_container_file(path));
  const auto back = read_container(path);
  EXPECT_EQ(back.samples, s.samples);
  EXPECT_EQ(back.classes, s.classes);
  EXPECT_EQ(back.ipc, s.ipc);
  EXPECT_EQ(back.method, "dap");
  EXPECT_EQ(back.provenance["guidance"], s.provenance["guidance"]);
  EXPECT_EQ(container_bytes(back), container_bytes(s));
  const auto ds = load_dataset(path, Split::train);
  EXPECT_EQ(ds.size(), s.total());
}

TEST(Container, ByteLayout) {
  Task t;
  const auto s = distill_random(t.data.train, 3, 1);
  const std::string b = container_bytes(s);
  EXPECT_EQ(std::memcmp(b.data(), "DAPDSET\0", 8), 0);
  EXPECT_EQ(read_u32(b, 8), 1u);
  EXPECT_EQ(read_u32(b, 12), 2u);
  EXPECT_EQ(read_u32(b, 16), 4u);
  EXPECT_EQ(read_u32(b, 20), 3u);
  for (int c = 0; c < 4; ++c) EXPECT_EQ(read_u32(b, 24 + 4 * c), static_cast<std::uint32_t>(c));
  const std::uint32_t p = read_u32(b, 40);
  EXPECT_EQ(b.size(), 44 + p + 4 * 3 * 2 * 8 + 8);
  double first = 0.0;
  std::memcpy(&first, b.data() + 44 + p, 8);
  EXPECT_EQ(first, s.samples[0][0][0]);
}

TEST(Container, DetectsCorruption) {
  Task t;
  const auto s = distill_random(t.data.train, 3, 1);
  const std::string good = container_bytes(s);
  auto parse = [](const std::string& bytes) {
    std::istringstream in(bytes);
    return read_container(in);
  };
  EXPECT_NO_THROW(parse(good));

  std::string flipped = good;
  flipped[good.size() - 20] ^= 0x01;
  EXPECT_THROW(parse(flipped), ValidationError);

  EXPECT_THROW(parse(good.substr(0, good.size() - 9)), ValidationError);

  std::string magic = good;
  magic[0] = 'X';
  EXPECT_THROW(parse(magic), ValidationError);

  std::string ipc = good;
  ipc[20] = 4;  // header claims more samples than the payload holds
  rewrite_checksum(ipc);
  EXPECT_THROW(parse(ipc), ValidationError);

  std::string version = good;
  version[8] = 2;
  rewrite_checksum(version);
  EXPECT_THROW(parse(version), ValidationError);
}

TEST(Dataset, CsvRoundTripAndValidation) {
  Task t;
  const std::string path = temp_path("data.csv");
  write_csv_dataset(path, t.data.test);
  const auto back = read_csv_dataset(path, Split::test);
  EXPECT_EQ(back.labels, t.data.test.labels);
  EXPECT_EQ(back.classes, t.data.test.classes);
  for (std::size_t i = 0; i < back.size(); ++i) ASSERT_EQ(back.samples[i], t.data.test.samples[i]);
  EXPECT_FALSE(is_container_file(path));
  EXPECT_EQ(load_dataset(path, Split::test).size(), back.size());

  std::istringstream header("x1,x2,label\n0.5,1,0\n2,3,1\n");
  EXPECT_EQ(parse_csv_dataset(header).size(), 2u);
  std::istringstream ragged("0.5,1,0\n2,1\n");
  EXPECT_THROW(parse_csv_dataset(ragged), ValidationError);
  std::istringstream frac("0.5,1,0.5\n");
  EXPECT_THROW(parse_csv_dataset(frac), ValidationError);
  EXPECT_THROW(read_csv_dataset(temp_path("missing.csv")), ValidationError);
}

TEST(Dataset, ValidateCatchesInconsistency) {
  LabeledDataset d;
  d.classes = {0, 1};
  d.samples = {Vec::Zero(2), Vec::Zero(2)};
  d.labels = {0, 1};
  EXPECT_NO_THROW(d.validate());
  d.labels = {0, 2};
  EXPECT_THROW(d.validate(), ValidationError);
  d.labels = {0};
  EXPECT_THROW(d.validate(), ValidationError);
  d.labels = {0, 1};
  d.samples[1] = Vec::Zero(3);
  EXPECT_THROW(d.validate(), ValidationError);
}

TEST(Tasks, RingsAndBlobsShape) {
  const auto task = make_rings_and_blobs(50, 20, 1);
  EXPECT_EQ(task.train.size(), 200u);
  EXPECT_EQ(task.test.size(), 80u);
  EXPECT_EQ(task.train.dim(), 2);
  EXPECT_EQ(task.train.classes, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_NE(task.train.samples[0], task.test.samples[0]);
  EXPECT_EQ(make_rings_and_blobs(50, 20, 1).train.samples, task.train.samples);
}

TEST(Tasks, DigitsPcaShape) {
  const auto task = make_digits_pca(std::string(DAP_SOURCE_DIR) + "/data/digits.csv", 16, 7);
  EXPECT_EQ(task.train.dim(), 16);
  EXPECT_EQ(task.train.classes.size(), 10u);
  EXPECT_EQ(task.train.size() + task.test.size(), 1797u);
  EXPECT_NEAR(static_cast<double>(task.train.size()) / 1797.0, 0.7, 0.01);
  // Unit average variance over the retained components.
  const Mat x = task.train.as_matrix();
  const Mat c = x.colwise() - x.rowwise().mean();
  EXPECT_NEAR((c.array().square().sum() / (x.cols() - 1)) / 16.0, 1.0, 1e-9);
  EXPECT_FALSE(task.spec.has_value());
}
