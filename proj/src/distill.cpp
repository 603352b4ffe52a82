#include "dap/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dap {

using nlohmann::json;

void DistilledSet::validate() const {
  require(ipc >= 1, "distilled set: ipc must be positive");
  require(!classes.empty(), "distilled set: no classes");
  require(samples.size() == classes.size(), "distilled set: class count mismatch");
  require(unique_labels(classes) == classes, "distilled set: classes must be sorted and unique");
  for (std::size_t c = 0; c < classes.size(); ++c) {
    require(samples[c].size() == static_cast<std::size_t>(ipc),
            "distilled set: class " + std::to_string(classes[c]) + " has " + std::to_string(samples[c].size()) +
                " samples, expected " + std::to_string(ipc));
    for (const Vec& v : samples[c]) {
      require(v.size() == dim, "distilled set: sample dimension mismatch");
      require(v.allFinite(), "distilled set: non-finite sample");
    }
  }
}

const VecList& DistilledSet::of_class(int label) const {
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (classes[c] == label) return samples[c];
  }
  throw ValidationError("distilled set has no class " + std::to_string(label));
}

LabeledDataset DistilledSet::to_dataset() const {
  LabeledDataset d;
  d.classes = classes;
  d.split = Split::train;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    for (const Vec& v : samples[c]) {
      d.samples.push_back(v);
      d.labels.push_back(classes[c]);
    }
  }
  return d;
}

json describe(const GuidanceConfig& cfg) {
  json j;
  j["gamma"] = cfg.gamma;
  j["t_stop"] = cfg.t_stop;
  j["kernel"] = to_string(cfg.kernel);
  j["feature_map"] = to_string(cfg.feature_map);
  j["reference_batch"] = cfg.reference_batch;
  j["frozen_ref_noise"] = cfg.frozen_ref_noise;
  j["target"] = to_string(cfg.target);
  j["step_rule"] = to_string(cfg.step_rule);
  return j;
}

json describe(const NoiseSchedule& schedule) {
  return json{{"kind", "linear"},
              {"steps", schedule.steps()},
              {"beta_start", schedule.beta_start()},
              {"beta_end", schedule.beta_end()}};
}

DistilledSet distill_dap(const LabeledDataset& train, const GuidanceConfig& cfg, const NoiseSchedule& schedule,
                         const ScoreModel& score, int ipc, std::uint64_t seed, Exec exec) {
  const auto start = std::chrono::steady_clock::now();
  train.validate();
  cfg.validate(schedule);
  require(ipc >= 1, "ipc must be at least 1");
  require(!train.empty(), "distill: empty training set");
  require(score.dim() == train.dim(), "distill: score model dimension " + std::to_string(score.dim()) +
                                          " does not match data dimension " + std::to_string(train.dim()));
  for (int label : train.classes) {
    require(train.count(label) > 0, "distill: class " + std::to_string(label) + " has no training samples");
  }
  FeatureMap map(cfg.feature_map, score.denoiser());
  ReferenceBank bank(train, cfg.reference_batch, splitmix64(seed ^ 0xB4A7ULL), map, cfg.frozen_ref_noise);

  DistilledSet set;
  set.classes = train.classes;
  set.ipc = ipc;
  set.dim = train.dim();
  const bool unguided = cfg.gamma == 0.0 || cfg.t_stop >= schedule.steps();
  set.method = unguided ? "unguided" : "dap";
  long guided_steps = -1;
  for (int label : set.classes) {
    SampleResult r = sample_distilled(cfg, schedule, score, bank, label, ipc, seed, exec);
    for (const auto& c : r.counters) {
      require(guided_steps < 0 || guided_steps == c.guided, "distill: trajectories disagree on guided steps");
      guided_steps = c.guided;
    }
    set.samples.push_back(std::move(r.samples));
  }
  set.provenance = json{{"method", set.method},
                        {"seed", seed},
                        {"ipc", ipc},
                        {"score", score.id()},
                        {"schedule", describe(schedule)},
                        {"guidance", describe(cfg)},
                        {"guided_steps_per_trajectory", guided_steps}};
  set.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return set;
}

namespace {

// First k entries of a seeded Fisher-Yates shuffle of [0, n).
std::vector<std::size_t> choose(std::size_t n, std::size_t k, RngStream& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  return idx;
}

}  // namespace

DistilledSet distill_random(const LabeledDataset& train, int ipc, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  train.validate();
  require(ipc >= 1, "ipc must be at least 1");
  DistilledSet set;
  set.method = "random";
  set.classes = train.classes;
  set.ipc = ipc;
  set.dim = train.dim();
  for (int label : set.classes) {
    const VecList pool = train.of_class(label);
    require(pool.size() >= static_cast<std::size_t>(ipc), "random subset: class " + std::to_string(label) +
                                                               " has " + std::to_string(pool.size()) +
                                                               " samples, fewer than ipc " + std::to_string(ipc));
    RngStream rng(seed, {0x2A4DULL, static_cast<std::uint64_t>(label)});
    VecList chosen;
    for (std::size_t i : choose(pool.size(), static_cast<std::size_t>(ipc), rng)) chosen.push_back(pool[i]);
    set.samples.push_back(std::move(chosen));
  }
  set.provenance = json{{"method", "random"}, {"seed", seed}, {"ipc", ipc}};
  set.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return set;
}

DistilledSet subsample_set(const DistilledSet& parent, int new_ipc, std::uint64_t seed) {
  parent.validate();
  require(new_ipc >= 1 && new_ipc <= parent.ipc, "subsample: new ipc " + std::to_string(new_ipc) +
                                                     " must lie in [1, " + std::to_string(parent.ipc) + "]");
  DistilledSet set;
  set.method = parent.method;
  set.classes = parent.classes;
  set.ipc = new_ipc;
  set.dim = parent.dim;
  for (std::size_t c = 0; c < parent.classes.size(); ++c) {
    RngStream rng(seed, {0x5B5EULL, static_cast<std::uint64_t>(parent.classes[c])});
    // Keep parent order, so new_ipc == ipc reproduces the parent exactly.
    auto idx = choose(parent.samples[c].size(), static_cast<std::size_t>(new_ipc), rng);
    std::sort(idx.begin(), idx.end());
    VecList chosen;
    for (std::size_t i : idx) chosen.push_back(parent.samples[c][i]);
    set.samples.push_back(std::move(chosen));
  }
  set.provenance = json{{"method", parent.method},
                        {"ipc", new_ipc},
                        {"subsample", {{"seed", seed}, {"from_ipc", parent.ipc}}},
                        {"parent", parent.provenance}};
  return set;
}

// ---------------------------------------------------------------------------
// Container

namespace {

void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& b, double d) {
  std::uint64_t v = 0;
  std::memcpy(&v, &d, sizeof v);
  put_u64(b, v);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw ValidationError("container: truncated file");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t uint(int width) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(static_cast<std::size_t>(width)));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t v = uint(8);
    double d = 0.0;
    std::memcpy(&d, &v, sizeof d);
    return d;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string container_bytes(const DistilledSet& set) {
  set.validate();
  std::string b(kContainerMagic, sizeof kContainerMagic);
  put_u32(b, kContainerVersion);
  put_u32(b, static_cast<std::uint32_t>(set.dim));
  put_u32(b, static_cast<std::uint32_t>(set.classes.size()));
  put_u32(b, static_cast<std::uint32_t>(set.ipc));
  for (int label : set.classes) put_u32(b, static_cast<std::uint32_t>(label));
  json prov = set.provenance;
  prov["method"] = set.method;
  const std::string text = prov.dump();
  put_u32(b, static_cast<std::uint32_t>(text.size()));
  b += text;
  for (const VecList& cls : set.samples) {
    for (const Vec& v : cls) {
      for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(b, v[i]);
    }
  }
  put_u64(b, fnv1a(b.data(), b.size()));
  return b;
}

void write_container(std::ostream& out, const DistilledSet& set) {
  const std::string b = container_bytes(set);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) throw ValidationError("container: write failed");
}

void write_container(const std::string& path, const DistilledSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  write_container(out, set);
}

DistilledSet read_container(std::istream& in) {
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  require(bytes.size() >= sizeof kContainerMagic + 8, "container: file too short");
  require(std::memcmp(bytes.data(), kContainerMagic, sizeof kContainerMagic) == 0, "container: bad magic");
  {
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) {
      stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[bytes.size() - 8 + i])) << (8 * i);
    }
    require(stored == fnv1a(bytes.data(), bytes.size() - 8), "container: checksum mismatch");
  }
  Reader r(bytes);
  r.take(sizeof kContainerMagic);
  const auto version = r.uint(4);
  require(version == kContainerVersion, "container: unsupported version " + std::to_string(version));
  DistilledSet set;
  set.dim = static_cast<Eigen::Index>(r.uint(4));
  const auto n_classes = r.uint(4);
  set.ipc = static_cast<int>(r.uint(4));
  require(n_classes >= 1 && n_classes < (1u << 20), "container: implausible class count");
  require(set.dim >= 1 && set.ipc >= 1, "container: empty payload");
  for (std::uint64_t c = 0; c < n_classes; ++c) set.classes.push_back(static_cast<std::int32_t>(r.uint(4)));
  const auto prov_len = r.uint(4);
  const char* prov = r.take(prov_len);
  try {
    set.provenance = json::parse(prov, prov + prov_len);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("container: bad provenance: ") + e.what());
  }
  set.method = set.provenance.value("method", "");
  const std::uint64_t expected =
      n_classes * static_cast<std::uint64_t>(set.ipc) * static_cast<std::uint64_t>(set.dim) * 8 + 8;
  require(bytes.size() - r.pos() == expected, "container: payload size does not match header");
  for (std::uint64_t c = 0; c < n_classes; ++c) {
    VecList cls;
    for (int i = 0; i < set.ipc; ++i) {
      Vec v(set.dim);
      for (Eigen::Index k = 0; k < set.dim; ++k) v[k] = r.f64();
      cls.push_back(std::move(v));
    }
    set.samples.push_back(std::move(cls));
  }
  set.validate();
  return set;
}

DistilledSet read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return read_container(in);
}

bool is_container_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  char head[sizeof kContainerMagic] = {};
  in.read(head, sizeof head);
  return in.gcount() == sizeof head && std::memcmp(head, kContainerMagic, sizeof head) == 0;
}

LabeledDataset load_dataset(const std::string& path, Split split) {
  if (is_container_file(path)) {
    LabeledDataset d = read_container(path).to_dataset();
    d.split = split;
    return d;
  }
  return read_csv_dataset(path, split);
}

// ---------------------------------------------------------------------------
// Tasks

GmmSpec rings_and_blobs() {
  GmmSpec spec;
  for (int c = 0; c < 4; ++c) {
    const double core_angle = std::numbers::pi / 2.0 * c;
    const double sat_angle = core_angle + 50.0 * std::numbers::pi / 180.0;
    GmmClass cls;
    cls.label = c;
    cls.components.push_back(
        {0.6, (Vec(2) << 2.0 * std::cos(core_angle), 2.0 * std::sin(core_angle)).finished(),
         Vec::Constant(2, 1.2 * 1.2)});
    cls.components.push_back(
        {0.4, (Vec(2) << 4.2 * std::cos(sat_angle), 4.2 * std::sin(sat_angle)).finished(),
         Vec::Constant(2, 0.45 * 0.45)});
    spec.classes.push_back(std::move(cls));
  }
  spec.validate();
  return spec;
}

TaskData make_rings_and_blobs(std::size_t train_per_class, std::size_t test_per_class, std::uint64_t seed) {
  TaskData task;
  task.name = "rings-and-blobs";
  task.spec = rings_and_blobs();
  RngStream train_rng(seed, {0x7A1AULL});
  RngStream test_rng(seed, {0x7E57ULL});
  task.train = task.spec->sample(train_per_class, train_rng, Split::train);
  task.test = task.spec->sample(test_per_class, test_rng, Split::test);
  return task;
}

TaskData make_digits_pca(const std::string& csv_path, int components, std::uint64_t seed) {
  const LabeledDataset raw = read_csv_dataset(csv_path, Split::train);
  require(components >= 1 && components <= raw.dim(), "digits: bad PCA dimension");
  std::vector<std::size_t> train_idx, test_idx;
  for (int label : raw.classes) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw.labels[i] == label) idx.push_back(i);
    }
    RngStream rng(seed, {0xD161ULL, static_cast<std::uint64_t>(label)});
    const auto shuffled = choose(idx.size(), idx.size(), rng);
    const std::size_t n_train = (idx.size() * 7 + 5) / 10;
    for (std::size_t k = 0; k < shuffled.size(); ++k) {
      (k < n_train ? train_idx : test_idx).push_back(idx[shuffled[k]]);
    }
  }
  Mat x(raw.dim(), static_cast<Eigen::Index>(train_idx.size()));
  for (std::size_t k = 0; k < train_idx.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = raw.samples[train_idx[k]];
  const Vec mean = x.rowwise().mean();
  const Mat centered = x.colwise() - mean;
  const Mat cov = centered * centered.transpose() / static_cast<double>(x.cols() - 1);
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("digits: PCA eigendecomposition failed");
  Mat basis(raw.dim(), components);
  double var_sum = 0.0;
  for (int k = 0; k < components; ++k) {
    Vec v = eig.eigenvectors().col(raw.dim() - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    basis.col(k) = v;
    var_sum += eig.eigenvalues()[raw.dim() - 1 - k];
  }
  const double scale = 1.0 / std::sqrt(var_sum / components);
  auto project = [&](const std::vector<std::size_t>& idx, Split split) {
    LabeledDataset d;
    d.split = split;
    d.classes = raw.classes;
    for (std::size_t i : idx) {
      d.samples.push_back(scale * basis.transpose() * (raw.samples[i] - mean));
      d.labels.push_back(raw.labels[i]);
    }
    return d;
  };
  TaskData task;
  task.name = "digits-pca";
  task.train = project(train_idx, Split::train);
  task.test = project(test_idx, Split::test);
  return task;
}

}  // namespace dap
