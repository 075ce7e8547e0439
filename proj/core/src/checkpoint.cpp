#include <cstring>
#include <fstream>
#include <sstream>

#include "rksa/run_config.hpp"
#include "rksa/train.hpp"

namespace rksa {

namespace {

constexpr char kMagic[8] = {'R', 'K', 'S', 'A', 'C', 'K', 'P', 'T'};
constexpr char kEndMarker[8] = {'E', 'N', 'D', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const std::string& name, const Matrix& m) {
    bytes(name);
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    out_.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename T>
  T pod() {
    T v{};
    raw(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }
  std::string bytes(std::uint64_t limit = 1ULL << 30) {
    const auto size = pod<std::uint64_t>();
    if (size > limit) fail("string length out of range");
    std::string s(size, '\0');
    raw(s.data(), size);
    return s;
  }
  Matrix tensor(const std::string& expected_name) {
    const std::string name = bytes(4096);
    if (name != expected_name) fail("expected tensor '" + expected_name + "', found '" + name + "'");
    const auto rows = pod<std::uint64_t>();
    const auto cols = pod<std::uint64_t>();
    if (rows > (1ULL << 28) || cols > (1ULL << 28) || rows * cols > (1ULL << 30)) fail("tensor shape out of range");
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    raw(reinterpret_cast<char*>(m.data()), rows * cols * sizeof(double));
    return m;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("checkpoint " + path_ + ": " + what);
  }

 private:
  void raw(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
  }

  std::istream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  Writer w(out);
  out.write(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint64_t>(config_hash(checkpoint.config));
  w.bytes(train_config_json(checkpoint.config));
  const ModelConfig& mc = checkpoint.model.config();
  w.pod<std::uint64_t>(mc.num_items);
  w.pod<std::uint64_t>(mc.num_users);
  w.pod<std::uint64_t>(checkpoint.epoch);
  w.pod<std::uint64_t>(checkpoint.adam_steps);
  w.bytes(checkpoint.rng_state);
  w.pod<std::uint8_t>(checkpoint.best_val_hit10.has_value() ? 1 : 0);
  w.pod<double>(checkpoint.best_val_hit10.value_or(0.0));

  const std::vector<NamedParameter> params = checkpoint.model.parameters();
  w.pod<std::uint64_t>(params.size());
  for (const auto& p : params) w.tensor(p.name, p.var.value());
  w.pod<std::uint64_t>(checkpoint.adam_m.size());
  for (std::size_t i = 0; i < checkpoint.adam_m.size(); ++i) {
    w.tensor("m:" + params[i].name, checkpoint.adam_m[i]);
    w.tensor("v:" + params[i].name, checkpoint.adam_v[i]);
  }
  out.write(kEndMarker, sizeof(kEndMarker));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[sizeof(kMagic)];
  for (char& c : magic) c = r.pod<char>();
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("not a checkpoint file");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    r.fail("incompatible format version " + std::to_string(version) + " (this build reads version " +
           std::to_string(kCheckpointVersion) + ")");
  }
  const auto hash = r.pod<std::uint64_t>();
  Checkpoint c;
  try {
    c.config = train_config_from_json(r.bytes());
  } catch (const ConfigError& e) {
    r.fail(std::string("bad embedded config: ") + e.what());
  }
  if (config_hash(c.config) != hash) r.fail("config hash mismatch");
  const auto num_items = r.pod<std::uint64_t>();
  const auto num_users = r.pod<std::uint64_t>();
  c.epoch = r.pod<std::uint64_t>();
  c.adam_steps = r.pod<std::uint64_t>();
  c.rng_state = r.bytes();
  const bool has_best = r.pod<std::uint8_t>() != 0;
  const double best = r.pod<double>();
  if (has_best) c.best_val_hit10 = best;

  Rng rng(0);
  c.model = Model::create(model_config(c.config, num_items, num_users), rng);
  std::vector<NamedParameter> params = c.model.parameters();
  const auto count = r.pod<std::uint64_t>();
  if (count != params.size()) r.fail("parameter count mismatch");
  for (auto& p : params) {
    Matrix m = r.tensor(p.name);
    if (m.rows() != p.var.rows() || m.cols() != p.var.cols()) r.fail("shape mismatch for " + p.name);
    p.var.mutable_value() = std::move(m);
  }
  const auto moments = r.pod<std::uint64_t>();
  if (moments != 0 && moments != params.size()) r.fail("optimizer moment count mismatch");
  for (std::size_t i = 0; i < moments; ++i) {
    c.adam_m.push_back(r.tensor("m:" + params[i].name));
    c.adam_v.push_back(r.tensor("v:" + params[i].name));
  }
  char end[sizeof(kEndMarker)];
  for (char& ch : end) ch = r.pod<char>();
  if (std::memcmp(end, kEndMarker, sizeof(kEndMarker)) != 0) r.fail("missing end marker");
  return c;
}

}  // namespace rksa
