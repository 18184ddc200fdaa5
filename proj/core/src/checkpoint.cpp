#include "fedanchor/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedanchor::experiment {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr std::array<char, 8> kMagic{'F', 'A', 'N', 'C', 'H', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const std::vector<char>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  std::vector<char>& bytes() { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::size_t limit, std::string path)
      : bytes_(bytes), limit_(limit), path_(std::move(path)) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > limit_) {
      throw std::runtime_error("checkpoint " + path_ + " is truncated");
    }
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::size_t position() const { return pos_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
  std::string path_;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  for (const char c : kMagic) {
    w.put(c);
  }
  w.put(kVersion);
  w.put<std::uint64_t>(ckpt.seed);
  w.put<std::uint64_t>(ckpt.round);
  const nn::NetworkSpec spec = ckpt.params.spec();
  w.put<std::uint64_t>(spec.input_dim);
  w.put<std::uint64_t>(spec.hidden_dims.size());
  for (const std::size_t h : spec.hidden_dims) {
    w.put<std::uint64_t>(h);
  }
  w.put<std::uint64_t>(spec.num_classes);
  w.put<std::uint64_t>(spec.anchor_dim);
  for (const auto t : ckpt.params.tensors()) {
    for (const double v : t) {
      w.put(v);
    }
  }
  w.put(fnv1a(w.bytes()));

  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) {
    throw std::runtime_error("cannot write checkpoint " + path.string());
  }
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("checkpoint " + path.string() + " not found");
  }
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (bytes.size() < kMagic.size() + sizeof(std::uint64_t)) {
    throw std::runtime_error("checkpoint " + path.string() + " is truncated");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored_hash = 0;
  std::memcpy(&stored_hash, bytes.data() + body, sizeof stored_hash);
  if (fnv1a(std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(body))) !=
      stored_hash) {
    throw std::runtime_error("checkpoint " + path.string() + " failed its integrity check");
  }

  Reader r(bytes, body, path.string());
  for (const char c : kMagic) {
    if (r.get<char>() != c) {
      throw std::runtime_error(path.string() + " is not a checkpoint file");
    }
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw std::runtime_error("checkpoint " + path.string() + " has unsupported version " +
                             std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.seed = r.get<std::uint64_t>();
  ckpt.round = r.get<std::uint64_t>();
  nn::NetworkSpec spec;
  spec.input_dim = r.get<std::uint64_t>();
  const auto layers = r.get<std::uint64_t>();
  if (layers > 1024) {
    throw std::runtime_error("checkpoint " + path.string() + " has an implausible layer count");
  }
  for (std::uint64_t l = 0; l < layers; ++l) {
    spec.hidden_dims.push_back(r.get<std::uint64_t>());
  }
  spec.num_classes = r.get<std::uint64_t>();
  spec.anchor_dim = r.get<std::uint64_t>();
  const std::size_t expected = nn::param_count(spec) * sizeof(double);
  if (r.position() + expected != body) {
    throw std::runtime_error("checkpoint " + path.string() + " size does not match its header");
  }
  ckpt.params = nn::zeros(spec);
  for (auto t : ckpt.params.tensors()) {
    for (double& v : t) {
      v = r.get<double>();
    }
  }
  return ckpt;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::size_t round) {
  char name[32];
  std::snprintf(name, sizeof name, "round_%04zu.ckpt", round);
  return out_dir / "checkpoints" / name;
}

}  // namespace fedanchor::experiment
