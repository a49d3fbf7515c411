// SPDX-License-Identifier: Apache-2.0
#include "nlr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace nlr {

namespace {

constexpr char kMagic[8] = {'N', 'L', 'R', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void f32(float v) { bytes(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { bytes(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  void bytes(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) os_.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::vector<char> buf, std::string path) : buf_(std::move(buf)), path_(std::move(path)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(bytes(4))); }
  double f64() { return std::bit_cast<double>(bytes(8)); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw std::runtime_error("checkpoint: truncated file " + path_);
  }
  std::uint64_t bytes(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::vector<char> buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  // Write-then-rename so a crash never leaves a half-written checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot write " + tmp.string());
    os.write(kMagic, sizeof(kMagic));
    Writer w(os);
    w.u32(kCheckpointVersion);
    w.u64(ckpt.config_hash);
    w.u32(static_cast<std::uint32_t>(ckpt.arrays.size()));
    for (const auto& a : ckpt.arrays) {
      if (numel(a.shape) != a.values.size())
        throw ShapeError("checkpoint: array " + a.name + " has inconsistent shape");
      w.str(a.name);
      w.u32(static_cast<std::uint32_t>(a.shape.size()));
      for (auto d : a.shape) w.u64(d);
      for (float v : a.values) w.f32(v);
    }
    w.u32(static_cast<std::uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
      w.str(k);
      w.f64(v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  Reader r(std::vector<char>(buf.begin() + sizeof(kMagic), buf.end()), path.string());
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_hash = r.u64();
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedArray a;
    a.name = r.str();
    const auto rank = r.u32();
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank in " + path.string());
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(r.u64());
    const auto count = numel(a.shape);
    if (count > (std::size_t{1} << 32)) throw std::runtime_error("checkpoint: implausible size");
    a.values.resize(count);
    for (auto& v : a.values) v = r.f32();
    ckpt.arrays.push_back(std::move(a));
  }
  const auto m = r.u32();
  for (std::uint32_t i = 0; i < m; ++i) {
    auto k = r.str();
    ckpt.meta[k] = r.f64();
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes in " + path.string());
  return ckpt;
}

template <typename T>
std::vector<NamedArray> export_parameters(const ParameterList<T>& params, const std::string& prefix) {
  std::vector<NamedArray> out;
  for (const auto& p : params) {
    NamedArray a{prefix + p.name, p.tensor.shape(), {}};
    for (T v : p.tensor.values()) a.values.push_back(static_cast<float>(v));
    out.push_back(std::move(a));
  }
  return out;
}

template <typename T>
void import_parameters(const Checkpoint& ckpt, const ParameterList<T>& params,
                       const std::string& prefix) {
  for (const auto& p : params) {
    const auto* a = ckpt.find(prefix + p.name);
    if (!a) throw std::runtime_error("checkpoint: missing array " + prefix + p.name);
    if (a->shape != p.tensor.shape())
      throw ShapeError("checkpoint: " + a->name + " has shape " + to_string(a->shape) +
                       ", model expects " + to_string(p.tensor.shape()));
    auto dst = Tensor<T>(p.tensor).mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(a->values[i]);
  }
}

template std::vector<NamedArray> export_parameters(const ParameterList<float>&, const std::string&);
template std::vector<NamedArray> export_parameters(const ParameterList<double>&, const std::string&);
template void import_parameters(const Checkpoint&, const ParameterList<float>&, const std::string&);
template void import_parameters(const Checkpoint&, const ParameterList<double>&, const std::string&);

}  // namespace nlr
