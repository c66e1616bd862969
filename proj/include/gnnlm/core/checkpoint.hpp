#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "gnnlm/core/tensor.hpp"

// Named-blob parameter container. Layout (little-endian):
//   magic "GLMCKPT1"
//   u64 entry count
//   per entry: u32 name length, name bytes (UTF-8), u8 dtype (0=f64, 1=f32),
//              u8 ndim, u64 dims[ndim], raw values
namespace gnnlm {

namespace ckpt_detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace ckpt_detail

constexpr char kCheckpointMagic[8] = {'G', 'L', 'M', 'C', 'K', 'P', 'T', '1'};

// Ordered name → tensor map; order is preserved for byte-stable output.
class Checkpoint {
 public:
  void put(const std::string& name, const Tensor& t) {
    for (auto& e : entries_)
      if (e.first == name) {
        e.second = t;
        return;
      }
    entries_.emplace_back(name, t);
  }

  bool contains(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.first == name) return true;
    return false;
  }

  const Tensor& get(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.first == name) return e.second;
    throw RuntimeFailure("checkpoint: no tensor named '" + name + "'");
  }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw RuntimeFailure("checkpoint: cannot open for writing: " + path);
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    ckpt_detail::write_u64(os, entries_.size());
    for (const auto& [name, t] : entries_) {
      ckpt_detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      const std::uint8_t dtype = sizeof(Real) == 8 ? 0 : 1;
      os.put(static_cast<char>(dtype));
      os.put(static_cast<char>(t.ndim()));
      for (auto d : t.shape()) ckpt_detail::write_u64(os, d);
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(Real)));
    }
    if (!os) throw RuntimeFailure("checkpoint: write failed: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeFailure("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
      throw RuntimeFailure("checkpoint: bad magic in " + path);
    Checkpoint ck;
    const std::uint64_t count = ckpt_detail::read_u64(is);
    for (std::uint64_t e = 0; e < count; ++e) {
      const std::uint32_t name_len = ckpt_detail::read_u32(is);
      std::string name(name_len, '\0');
      is.read(name.data(), name_len);
      const int dtype = is.get();
      const int ndim = is.get();
      std::vector<std::size_t> shape(static_cast<std::size_t>(ndim));
      std::size_t numel = 1;
      for (auto& d : shape) {
        d = static_cast<std::size_t>(ckpt_detail::read_u64(is));
        numel *= d;
      }
      std::vector<Real> data(numel);
      if (dtype == 0) {
        std::vector<double> raw(numel);
        is.read(reinterpret_cast<char*>(raw.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        for (std::size_t i = 0; i < numel; ++i) data[i] = static_cast<Real>(raw[i]);
      } else if (dtype == 1) {
        std::vector<float> raw(numel);
        is.read(reinterpret_cast<char*>(raw.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        for (std::size_t i = 0; i < numel; ++i) data[i] = static_cast<Real>(raw[i]);
      } else {
        throw RuntimeFailure("checkpoint: unknown dtype tag in " + path);
      }
      if (!is) throw RuntimeFailure("checkpoint: truncated file: " + path);
      ck.put(name, Tensor::from(std::move(shape), std::move(data)));
    }
    return ck;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace gnnlm
