#pragma once

// Self-describing container for named float arrays plus a JSON metadata
// block. Layout (little-endian):
//   "DICADCKP" | u32 version | u32 meta_len | meta JSON | u32 count |
//   count x { u32 name_len | name | u32 ndim | u64 dims[ndim] | u64 fnv1a | f32 data[] }
// The metadata carries a table of contents so a truncated file can name
// the first array it is missing.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "dicad/autograd.hpp"
#include "dicad/tensor.hpp"

namespace dicad {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

inline std::uint64_t fnv1a(const void* data, std::size_t n) {
  auto p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

template <class U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
bool get(std::istream& is, U& v) {
  return bool(is.read(reinterpret_cast<char*>(&v), sizeof(U)));
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, std::uint32_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}

inline bool get_string(std::istream& is, std::string& s, std::uint32_t limit = 1u << 26) {
  std::uint32_t n = 0;
  if (!get(is, n) || n > limit) return false;
  s.resize(n);
  return bool(is.read(s.data(), n));
}

// Writes via a sibling temp file and renames into place.
template <class F>
void write_atomic(const std::filesystem::path& path, F&& writer) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    writer(os);
    os.flush();
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_atomic(path, [&](std::ostream& os) { os << text; });
}

}  // namespace io

struct NamedArray {
  std::string name;
  Tensor data;
};

struct Checkpoint {
  static constexpr char kMagic[8] = {'D', 'I', 'C', 'A', 'D', 'C', 'K', 'P'};
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const Tensor& array(std::string_view name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a.data;
    throw FormatError("checkpoint has no array '" + std::string(name) + "'");
  }
  bool has(std::string_view name) const {
    for (const auto& a : arrays)
      if (a.name == name) return true;
    return false;
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json m = meta;
    m["arrays"] = nlohmann::json::array();
    for (const auto& a : arrays) m["arrays"].push_back({{"name", a.name}, {"shape", a.data.shape()}});
    const std::string text = m.dump();
    io::write_atomic(path, [&](std::ostream& os) {
      os.write(kMagic, 8);
      io::put<std::uint32_t>(os, kVersion);
      io::put_string(os, text);
      io::put<std::uint32_t>(os, std::uint32_t(arrays.size()));
      for (const auto& a : arrays) {
        io::put_string(os, a.name);
        io::put<std::uint32_t>(os, std::uint32_t(a.data.rank()));
        for (auto d : a.data.shape()) io::put<std::uint64_t>(os, d);
        const std::size_t bytes = a.data.size() * sizeof(float);
        io::put<std::uint64_t>(os, io::fnv1a(a.data.data(), bytes));
        os.write(reinterpret_cast<const char*>(a.data.data()), std::streamsize(bytes));
      }
    });
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
      throw FormatError(path.string() + ": not a checkpoint (bad magic)");
    std::uint32_t version = 0;
    if (!io::get(is, version) || version != kVersion)
      throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    std::string text;
    if (!io::get_string(is, text)) throw FormatError(path.string() + ": truncated metadata block");
    Checkpoint ck;
    try {
      ck.meta = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": corrupt metadata: " + e.what());
    }
    std::vector<std::string> toc;
    if (ck.meta.contains("arrays"))
      for (const auto& e : ck.meta["arrays"]) toc.push_back(e.at("name").get<std::string>());
    ck.meta.erase("arrays");
    auto missing = [&](std::size_t i) {
      const std::string name = i < toc.size() ? toc[i] : ("#" + std::to_string(i));
      return FormatError(path.string() + ": truncated, missing array '" + name + "'");
    };
    std::uint32_t count = 0;
    if (!io::get(is, count)) throw missing(0);
    for (std::uint32_t i = 0; i < count; ++i) {
      NamedArray a;
      std::uint32_t ndim = 0;
      if (!io::get_string(is, a.name, 4096) || !io::get(is, ndim) || ndim > 8) throw missing(i);
      Shape shape(ndim);
      for (auto& d : shape)
        if (!io::get(is, d)) throw missing(i);
      std::uint64_t checksum = 0;
      if (!io::get(is, checksum)) throw missing(i);
      a.data = Tensor(shape);
      const std::size_t bytes = a.data.size() * sizeof(float);
      if (!is.read(reinterpret_cast<char*>(a.data.data()), std::streamsize(bytes))) throw missing(i);
      if (io::fnv1a(a.data.data(), bytes) != checksum)
        throw FormatError(path.string() + ": checksum mismatch in array '" + a.name + "'");
      ck.arrays.push_back(std::move(a));
    }
    return ck;
  }
};

// Copies checkpoint arrays into a parameter set, validating names and shapes.
template <class T>
void load_params(ag::ParamSet<T>& params, const Checkpoint& ck, const std::string& what) {
  for (auto& [name, var] : params.entries) {
    if (!ck.has(name)) throw FormatError(what + ": missing layer '" + name + "'");
    const Tensor& src = ck.array(name);
    if (src.shape() != var.value().shape())
      throw FormatError(what + ": shape mismatch in layer '" + name + "': file " + shape_str(src.shape()) +
                        ", expected " + shape_str(var.value().shape()));
    var.mutable_value() = src.template cast<T>();
  }
}

template <class T>
void store_params(const ag::ParamSet<T>& params, Checkpoint& ck) {
  for (const auto& [name, var] : params.entries) ck.arrays.push_back({name, var.value().template cast<float>()});
}

// Order-sensitive digest of all parameter values.
template <class T>
std::uint64_t params_digest(const ag::ParamSet<T>& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, var] : params.entries) {
    h ^= io::fnv1a(name.data(), name.size());
    h *= 1099511628211ull;
    h ^= io::fnv1a(var.value().data(), var.value().size() * sizeof(T));
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace dicad
