#include "gridcast/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

namespace gridcast {

static_assert(std::endian::native == std::endian::little, "container payloads are written in host order");

namespace {

constexpr char kMagic[4] = {'G', 'C', 'T', '1'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, std::uint8_t>) return DType::u8;
  else if constexpr (std::is_same_v<T, float>) return DType::f32;
  else return DType::f64;
}

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::u8: return 1;
    case DType::f32: return 4;
    case DType::f64: return 8;
  }
  return 0;
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  void read(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw TruncatedFileError(path_ + ": truncated while reading " + what);
    }
    pos_ += n;
  }

  template <typename T>
  T get(const char* what) {
    T v;
    read(&v, sizeof(T), what);
    return v;
  }

  void skip(std::uint64_t n, const char* what) {
    in_.seekg(static_cast<std::streamoff>(n), std::ios::cur);
    pos_ += n;
    if (!in_ || pos_ > size_) throw TruncatedFileError(path_ + ": truncated while reading " + what);
  }

  void set_size(std::uint64_t s) { size_ = s; }
  std::uint64_t pos() const { return pos_; }
  const std::string& path() const { return path_; }

 private:
  std::istream& in_;
  std::string path_;
  std::uint64_t pos_ = 0;
  std::uint64_t size_ = std::numeric_limits<std::uint64_t>::max();
};

struct Header {
  std::string name;
  EntryInfo info;
};

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorFileError(path.string() + ": cannot open for reading");
  return in;
}

std::uint32_t read_preamble(Reader& r) {
  char magic[4];
  try {
    r.read(magic, 4, "magic");
  } catch (const TruncatedFileError&) {
    throw BadMagicError(r.path() + ": file too short to hold the GCT1 magic");
  }
  if (std::memcmp(magic, kMagic, 4) != 0) throw BadMagicError(r.path() + ": bad magic, not a GCT1 container");
  return r.get<std::uint32_t>("entry count");
}

Header read_header(Reader& r) {
  Header h;
  const auto len = r.get<std::uint16_t>("name length");
  h.name.resize(len);
  r.read(h.name.data(), len, "entry name");
  if (h.name.empty()) throw TensorFileError(r.path() + ": empty entry name");
  const auto code = r.get<std::uint8_t>("dtype");
  if (code > 2) {
    throw UnknownDTypeError(r.path() + ": entry '" + h.name + "' has unknown dtype code " + std::to_string(code));
  }
  h.info.dtype = static_cast<DType>(code);
  const auto ndim = r.get<std::uint8_t>("ndim");
  for (std::uint8_t i = 0; i < ndim; ++i) h.info.shape.push_back(r.get<std::uint32_t>("dims"));
  h.info.payload_offset = r.pos();
  return h;
}

template <typename T>
AnyTensor read_payload(Reader& r, const Header& h) {
  Tensor<T> t(h.info.shape);
  r.read(t.data(), static_cast<std::size_t>(t.size()) * sizeof(T), "payload");
  return t;
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const TensorMap& entries) {
  std::string buf(kMagic, 4);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, any] : entries) {
    if (name.empty()) throw TensorFileError("tensor entry names must be non-empty");
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw TensorFileError("entry name too long: " + name);
    std::visit(
        [&](const auto& t) {
          using T = typename std::decay_t<decltype(t)>::Scalar;
          if (t.rank() > 255) throw TensorFileError("entry '" + name + "' has too many dimensions");
          put<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
          buf += name;
          put<std::uint8_t>(buf, static_cast<std::uint8_t>(dtype_of<T>()));
          put<std::uint8_t>(buf, static_cast<std::uint8_t>(t.rank()));
          for (Index d : t.shape()) {
            if (d > std::numeric_limits<std::uint32_t>::max()) throw TensorFileError("extent too large in " + name);
            put<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
          }
          buf.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(T));
        },
        any);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw TensorFileError(tmp.string() + ": cannot open for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw TensorFileError(tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

TensorMap read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in = open_for_read(path);
  Reader r(in, path.string());
  const std::uint32_t count = read_preamble(r);
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const Header h = read_header(r);
    AnyTensor t;
    switch (h.info.dtype) {
      case DType::u8: t = read_payload<std::uint8_t>(r, h); break;
      case DType::f32: t = read_payload<float>(r, h); break;
      case DType::f64: t = read_payload<double>(r, h); break;
    }
    if (!out.emplace(h.name, std::move(t)).second) {
      throw TensorFileError(path.string() + ": duplicate entry name '" + h.name + "'");
    }
  }
  return out;
}

std::map<std::string, EntryInfo> scan_tensor_file(const std::filesystem::path& path) {
  std::ifstream in = open_for_read(path);
  Reader r(in, path.string());
  r.set_size(std::filesystem::file_size(path));
  const std::uint32_t count = read_preamble(r);
  std::map<std::string, EntryInfo> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    Header h = read_header(r);
    r.skip(static_cast<std::uint64_t>(numel(h.info.shape)) * dtype_size(h.info.dtype), "payload");
    out.emplace(h.name, h.info);
  }
  return out;
}

Tensor<std::uint8_t> read_u8_rows(const std::filesystem::path& path, const std::string& name, Index first,
                                  Index count) {
  const auto index = scan_tensor_file(path);
  auto it = index.find(name);
  if (it == index.end()) throw TensorFileError(path.string() + ": missing entry '" + name + "'");
  const EntryInfo& info = it->second;
  if (info.dtype != DType::u8 || info.shape.empty()) {
    throw TensorFileError(path.string() + ": entry '" + name + "' is not a u8 array");
  }
  if (first < 0 || count < 0 || first + count > info.shape[0]) {
    throw TensorFileError(path.string() + ": rows [" + std::to_string(first) + "," + std::to_string(first + count) +
                          ") outside entry '" + name + "' of shape " + to_string(info.shape));
  }
  Shape shape = info.shape;
  shape[0] = count;
  const Index row = numel(info.shape) / info.shape[0];
  Tensor<std::uint8_t> t(shape);
  std::ifstream in = open_for_read(path);
  in.seekg(static_cast<std::streamoff>(info.payload_offset + static_cast<std::uint64_t>(first * row)));
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size()));
  if (in.gcount() != t.size()) throw TruncatedFileError(path.string() + ": truncated while reading rows");
  return t;
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, const char* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_file(std::uint64_t h, const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw TensorFileError("cannot open " + file.string());
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a(h, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h;
}

}  // namespace

std::uint64_t content_digest(const std::filesystem::path& path, const std::vector<std::string>& skip) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  if (!std::filesystem::is_directory(path)) return hash_file(h, path);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(path)) {
    if (!e.is_regular_file()) continue;
    if (std::find(skip.begin(), skip.end(), e.path().filename().string()) != skip.end()) continue;
    files.push_back(std::filesystem::relative(e.path(), path));
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const std::string name = f.generic_string();
    h = fnv1a(h, name.data(), name.size() + 1);
    h = hash_file(h, path / f);
  }
  return h;
}

std::string hex_digest(std::uint64_t d) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

}  // namespace gridcast
