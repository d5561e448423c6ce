#include "degmon/array_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "degmon/error.hpp"

namespace degmon {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'G', 'M', 'A', 'R', 'R', '\0', '\0'};

template <typename T>
NamedArray make_array(DType dt, std::vector<std::int64_t> shape, std::span<const T> values) {
  NamedArray a;
  a.dtype = dt;
  a.shape = std::move(shape);
  if (a.element_count() != static_cast<std::int64_t>(values.size())) {
    throw ValidationError("array shape does not match value count");
  }
  a.payload.resize(values.size_bytes());
  std::memcpy(a.payload.data(), values.data(), values.size_bytes());
  return a;
}

template <typename T>
std::vector<T> read_values(const NamedArray& a, DType expected) {
  if (a.dtype != expected) throw FormatError("array dtype mismatch");
  std::vector<T> out(a.payload.size() / sizeof(T));
  std::memcpy(out.data(), a.payload.data(), out.size() * sizeof(T));
  return out;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("truncated container " + path);
  return v;
}

}  // namespace

std::size_t dtype_size(DType dt) {
  switch (dt) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kI64: return 8;
    case DType::kU8: return 1;
  }
  throw FormatError("unknown dtype tag");
}

std::int64_t NamedArray::element_count() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

NamedArray NamedArray::from_f32(std::vector<std::int64_t> shape, std::span<const float> values) {
  return make_array(DType::kF32, std::move(shape), values);
}
NamedArray NamedArray::from_f64(std::vector<std::int64_t> shape, std::span<const double> values) {
  return make_array(DType::kF64, std::move(shape), values);
}
NamedArray NamedArray::from_i64(std::vector<std::int64_t> shape, std::span<const std::int64_t> values) {
  return make_array(DType::kI64, std::move(shape), values);
}

std::vector<float> NamedArray::to_f32() const {
  if (dtype == DType::kF64) {
    const auto d = read_values<double>(*this, DType::kF64);
    return {d.begin(), d.end()};
  }
  return read_values<float>(*this, DType::kF32);
}

std::vector<double> NamedArray::to_f64() const {
  if (dtype == DType::kF32) {
    const auto f = read_values<float>(*this, DType::kF32);
    return {f.begin(), f.end()};
  }
  return read_values<double>(*this, DType::kF64);
}

std::vector<std::int64_t> NamedArray::to_i64() const { return read_values<std::int64_t>(*this, DType::kI64); }

void ArrayStore::put(const std::string& name, NamedArray array) {
  if (name.empty()) throw ValidationError("array name must not be empty");
  arrays_[name] = std::move(array);
}

const NamedArray& ArrayStore::get(const std::string& name) const {
  const auto it = arrays_.find(name);
  if (it == arrays_.end()) throw FormatError("container has no array named '" + name + "'");
  return it->second;
}

std::vector<std::string> ArrayStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : arrays_) out.push_back(name);
  return out;
}

void ArrayStore::set_metadata(const nlohmann::json& meta) {
  const std::string text = meta.dump();
  NamedArray a;
  a.dtype = DType::kU8;
  a.shape = {static_cast<std::int64_t>(text.size())};
  a.payload.resize(text.size());
  std::memcpy(a.payload.data(), text.data(), text.size());
  arrays_[kMetadataName] = std::move(a);
}

nlohmann::json ArrayStore::metadata() const {
  const auto it = arrays_.find(kMetadataName);
  if (it == arrays_.end()) return nlohmann::json::object();
  const std::string text(reinterpret_cast<const char*>(it->second.payload.data()), it->second.payload.size());
  auto meta = nlohmann::json::parse(text, nullptr, false);
  if (meta.is_discarded()) throw FormatError("malformed container metadata");
  return meta;
}

void ArrayStore::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint32_t>(arrays_.size()));
  for (const auto& [name, a] : arrays_) {
    write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(out, static_cast<std::uint8_t>(a.dtype));
    write_pod(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) write_pod(out, d);
    write_pod(out, static_cast<std::uint64_t>(a.payload.size()));
    out.write(reinterpret_cast<const char*>(a.payload.data()), static_cast<std::streamsize>(a.payload.size()));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

ArrayStore ArrayStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string p = path.string();
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError("not a named-array container: " + p);
  const auto version = read_pod<std::uint32_t>(in, p);
  if (version != kVersion) throw FormatError("unsupported container version " + std::to_string(version));
  const auto count = read_pod<std::uint32_t>(in, p);
  ArrayStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in, p);
    if (name_len == 0 || name_len > 4096) throw FormatError("bad array name length in " + p);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    NamedArray a;
    const auto tag = read_pod<std::uint8_t>(in, p);
    if (tag < 1 || tag > 4) throw FormatError("unknown dtype tag in " + p);
    a.dtype = static_cast<DType>(tag);
    const auto rank = read_pod<std::uint32_t>(in, p);
    if (rank > 8) throw FormatError("rank too large in " + p);
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(read_pod<std::int64_t>(in, p));
    const auto bytes = read_pod<std::uint64_t>(in, p);
    if (bytes != static_cast<std::uint64_t>(a.element_count()) * dtype_size(a.dtype)) {
      throw FormatError("payload size mismatch for '" + name + "' in " + p);
    }
    a.payload.resize(bytes);
    in.read(reinterpret_cast<char*>(a.payload.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw FormatError("truncated container " + p);
    store.arrays_[name] = std::move(a);
  }
  return store;
}

}  // namespace degmon
