#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace degmon {

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2, kI64 = 3, kU8 = 4 };

std::size_t dtype_size(DType dt);

struct NamedArray {
  DType dtype = DType::kF32;
  std::vector<std::int64_t> shape;
  std::vector<std::byte> payload;

  std::int64_t element_count() const;

  static NamedArray from_f32(std::vector<std::int64_t> shape, std::span<const float> values);
  static NamedArray from_f64(std::vector<std::int64_t> shape, std::span<const double> values);
  static NamedArray from_i64(std::vector<std::int64_t> shape, std::span<const std::int64_t> values);

  std::vector<float> to_f32() const;
  std::vector<double> to_f64() const;
  std::vector<std::int64_t> to_i64() const;
};

/// Versioned named-array container.
///
/// Layout (little endian): magic "DGMARR\0\0", u32 version, u32 count, then per
/// array: u32 name length, name bytes, u8 dtype tag, u32 rank, i64 dims[rank],
/// u64 payload bytes, payload. Arrays are written in name order.
class ArrayStore {
 public:
  static constexpr std::uint32_t kVersion = 1;
  static constexpr const char* kMetadataName = "__meta__";

  void put(const std::string& name, NamedArray array);
  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }
  /// Throws FormatError naming the missing entry.
  const NamedArray& get(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return arrays_.size(); }

  void set_metadata(const nlohmann::json& meta);
  nlohmann::json metadata() const;

  void save(const std::filesystem::path& path) const;
  static ArrayStore load(const std::filesystem::path& path);

 private:
  std::map<std::string, NamedArray> arrays_;
};

}  // namespace degmon
