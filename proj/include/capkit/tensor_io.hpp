#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capkit {

/// Dense row-major array with an explicit shape.
template <typename T>
struct Array {
  std::vector<std::int64_t> shape;
  std::vector<T> data;

  Array() = default;
  Array(std::vector<std::int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {}
  explicit Array(std::vector<std::int64_t> s) : shape(std::move(s)), data(numel(shape), T{}) {}

  static std::size_t numel(std::span<const std::int64_t> s) {
    std::size_t n = 1;
    for (auto d : s) n *= static_cast<std::size_t>(d);
    return n;
  }
  std::size_t size() const { return data.size(); }
  std::int64_t dim(std::size_t i) const { return shape.at(i); }
};

using ArrayF = Array<float>;
using ArrayD = Array<double>;

enum class DType { kF32, kF64 };

// Portable tensor format: a JSON sidecar
//   {"shape": [...], "dtype": "f32"|"f64", "order": "row-major",
//    "byte_order": "little-endian"}
// next to a raw payload. On disk the pair is <base>.json + <base>.bin.

std::string tensor_sidecar(std::span<const std::int64_t> shape, DType dtype);
std::string tensor_payload(std::span<const double> values, DType dtype);

/// Parses sidecar + payload; rejects unknown dtype/order/byte order and
/// payloads whose length does not match the shape.
ArrayD decode_tensor(std::string_view sidecar, std::string_view payload);

void write_tensor(const std::string& base_path, const ArrayD& a, DType dtype = DType::kF32);
void write_tensor(const std::string& base_path, const ArrayF& a);
ArrayD read_tensor(const std::string& base_path);
ArrayF read_tensor_f32(const std::string& base_path);

// Minimal ustar archive used as the single-file container for models.

class TarWriter {
 public:
  void add(const std::string& name, std::string_view bytes);
  /// Writes the archive; entries keep insertion order and carry a zero mtime
  /// so identical contents give identical bytes.
  void save(const std::string& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::map<std::string, std::string> read_tar(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace capkit
