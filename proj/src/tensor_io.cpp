#include "capkit/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "capkit/error.hpp"

namespace capkit {

static_assert(std::endian::native == std::endian::little,
              "tensor payloads are written in host byte order and must be little-endian");

using nlohmann::json;

std::string tensor_sidecar(std::span<const std::int64_t> shape, DType dtype) {
  json j = {{"shape", std::vector<std::int64_t>(shape.begin(), shape.end())},
            {"dtype", dtype == DType::kF32 ? "f32" : "f64"},
            {"order", "row-major"},
            {"byte_order", "little-endian"}};
  return j.dump();
}

std::string tensor_payload(std::span<const double> values, DType dtype) {
  std::string out;
  if (dtype == DType::kF64) {
    out.resize(values.size() * sizeof(double));
    std::memcpy(out.data(), values.data(), out.size());
  } else {
    out.resize(values.size() * sizeof(float));
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto f = static_cast<float>(values[i]);
      std::memcpy(out.data() + i * sizeof(float), &f, sizeof(float));
    }
  }
  return out;
}

ArrayD decode_tensor(std::string_view sidecar, std::string_view payload) {
  json j;
  try {
    j = json::parse(sidecar);
  } catch (const json::exception& e) {
    throw Error("bad_tensor", std::string("tensor sidecar is not JSON: ") + e.what());
  }
  const auto dtype = j.value("dtype", "");
  CAPKIT_CHECK(dtype == "f32" || dtype == "f64", "bad_tensor", "unsupported dtype '" + dtype + "'");
  CAPKIT_CHECK(j.value("order", "row-major") == "row-major", "bad_tensor", "only row-major supported");
  CAPKIT_CHECK(j.value("byte_order", "little-endian") == "little-endian", "bad_tensor",
               "only little-endian supported");
  ArrayD a;
  a.shape = j.at("shape").get<std::vector<std::int64_t>>();
  for (auto d : a.shape) CAPKIT_CHECK(d >= 0, "bad_tensor", "negative dimension");
  const std::size_t n = ArrayD::numel(a.shape);
  const std::size_t width = dtype == "f32" ? sizeof(float) : sizeof(double);
  CAPKIT_CHECK(payload.size() == n * width, "bad_tensor",
               "payload has " + std::to_string(payload.size()) + " bytes, shape needs " +
                   std::to_string(n * width));
  a.data.resize(n);
  if (width == sizeof(double)) {
    std::memcpy(a.data.data(), payload.data(), payload.size());
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, payload.data() + i * sizeof(float), sizeof(float));
      a.data[i] = f;
    }
  }
  return a;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  CAPKIT_CHECK(in.good(), "io", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  CAPKIT_CHECK(out.good(), "io", "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  CAPKIT_CHECK(out.good(), "io", "write failed for " + path);
}

void write_tensor(const std::string& base_path, const ArrayD& a, DType dtype) {
  write_file(base_path + ".json", tensor_sidecar(a.shape, dtype));
  write_file(base_path + ".bin", tensor_payload(a.data, dtype));
}

void write_tensor(const std::string& base_path, const ArrayF& a) {
  write_file(base_path + ".json", tensor_sidecar(a.shape, DType::kF32));
  std::string payload(a.data.size() * sizeof(float), '\0');
  std::memcpy(payload.data(), a.data.data(), payload.size());
  write_file(base_path + ".bin", payload);
}

ArrayD read_tensor(const std::string& base_path) {
  return decode_tensor(read_file(base_path + ".json"), read_file(base_path + ".bin"));
}

ArrayF read_tensor_f32(const std::string& base_path) {
  ArrayD d = read_tensor(base_path);
  ArrayF f;
  f.shape = d.shape;
  f.data.assign(d.data.begin(), d.data.end());
  return f;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kBlock = 512;

void put_octal(char* field, std::size_t width, std::uint64_t value) {
  // width includes the trailing NUL.
  std::string s(width - 1, '0');
  for (std::size_t i = width - 1; i-- > 0 && value > 0; value >>= 3) s[i] = static_cast<char>('0' + (value & 7));
  std::memcpy(field, s.data(), width - 1);
  field[width - 1] = '\0';
}

std::uint64_t get_octal(const char* field, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width && field[i] >= '0' && field[i] <= '7'; ++i) {
    v = (v << 3) | static_cast<std::uint64_t>(field[i] - '0');
  }
  return v;
}

}  // namespace

void TarWriter::add(const std::string& name, std::string_view bytes) {
  CAPKIT_CHECK(!name.empty() && name.size() < 100, "bad_archive", "archive entry name too long: " + name);
  entries_.emplace_back(name, std::string(bytes));
}

void TarWriter::save(const std::string& path) const {
  std::string out;
  for (const auto& [name, bytes] : entries_) {
    char header[kBlock] = {};
    std::memcpy(header, name.data(), name.size());
    put_octal(header + 100, 8, 0644);
    put_octal(header + 108, 8, 0);
    put_octal(header + 116, 8, 0);
    put_octal(header + 124, 12, bytes.size());
    put_octal(header + 136, 12, 0);
    header[156] = '0';
    std::memcpy(header + 257, "ustar", 6);
    header[263] = '0';
    header[264] = '0';
    std::memset(header + 148, ' ', 8);
    unsigned sum = 0;
    for (unsigned char c : header) sum += c;
    put_octal(header + 148, 7, sum);
    header[155] = ' ';
    out.append(header, kBlock);
    out += bytes;
    out.append((kBlock - bytes.size() % kBlock) % kBlock, '\0');
  }
  out.append(2 * kBlock, '\0');
  write_file(path, out);
}

std::map<std::string, std::string> read_tar(const std::string& path) {
  const std::string raw = read_file(path);
  std::map<std::string, std::string> entries;
  std::size_t pos = 0;
  while (pos + kBlock <= raw.size()) {
    const char* h = raw.data() + pos;
    if (h[0] == '\0') break;
    unsigned sum = 0;
    for (std::size_t i = 0; i < kBlock; ++i) {
      sum += (i >= 148 && i < 156) ? ' ' : static_cast<unsigned char>(h[i]);
    }
    CAPKIT_CHECK(sum == get_octal(h + 148, 8), "bad_archive", "corrupt archive header in " + path);
    const std::string name(h, strnlen(h, 100));
    const auto size = static_cast<std::size_t>(get_octal(h + 124, 12));
    pos += kBlock;
    CAPKIT_CHECK(pos + size <= raw.size(), "bad_archive", "truncated archive " + path);
    entries.emplace(name, raw.substr(pos, size));
    pos += (size + kBlock - 1) / kBlock * kBlock;
  }
  return entries;
}

}  // namespace capkit
