#include "capkit/checkpoint.hpp"

#include "capkit/error.hpp"

namespace capkit {

void add_params(TarWriter& tar, const ag::ParameterStore& params, const std::string& prefix) {
  for (const auto& [name, v] : params.entries()) {
    const std::vector<std::int64_t> shape(v.shape().begin(), v.shape().end());
    tar.add(prefix + name + ".json", tensor_sidecar(shape, DType::kF64));
    tar.add(prefix + name + ".bin", tensor_payload(v.value(), DType::kF64));
  }
}

void load_params(const std::map<std::string, std::string>& entries, ag::ParameterStore& params,
                 const std::string& prefix) {
  std::size_t found = 0;
  for (auto& [name, v] : params.entries()) {
    auto js = entries.find(prefix + name + ".json");
    auto bin = entries.find(prefix + name + ".bin");
    CAPKIT_CHECK(js != entries.end() && bin != entries.end(), "checkpoint_mismatch",
                 "checkpoint lacks parameter " + name);
    ArrayD a = decode_tensor(js->second, bin->second);
    const std::vector<std::int64_t> want(v.shape().begin(), v.shape().end());
    CAPKIT_CHECK(a.shape == want, "checkpoint_mismatch",
                 "parameter " + name + " has shape " + ag::shape_str(v.shape()) + " in the model config");
    v.mutable_value() = std::move(a.data);
    ++found;
  }
  std::size_t stored = 0;
  for (const auto& [key, bytes] : entries) {
    if (key.rfind(prefix, 0) == 0 && key.size() > 5 && key.substr(key.size() - 5) == ".json") ++stored;
  }
  CAPKIT_CHECK(stored == found, "checkpoint_mismatch",
               "checkpoint holds " + std::to_string(stored) + " parameters, model has " + std::to_string(found));
}

}  // namespace capkit
