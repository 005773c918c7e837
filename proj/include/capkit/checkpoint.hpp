#pragma once

#include <map>
#include <string>

#include "capkit/autograd.hpp"
#include "capkit/tensor_io.hpp"

namespace capkit {

/// Adds every parameter as <prefix><name>.json / .bin (f64) entries.
void add_params(TarWriter& tar, const ag::ParameterStore& params, const std::string& prefix = "params/");

/// Overwrites the values of `params` from archive entries. Every parameter
/// must be present with an identical shape; extra entries are rejected.
void load_params(const std::map<std::string, std::string>& entries, ag::ParameterStore& params,
                 const std::string& prefix = "params/");

}  // namespace capkit
