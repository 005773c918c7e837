#pragma once

#include <string>
#include <string_view>

namespace capkit {

/// Porter (1980) suffix-stripping stemmer for lowercase English words.
/// Words of length <= 2 are returned unchanged.
std::string porter_stem(std::string_view word);

}  // namespace capkit
