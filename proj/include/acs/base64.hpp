#pragma once

#include "acs/error.hpp"

#include <boost/beast/core/detail/base64.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace acs {

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  namespace b64 = boost::beast::detail::base64;
  std::vector<std::uint8_t> out(b64::decoded_size(text.size()));
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  const std::size_t pad = text.size() - read;
  const bool padded = pad <= 2 && text.size() % 4 == 0 && text.find_first_not_of('=', read) == std::string_view::npos;
  if (pad != 0 && !padded) throw FormatError("invalid base64 payload", read);
  out.resize(written);
  return out;
}

}  // namespace acs
