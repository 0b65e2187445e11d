#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace trunclab {

using Digest256 = std::array<std::uint8_t, 32>;

Digest256 sha256(const void* data, std::size_t n);
Digest256 sha256(std::string_view s);
std::string digest_hex(const Digest256& d);

}  // namespace trunclab
