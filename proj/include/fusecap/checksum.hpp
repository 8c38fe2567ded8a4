#pragma once

#include <array>
#include <span>
#include <string>

#include "fusecap/tensor.hpp"

namespace fusecap {

/// Raw 32-byte SHA-256 digest.
std::array<unsigned char, 32> sha256(std::span<const unsigned char> bytes);
std::string sha256_hex(std::span<const unsigned char> bytes);

/// SHA-256 over every parameter's name, shape, frozen flag and raw values.
std::string parameter_checksum(const ParameterStore& store);

}  // namespace fusecap
