#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "cocktail/errors.hpp"

namespace cocktail {

enum class Dtype { F32, F16, BF16 };

inline std::size_t dtype_size(Dtype dt) {
  return dt == Dtype::F32 ? 4 : 2;
}

inline const char* dtype_name(Dtype dt) {
  switch (dt) {
    case Dtype::F32: return "F32";
    case Dtype::F16: return "F16";
    case Dtype::BF16: return "BF16";
  }
  return "?";
}

inline Dtype parse_dtype(const std::string& s) {
  if (s == "F32") return Dtype::F32;
  if (s == "F16") return Dtype::F16;
  if (s == "BF16") return Dtype::BF16;
  throw validation_error("unsupported dtype \"" + s + "\" (supported: F32, F16, BF16)");
}

// IEEE 754 binary16 -> binary32, exact.
inline float f16_to_f32(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1Fu;
  std::uint32_t mant = h & 0x3FFu;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      // subnormal: renormalize
      int shift = 0;
      while (!(mant & 0x400u)) {
        mant <<= 1;
        ++shift;
      }
      mant &= 0x3FFu;
      bits = sign | ((127u - 14u - shift) << 23) | (mant << 13);
    }
  } else if (exp == 0x1Fu) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else {
    bits = sign | ((exp - 15u + 127u) << 23) | (mant << 13);
  }
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

// binary32 -> binary16 with round-to-nearest-even.
inline std::uint16_t f32_to_f16(float value) {
  std::uint32_t bits;
  std::memcpy(&bits, &value, sizeof bits);
  const std::uint32_t sign = (bits >> 16) & 0x8000u;
  const std::uint32_t exp = (bits >> 23) & 0xFFu;
  std::uint32_t mant = bits & 0x7FFFFFu;
  if (exp == 0xFFu) {  // inf / nan
    return static_cast<std::uint16_t>(sign | 0x7C00u | (mant ? 0x200u : 0u));
  }
  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 0x1F) {  // overflow -> inf
    return static_cast<std::uint16_t>(sign | 0x7C00u);
  }
  if (e <= 0) {
    if (e < -10) {  // underflows to zero
      return static_cast<std::uint16_t>(sign);
    }
    // subnormal result
    mant |= 0x800000u;
    const std::uint32_t shift = static_cast<std::uint32_t>(14 - e);
    std::uint32_t half = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1u);
    if (rem > halfway || (rem == halfway && (half & 1u))) ++half;
    return static_cast<std::uint16_t>(sign | half);
  }
  std::uint32_t half = (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1FFFu;
  // carry from rounding propagates into the exponent, which is the correct
  // round-to-nearest-even result (including rounding up to inf)
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;
  return static_cast<std::uint16_t>(sign | half);
}

inline float bf16_to_f32(std::uint16_t b) {
  const std::uint32_t bits = static_cast<std::uint32_t>(b) << 16;
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

// binary32 -> bfloat16 with round-to-nearest-even.
inline std::uint16_t f32_to_bf16(float value) {
  std::uint32_t bits;
  std::memcpy(&bits, &value, sizeof bits);
  if (std::isnan(value)) {
    return static_cast<std::uint16_t>((bits >> 16) | 0x0040u);  // keep it quiet
  }
  bits += 0x7FFFu + ((bits >> 16) & 1u);
  return static_cast<std::uint16_t>(bits >> 16);
}

// Raw little-endian tensor bytes -> doubles.
inline std::vector<double> decode_values(Dtype dt, std::span<const std::uint8_t> bytes) {
  const std::size_t esz = dtype_size(dt);
  if (bytes.size() % esz != 0) {
    throw validation_error("tensor byte length is not a multiple of the element size");
  }
  const std::size_t n = bytes.size() / esz;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (dt) {
      case Dtype::F32: {
        float f;
        std::memcpy(&f, bytes.data() + i * 4, 4);
        out[i] = static_cast<double>(f);
        break;
      }
      case Dtype::F16: {
        std::uint16_t u;
        std::memcpy(&u, bytes.data() + i * 2, 2);
        out[i] = static_cast<double>(f16_to_f32(u));
        break;
      }
      case Dtype::BF16: {
        std::uint16_t u;
        std::memcpy(&u, bytes.data() + i * 2, 2);
        out[i] = static_cast<double>(bf16_to_f32(u));
        break;
      }
    }
  }
  return out;
}

// Doubles -> raw little-endian tensor bytes in the given dtype.
inline std::vector<std::uint8_t> encode_values(Dtype dt, std::span<const double> values);

inline std::vector<std::uint8_t> encode_values(Dtype dt, std::initializer_list<double> values) {
  return encode_values(dt, std::span<const double>(values.begin(), values.size()));
}

inline std::vector<std::uint8_t> encode_values(Dtype dt, std::span<const double> values) {
  const std::size_t esz = dtype_size(dt);
  std::vector<std::uint8_t> out(values.size() * esz);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    switch (dt) {
      case Dtype::F32:
        std::memcpy(out.data() + i * 4, &f, 4);
        break;
      case Dtype::F16: {
        const std::uint16_t u = f32_to_f16(f);
        std::memcpy(out.data() + i * 2, &u, 2);
        break;
      }
      case Dtype::BF16: {
        const std::uint16_t u = f32_to_bf16(f);
        std::memcpy(out.data() + i * 2, &u, 2);
        break;
      }
    }
  }
  return out;
}

}  // namespace cocktail
