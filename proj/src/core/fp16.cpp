/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#include "core/fp16.hpp"

#include <cstring>

namespace medden {

std::uint16_t f32_to_f16_bits(float value) {
  std::uint32_t f;
  std::memcpy(&f, &value, sizeof(f));

  const std::uint32_t sign = (f >> 16) & 0x8000u;
  const std::int32_t fexp = static_cast<std::int32_t>((f >> 23) & 0xFFu);
  std::uint32_t mant = f & 0x7FFFFFu;

  if (fexp == 0xFF) {  // inf or nan; keep nan quiet with a payload bit
    return static_cast<std::uint16_t>(sign | 0x7C00u | (mant ? 0x0200u : 0u));
  }

  const std::int32_t hexp = fexp - 127 + 15;
  if (hexp >= 0x1F) {  // |x| >= 2^16: past the largest representable tie point
    return static_cast<std::uint16_t>(sign | 0x7C00u);
  }

  if (hexp <= 0) {  // subnormal range (or underflow to zero)
    if (hexp < -10) {
      return static_cast<std::uint16_t>(sign);  // below half of 2^-24
    }
    mant |= 0x800000u;  // make the leading bit explicit
    const int shift = 14 - hexp;  // 14..24
    std::uint32_t a = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t half = 1u << (shift - 1);
    if (rem > half || (rem == half && (a & 1u))) {
      ++a;  // may carry into the exponent field, which encodes 2^-14 correctly
    }
    return static_cast<std::uint16_t>(sign | a);
  }

  // Normal range: drop 13 mantissa bits with round-to-nearest-even.
  std::uint32_t a = mant >> 13;
  const std::uint32_t rem = mant & 0x1FFFu;
  std::uint16_t h = static_cast<std::uint16_t>(sign | (static_cast<std::uint32_t>(hexp) << 10) | a);
  if (rem > 0x1000u || (rem == 0x1000u && (a & 1u))) {
    ++h;  // carries from 0x7BFF (65504) to 0x7C00 (inf) at the overflow tie
  }
  return h;
}

float f16_bits_to_f32(std::uint16_t bits) {
  const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
  const std::uint32_t exp = (bits >> 10) & 0x1Fu;
  const std::uint32_t mant = bits & 0x3FFu;

  std::uint32_t f;
  if (exp == 0) {
    if (mant == 0) {
      f = sign;  // signed zero
    } else {
      // Normalize the subnormal: value = mant * 2^-24.
      std::uint32_t m = mant;
      std::int32_t e = -1;
      while (!(m & 0x400u)) {
        m <<= 1;
        ++e;
      }
      m &= 0x3FFu;
      f = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | (m << 13);
    }
  } else if (exp == 0x1F) {
    f = sign | 0x7F800000u | (mant << 13);
  } else {
    f = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }

  float out;
  std::memcpy(&out, &f, sizeof(out));
  return out;
}

}  // namespace medden
