/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#pragma once

#include <cstdint>

namespace medden {

// Software IEEE 754 binary16. Conversion from binary32 rounds to nearest,
// ties to even; magnitudes above 65504 become inf; subnormals are kept down
// to 2^-24 and underflow to signed zero below that. Conversion back to
// binary32 is exact.
std::uint16_t f32_to_f16_bits(float value);
float f16_bits_to_f32(std::uint16_t bits);

// Round a binary32 value through binary16 and back.
inline float round_f16(float value) { return f16_bits_to_f32(f32_to_f16_bits(value)); }

}  // namespace medden
