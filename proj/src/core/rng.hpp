/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#pragma once

#include <cstdint>
#include <string_view>

namespace medden {

// Counter-based generator built on the splitmix64 mixer. Output i depends only
// on (key, i), so streams are reproducible across builds and independent of
// draw interleaving. Child streams are derived by hashing a label into the key.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed);

  CounterRng split(std::string_view label) const;
  CounterRng split(std::uint64_t salt) const;

  std::uint64_t next_u64();

  // Uniform on [0, 1), 53 mantissa bits.
  double next_unit();

  // Standard normal via Box-Muller:
  //   z0 = sqrt(-2 ln u1) cos(2 pi u2),  z1 = sqrt(-2 ln u1) sin(2 pi u2)
  // with u1 in (0, 1]. Values are produced in pairs; the second is cached.
  double next_normal();

  // Uniform on [lo, hi).
  double next_uniform(double lo, double hi);

  // Uniform integer in [0, n), n > 0. Rejection-free modulo of a 64-bit draw
  // is fine for the desk-scale n this project uses.
  std::uint64_t next_below(std::uint64_t n);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable 64-bit label hash used for stream derivation (FNV-1a).
std::uint64_t hash_label(std::string_view label);

}  // namespace medden
