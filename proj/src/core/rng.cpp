/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#include "core/rng.hpp"

#include <cmath>

namespace medden {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

}  // namespace

std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

CounterRng::CounterRng(std::uint64_t seed) : key_(mix64(seed + kGolden)) {}

CounterRng CounterRng::split(std::string_view label) const {
  return split(hash_label(label));
}

CounterRng CounterRng::split(std::uint64_t salt) const {
  CounterRng child(0);
  child.key_ = mix64(key_ ^ mix64(salt + kGolden));
  child.counter_ = 0;
  return child;
}

std::uint64_t CounterRng::next_u64() {
  return mix64(key_ + (++counter_) * kGolden);
}

double CounterRng::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::next_normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - next_unit();  // (0, 1]
  const double u2 = next_unit();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

double CounterRng::next_uniform(double lo, double hi) {
  return lo + (hi - lo) * next_unit();
}

std::uint64_t CounterRng::next_below(std::uint64_t n) {
  return next_u64() % n;
}

}  // namespace medden
