/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#pragma once

#include <stdexcept>
#include <string>

namespace medden {

// Coarse classification used at the C boundary (and by the CLI exit code).
enum class ErrorKind {
  Usage,    // bad flags, bad configuration
  Data,     // unreadable / malformed files, manifest or checkpoint problems
  Runtime,  // contract violations, worker failures, everything else
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Shape or element-count mismatch between tensors.
struct SizeError : Error {
  explicit SizeError(const std::string& msg) : Error(ErrorKind::Runtime, msg) {}
};

// Input outside the operation's domain (empty tensor, n < 2, ...).
struct DomainError : Error {
  explicit DomainError(const std::string& msg) : Error(ErrorKind::Runtime, msg) {}
};

// A caller broke an API contract (non-scalar loss, non-finite grads, ...).
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error(ErrorKind::Runtime, msg) {}
};

// Unsupported or inconsistent configuration.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(ErrorKind::Usage, msg) {}
};

// Malformed file contents (image, manifest, checkpoint).
struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(ErrorKind::Data, msg) {}
};

// Replicas disagree where they must not (names, shapes, worker death).
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& msg) : Error(ErrorKind::Runtime, msg) {}
};

}  // namespace medden
