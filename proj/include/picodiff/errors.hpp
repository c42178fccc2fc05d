#pragma once

#include <stdexcept>
#include <string>

namespace picodiff {

// Error categories map 1:1 onto CLI exit codes (see tools/picodiff_cli.cpp).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension mismatches between tensors or factor tables.
class ShapeError : public Error {
public:
    using Error::Error;
};

// API misuse: backward without a tape, non-scalar loss, freeze mid-run, ...
class ContractError : public Error {
public:
    using Error::Error;
};

// Words outside the closed vocabulary.
class VocabError : public Error {
public:
    using Error::Error;
};

// Filesystem and serialization failures.
class IoError : public Error {
public:
    using Error::Error;
};

// Bad command line / config file values.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Checkpoint-specific failures, each loadable-file defect distinct.
class CheckpointError : public IoError {
public:
    enum class Kind { version_mismatch, hash_mismatch, truncated, malformed };
    CheckpointError(Kind kind, const std::string& msg) : IoError(msg), kind(kind) {}
    Kind kind;
};

// Metric undefined for the given inputs (e.g. zero-norm style vector).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

}  // namespace picodiff
