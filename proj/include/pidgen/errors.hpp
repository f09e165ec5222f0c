#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pidgen {

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StripError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyDataset : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TokenizeError : public std::runtime_error {
 public:
  TokenizeError(std::size_t offset, const std::string& what)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ParseFailure {
  kUnknownToken,
  kUnbalancedBracket,
  kDanglingRecycle,
  kDanglingSignal,
  kMisplacedToken,
  kInvalidGraph,
};

const char* to_string(ParseFailure f);

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseFailure kind, std::size_t offset, const std::string& reason)
      : std::runtime_error(reason + " at offset " + std::to_string(offset)),
        kind_(kind),
        offset_(offset) {}
  ParseFailure kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  ParseFailure kind_;
  std::size_t offset_;
};

class SerializeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SplitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LengthMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pidgen
