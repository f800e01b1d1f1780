#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qiu {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration values (thresholds, dimensions, modes).
class ConfigError : public Error {
public:
  using Error::Error;
};

// Index / store / cache disagree about which build they belong to.
class IntegrityError : public Error {
public:
  using Error::Error;
};

// A load that collected one or more diagnostics before failing.
class LoadError : public Error {
public:
  explicit LoadError(std::vector<std::string> diagnostics)
      : Error(join(diagnostics)), diagnostics_(std::move(diagnostics)) {}

  const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }

private:
  static std::string join(const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& l : lines) {
      if (!out.empty()) out += "; ";
      out += l;
    }
    return out;
  }

  std::vector<std::string> diagnostics_;
};

// Per-query failure of the reasoning step. error_class is a short stable
// token that batch reports aggregate on.
class ClassificationError : public Error {
public:
  ClassificationError(std::string error_class, const std::string& what)
      : Error(what), error_class_(std::move(error_class)) {}

  const std::string& error_class() const noexcept { return error_class_; }

private:
  std::string error_class_;
};

class ToolError : public Error {
public:
  using Error::Error;
};

class CacheIoError : public Error {
public:
  using Error::Error;
};

// Raised by live clients when remote network access is disabled.
class NetworkForbidden : public Error {
public:
  using Error::Error;
};

}  // namespace qiu
