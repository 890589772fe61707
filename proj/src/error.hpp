// Copyright 2026  molex authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef MOLEX_ERROR_HPP_
#define MOLEX_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace molex {

// Error taxonomy shared by the C++ core, the C API (status codes) and the
// CLI (machine-parseable categories).
enum class ErrorCategory {
  kShape,     // tensor dimension mismatch
  kConfig,    // inconsistent configuration (e.g. K > N)
  kContract,  // precondition violated by the caller
  kNumeric,   // NaN loss, non-convergence
  kIo,        // missing or unreadable file
  kFormat,    // corrupt file contents
  kVersion,   // unsupported format version
};

const char* error_category_name(ErrorCategory c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& msg)
      : std::runtime_error(msg), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error(ErrorCategory::kShape, m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorCategory::kConfig, m) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error(ErrorCategory::kContract, m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrorCategory::kNumeric, m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error(ErrorCategory::kIo, m) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error(ErrorCategory::kFormat, m) {}
};
struct VersionError : Error {
  explicit VersionError(const std::string& m) : Error(ErrorCategory::kVersion, m) {}
};

}  // namespace molex

#endif  // MOLEX_ERROR_HPP_
