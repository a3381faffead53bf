// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace goquant {

/// Failure categories. Each maps onto a stable process exit code for the CLI.
enum class Errc {
  usage,         ///< bad arguments or configuration
  data,          ///< malformed input data (NaN, shape mismatch, missing tensor)
  bad_magic,     ///< file does not start with the expected magic
  bad_version,   ///< unsupported file version
  eof,           ///< truncated file
  corrupt,       ///< structurally invalid record
  numeric,       ///< non-finite values, singular systems
  overflow,      ///< integer accumulator would overflow
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// 0 success, 1 usage, 2 data/format, 3 numeric/overflow.
inline int exit_code(Errc e) noexcept {
  switch (e) {
    case Errc::usage:
      return 1;
    case Errc::data:
    case Errc::bad_magic:
    case Errc::bad_version:
    case Errc::eof:
    case Errc::corrupt:
      return 2;
    case Errc::numeric:
    case Errc::overflow:
      return 3;
  }
  return 2;
}

inline const char* errc_name(Errc e) noexcept {
  switch (e) {
    case Errc::usage: return "usage error";
    case Errc::data: return "data error";
    case Errc::bad_magic: return "bad magic";
    case Errc::bad_version: return "unsupported version";
    case Errc::eof: return "unexpected EOF";
    case Errc::corrupt: return "corrupt record";
    case Errc::numeric: return "numeric error";
    case Errc::overflow: return "accumulator overflow";
  }
  return "error";
}

}  // namespace goquant
