#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace segxfer {

/// Contract violation or runtime failure raised by any module.
///
/// what() renders as `ERR <module>:<code> <detail>`, the single-line prefix
/// the CLI forwards to stderr.
class Error : public std::runtime_error {
 public:
  Error(std::string module, std::string code, const std::string& detail)
      : std::runtime_error("ERR " + module + ":" + code + " " + detail),
        module_(std::move(module)),
        code_(std::move(code)) {}

  const std::string& module() const noexcept { return module_; }
  const std::string& code() const noexcept { return code_; }

 private:
  std::string module_;
  std::string code_;
};

[[noreturn]] inline void fail(const std::string& module, const std::string& code,
                              const std::string& detail) {
  throw Error(module, code, detail);
}

}  // namespace segxfer
