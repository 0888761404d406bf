#pragma once

#include <stdexcept>
#include <string>

namespace misspec {

// Invalid arguments are reported with std::invalid_argument throughout; the
// types below cover the remaining failure modes.

struct InsufficientData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A routed protocol drew its full draw cap without keeping a context.
struct NoProgress : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Moment target outside the attainable range of a tilt family.
struct InfeasibleMoment : std::domain_error {
  using std::domain_error::domain_error;
};

// Flagger carries no information about hard-set membership (tau == phi).
struct NoCancellation : std::domain_error {
  using std::domain_error::domain_error;
};

struct InvalidInstance : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, int line, const std::string& key,
              const std::string& message)
      : std::runtime_error(source + ":" + std::to_string(line) +
                           (key.empty() ? "" : " [" + key + "]") + ": " +
                           message),
        line_(line),
        key_(key) {}

  int line() const noexcept { return line_; }
  const std::string& key() const noexcept { return key_; }

 private:
  int line_;
  std::string key_;
};

}  // namespace misspec
