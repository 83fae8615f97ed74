#pragma once

#include <stdexcept>
#include <string>

namespace acc {

/// Malformed arguments to a library call (bad sizes, empty inputs, out-of-range knobs).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Invalid run configuration or network shape.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values surfaced during training. Training stops instead of clamping.
struct TrainingAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An environment produced a non-finite state.
struct EnvironmentFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// API misuse, e.g. flushing an episode that has not finished.
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace acc
