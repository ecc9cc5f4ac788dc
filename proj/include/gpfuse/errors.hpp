#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gpfuse {

/// Input matrices/vectors do not have compatible shapes.
class ShapeError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A matrix could not be factored even after exhausting the jitter ladder.
class NotPositiveDefiniteError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An optimizer produced a non-finite objective. Carries the trace of
/// objective values up to the last finite state.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace(std::move(trace)) {}

  std::vector<double> trace;
};

class UnsupportedDimensionError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace gpfuse
