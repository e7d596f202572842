#pragma once

#include <stdexcept>
#include <string>

namespace ptq {

// Cholesky hit a non-positive pivot (input not SPD).
class DecompositionError : public std::runtime_error {
  public:
    DecompositionError(const std::string & msg, int pivot)
        : std::runtime_error(msg), pivot_(pivot) {}
    int pivot() const { return pivot_; }

  private:
    int pivot_;
};

// Block size does not divide the dimension it partitions.
class IndivisibleBlockError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

enum class FormatFault {
    bad_magic,
    bad_version,
    bad_length,
    bad_header,
    bad_manifest,
};

// Malformed or inconsistent serialized data.
class FormatError : public std::runtime_error {
  public:
    FormatError(FormatFault fault, const std::string & msg)
        : std::runtime_error(msg), fault_(fault) {}
    FormatFault fault() const { return fault_; }

  private:
    FormatFault fault_;
};

// Optimization produced NaN loss.
class TrainingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Numerical failure with a suggested remedy in the message.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace ptq
