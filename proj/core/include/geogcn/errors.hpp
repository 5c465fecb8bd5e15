#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace geogcn {

// Bad arguments or violated preconditions. CLI exit code 2.
class invalid_argument_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input data that cannot be processed (IO, parsing, validation). CLI exit code 3.
class data_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class io_error : public data_error {
 public:
  using data_error::data_error;
};

class parse_error : public data_error {
 public:
  parse_error(const std::string& path, std::size_t line, const std::string& what)
      : data_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class validation_error : public data_error {
 public:
  using data_error::data_error;
};

class invalid_manifest_error : public data_error {
 public:
  using data_error::data_error;
};

// Geometry too degenerate for the requested computation (coincident points, zero-area triangles).
class degenerate_input_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class sampling_exhausted_error : public std::runtime_error {
 public:
  sampling_exhausted_error(const std::string& what, double acceptance_rate)
      : std::runtime_error(what), acceptance_rate_(acceptance_rate) {}

  double acceptance_rate() const { return acceptance_rate_; }

 private:
  double acceptance_rate_;
};

class coverage_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses or gradients. CLI exit code 4.
class training_divergence_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace geogcn
