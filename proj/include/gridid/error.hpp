#pragma once

#include <stdexcept>
#include <string>

namespace gridid {

// Malformed or inconsistent user input (files, dimensions, indices).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical procedure could not produce a valid answer.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gridid
