#pragma once

#include <stdexcept>
#include <string>

namespace maskpose {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A requested pixel has no usable depth.
class InvalidPixel : public Error {
 public:
  using Error::Error;
};

/// Mask has no foreground pixel.
class ObjectNotFound : public Error {
 public:
  using Error::Error;
};

/// Mask has foreground pixels but none of them carries depth.
class NoValidDepth : public Error {
 public:
  using Error::Error;
};

/// Malformed file or directory on disk.
class ParseError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

/// A stage was started before the stage it depends on.
class MissingPrerequisite : public Error {
 public:
  using Error::Error;
};

}  // namespace maskpose
