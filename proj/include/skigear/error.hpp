#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace skigear {

/// Base class of every error raised by the toolkit.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit the operation.
class dimension_error : public error {
 public:
  using error::error;
};

/// Precondition of an operation violated by the caller.
class contract_error : public error {
 public:
  using error::error;
};

/// Structurally malformed input (wrong column count, bad header, ...).
class format_error : public error {
 public:
  using error::error;
};

/// A cell that could not be converted to a number.
class parse_error : public format_error {
 public:
  using format_error::format_error;
};

class io_error : public error {
 public:
  using error::error;
};

/// Serialized model with an unsupported format version.
class version_error : public error {
 public:
  using error::error;
};

/// Data-level problem (unknown gear, unknown skier, too few strokes, ...).
class data_error : public error {
 public:
  using error::error;
};

// Warnings go through a replaceable per-thread sink so tests can capture them.
using warning_sink = std::function<void(std::string_view)>;

namespace detail {
inline warning_sink& current_warning_sink() {
  thread_local warning_sink sink = [](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}
}  // namespace detail

inline void warn(std::string_view message) { detail::current_warning_sink()(message); }

/// Redirects warnings for the lifetime of the object.
class scoped_warning_sink {
 public:
  explicit scoped_warning_sink(warning_sink sink) : previous_(std::exchange(detail::current_warning_sink(), std::move(sink))) {}
  ~scoped_warning_sink() { detail::current_warning_sink() = std::move(previous_); }
  scoped_warning_sink(const scoped_warning_sink&) = delete;
  scoped_warning_sink& operator=(const scoped_warning_sink&) = delete;

 private:
  warning_sink previous_;
};

}  // namespace skigear
