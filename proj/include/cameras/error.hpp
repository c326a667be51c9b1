#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cameras {

/// Failure categories surfaced by the toolkit. Every thrown error carries one.
enum class Errc {
  invalid_argument,
  unsupported_input,
  layer_not_found,
  capture_failed,
  degenerate_schedule,
  undefined_density,
  not_comparable,
  attack_diverged,
  sanity_inconclusive,
  unreadable_image,
  io_error,
  bad_config,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::unsupported_input: return "unsupported-input";
    case Errc::layer_not_found: return "layer-not-found";
    case Errc::capture_failed: return "capture-failed";
    case Errc::degenerate_schedule: return "degenerate-schedule";
    case Errc::undefined_density: return "undefined-density";
    case Errc::not_comparable: return "not-comparable";
    case Errc::attack_diverged: return "attack-diverged";
    case Errc::sanity_inconclusive: return "sanity-inconclusive";
    case Errc::unreadable_image: return "unreadable-image";
    case Errc::io_error: return "io-error";
    case Errc::bad_config: return "bad-config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace cameras
