#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace soh {

enum class Errc {
  parse,
  missing_label,
  config,
  split,
  input,
  numerical,
  degenerate_data,
  knee_not_found,
  model_input,
  training,
  load,
  match_exhausted,
  io,
};

/// Short machine-parsable tag, e.g. "parse" or "knee-not-found".
std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace soh
