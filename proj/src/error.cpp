#include "soh/error.hpp"

namespace soh {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::parse: return "parse";
    case Errc::missing_label: return "missing-label";
    case Errc::config: return "config";
    case Errc::split: return "split";
    case Errc::input: return "input";
    case Errc::numerical: return "numerical";
    case Errc::degenerate_data: return "degenerate-data";
    case Errc::knee_not_found: return "knee-not-found";
    case Errc::model_input: return "model-input";
    case Errc::training: return "training";
    case Errc::load: return "load";
    case Errc::match_exhausted: return "match-exhausted";
    case Errc::io: return "io";
  }
  return "unknown";
}

}  // namespace soh
