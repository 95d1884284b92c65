#pragma once

#include <string_view>

#include <json.hpp>

namespace concept_lens::log {

// Emits one JSON object per line on standard error:
// {"level": ..., "event": ..., <fields>}.
void emit(std::string_view level, std::string_view event, const nlohmann::json& fields = nlohmann::json::object());

inline void info(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
  emit("info", event, fields);
}
inline void warn(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
  emit("warn", event, fields);
}

// Silences info-level output (tests and the acceptance runner use this).
void set_quiet(bool quiet);

}  // namespace concept_lens::log
