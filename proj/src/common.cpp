#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>

#include "concept_lens/log.hpp"
#include "concept_lens/parallel.hpp"

namespace concept_lens {

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CONCEPT_LENS_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace log {

namespace {
std::atomic<bool> g_quiet{false};
std::mutex g_mutex;
}  // namespace

void set_quiet(bool quiet) { g_quiet = quiet; }

void emit(std::string_view level, std::string_view event, const nlohmann::json& fields) {
  if (g_quiet && level == "info") return;
  nlohmann::json line = {{"level", level}, {"event", event}};
  if (fields.is_object()) {
    for (auto it = fields.begin(); it != fields.end(); ++it) line[it.key()] = it.value();
  }
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << line.dump() << '\n';
}

}  // namespace log
}  // namespace concept_lens
