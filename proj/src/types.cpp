#include "mpref/types.hpp"

#include <unordered_map>

namespace mpref {

void EndpointConfig::validate() const {
  if (base_url.empty()) throw Error("endpoint base_url must not be empty");
  if (model_id.empty()) throw Error("endpoint model_id must not be empty");
  if (temperature < 0.0) throw Error("temperature must be non-negative");
  if (max_tokens <= 0) throw Error("max_tokens must be positive");
  if (max_in_flight < 1) throw Error("max_in_flight must be >= 1");
  if (max_retries < 0) throw Error("max_retries must be non-negative");
  if (timeout_s <= 0.0) throw Error("timeout_s must be positive");
}

const char* to_string(ResponseKind kind) {
  return kind == ResponseKind::generation ? "generation" : "translation";
}

const char* to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "error";
}

ResponseKind response_kind_from_string(const std::string& s) {
  if (s == "generation") return ResponseKind::generation;
  if (s == "translation") return ResponseKind::translation;
  throw Error("unknown response kind: " + s);
}

FinishReason finish_reason_from_string(const std::string& s) {
  if (s == "stop") return FinishReason::stop;
  if (s == "length") return FinishReason::length;
  if (s == "error") return FinishReason::error;
  throw Error("unknown finish reason: " + s);
}

std::string language_name(const LanguageCode& code) {
  static const std::unordered_map<std::string, std::string> names = {
      {"en", "English"},  {"es", "Spanish"}, {"fr", "French"},
      {"de", "German"},   {"it", "Italian"}, {"ru", "Russian"},
      {"ja", "Japanese"}, {"zh", "Chinese"}, {"th", "Thai"},
      {"bn", "Bengali"},  {"sw", "Swahili"}, {"pt", "Portuguese"},
      {"ko", "Korean"},   {"nl", "Dutch"},   {"pl", "Polish"},
  };
  auto it = names.find(code);
  return it == names.end() ? code : it->second;
}

}  // namespace mpref
