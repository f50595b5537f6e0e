#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mpref/types.hpp"

namespace mpref::client {

/// Delay before retry attempt `attempt` (1-based): 100ms doubling per
/// attempt, capped at 5s.
std::chrono::milliseconds retry_delay(int attempt);

std::string sha256_hex(std::string_view data);

/// First well-formed <open>...</open> span of `reply`, nullopt when absent.
std::optional<std::string> extract_marked(std::string_view reply, std::string_view open_tag,
                                          std::string_view close_tag);

/// Blocking chat-completions client with bounded internal concurrency,
/// exponential-backoff retries and an on-disk response cache keyed by a
/// content hash of (system, user, model, temperature). Public operations on
/// one instance are serialized.
class ChatClient {
 public:
  explicit ChatClient(EndpointConfig cfg);
  ~ChatClient();

  ChatClient(const ChatClient&) = delete;
  ChatClient& operator=(const ChatClient&) = delete;

  /// Single call, full retry budget; throws Error after exhaustion and
  /// AuthError on authentication failure.
  std::string chat(const std::string& raw_system, const std::string& raw_user);

  /// One generation record per prompt, input order, kind=generation.
  /// Per-record failures surface as finish_reason=error; an authentication
  /// failure aborts the batch.
  std::vector<ResponseRecord> generate(std::span<const MultilingualPrompt> prompts);

  /// Translates each record's text into target_lang via the self-translation
  /// template; output text is the first <translated> span of the reply.
  std::vector<ResponseRecord> self_translate(std::span<const ResponseRecord> records,
                                             const LanguageCode& target_lang);

  const EndpointConfig& config() const { return cfg_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  EndpointConfig cfg_;
  std::mutex op_mutex_;
};

}  // namespace mpref::client
