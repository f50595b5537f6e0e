#include "mpref/client.hpp"

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "mpref/jsonl.hpp"
#include "mpref/log.hpp"
#include "mpref/templates.hpp"

namespace mpref::client {

using nlohmann::json;

namespace {

constexpr std::chrono::milliseconds kBaseDelay{100};
constexpr std::chrono::milliseconds kMaxDelay{5000};

struct ParsedUrl {
  std::string origin;       // scheme://host[:port]
  std::string path_prefix;  // "" or "/v1"
};

ParsedUrl parse_base_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw Error("base_url missing scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  ParsedUrl out;
  if (path_start == std::string::npos) {
    out.origin = base_url;
  } else {
    out.origin = base_url.substr(0, path_start);
    out.path_prefix = base_url.substr(path_start);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  }
  return out;
}

std::string format_temperature(double t) {
  std::ostringstream out;
  out.precision(17);
  out << t;
  return out.str();
}

struct CallOutcome {
  std::string text;
  FinishReason reason = FinishReason::stop;
};

}  // namespace

std::chrono::milliseconds retry_delay(int attempt) {
  if (attempt <= 1) return kBaseDelay;
  const double factor = std::pow(2.0, attempt - 1);
  const auto delay = std::chrono::milliseconds(
      static_cast<long>(static_cast<double>(kBaseDelay.count()) * factor));
  return std::min(delay, kMaxDelay);
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0x0F]);
  }
  return out;
}

std::optional<std::string> extract_marked(std::string_view reply, std::string_view open_tag,
                                          std::string_view close_tag) {
  std::size_t search_from = 0;
  while (true) {
    const auto open = reply.find(open_tag, search_from);
    if (open == std::string_view::npos) return std::nullopt;
    const auto start = open + open_tag.size();
    const auto close = reply.find(close_tag, start);
    if (close == std::string_view::npos) {
      search_from = start;
      continue;
    }
    return std::string(reply.substr(start, close - start));
  }
}

struct ChatClient::Impl {
  ParsedUrl url;
  std::string api_key;

  explicit Impl(const EndpointConfig& cfg) : url(parse_base_url(cfg.base_url)) {
    if (!cfg.api_key_env.empty()) {
      if (const char* value = std::getenv(cfg.api_key_env.c_str())) api_key = value;
    }
  }

  std::string cache_path(const EndpointConfig& cfg, const std::string& system,
                         const std::string& user) const {
    const std::string key = cfg.model_id + '\x1f' + format_temperature(cfg.temperature) +
                            '\x1f' + system + '\x1f' + user;
    return (std::filesystem::path(cfg.cache_dir) / sha256_hex(key)).string();
  }

  std::optional<std::string> cache_read(const std::string& path) const {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
  }

  void cache_write(const std::string& path, const std::string& text) const {
    // write-then-rename so concurrent readers of the same key never see a
    // partial entry
    std::error_code ec;
    std::filesystem::create_directories(std::filesystem::path(path).parent_path(), ec);
    std::ostringstream suffix;
    suffix << ".tmp." << std::this_thread::get_id();
    const std::string tmp = path + suffix.str();
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << text;
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) std::filesystem::remove(tmp, ec);
  }

  // One HTTP round trip; no retries here.
  CallOutcome call_once(const EndpointConfig& cfg, const std::string& system,
                        const std::string& user) const {
    httplib::Client http(url.origin);
    const auto timeout = std::chrono::duration<double>(cfg.timeout_s);
    http.set_connection_timeout(timeout);
    http.set_read_timeout(timeout);
    http.set_write_timeout(timeout);

    json body;
    body["model"] = cfg.model_id;
    json messages = json::array();
    if (!system.empty()) messages.push_back({{"role", "system"}, {"content", system}});
    messages.push_back({{"role", "user"}, {"content", user}});
    body["messages"] = std::move(messages);
    body["temperature"] = cfg.temperature;
    body["max_tokens"] = cfg.max_tokens;

    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

    const auto res = http.Post(url.path_prefix + "/chat/completions", headers, body.dump(),
                               "application/json");
    if (!res) throw Error("endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status == 401 || res->status == 403) {
      throw AuthError("authentication failed (HTTP " + std::to_string(res->status) + ")");
    }
    if (res->status >= 400) {
      throw Error("endpoint returned HTTP " + std::to_string(res->status));
    }

    json reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.contains("choices") || reply["choices"].empty()) {
      throw Error("malformed completion response");
    }
    const auto& choice = reply["choices"][0];
    CallOutcome out;
    out.text = choice.at("message").at("content").get<std::string>();
    out.reason = choice.value("finish_reason", "stop") == "length" ? FinishReason::length
                                                                   : FinishReason::stop;
    return out;
  }

  // Full retry budget (max_retries + 1 attempts, exponential backoff) with
  // optional extraction: a reply the extractor rejects burns an attempt and
  // skips the cache on the next one. AuthError propagates immediately.
  CallOutcome complete(const EndpointConfig& cfg, const std::string& system,
                       const std::string& user,
                       const std::function<std::optional<std::string>(const std::string&)>&
                           extract = nullptr) const {
    const std::string cpath = cfg.cache_enabled ? cache_path(cfg, system, user) : "";
    bool use_cache = cfg.cache_enabled;
    std::string last_error = "exhausted retries";

    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(retry_delay(attempt));
      try {
        CallOutcome outcome;
        bool from_cache = false;
        if (use_cache) {
          if (auto cached = cache_read(cpath)) {
            outcome = {*cached, FinishReason::stop};
            from_cache = true;
          }
        }
        if (!from_cache) {
          outcome = call_once(cfg, system, user);
          if (cfg.cache_enabled) cache_write(cpath, outcome.text);
        }
        if (extract) {
          if (auto extracted = extract(outcome.text)) {
            outcome.text = std::move(*extracted);
          } else {
            last_error = "reply failed extraction";
            use_cache = false;  // a fresh sample may parse
            continue;
          }
        }
        // records carry empty text only in the error state
        if (outcome.text.empty()) {
          last_error = "empty completion";
          use_cache = false;
          continue;
        }
        return outcome;
      } catch (const AuthError&) {
        throw;
      } catch (const Error& e) {
        last_error = e.what();
        use_cache = false;
      }
    }
    throw Error(last_error);
  }
};

ChatClient::ChatClient(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  impl_ = std::make_unique<Impl>(cfg_);
}

ChatClient::~ChatClient() = default;

std::string ChatClient::chat(const std::string& raw_system, const std::string& raw_user) {
  std::lock_guard<std::mutex> lock(op_mutex_);
  return impl_->complete(cfg_, raw_system, raw_user).text;
}

namespace {

// Runs one job per input index on up to max_in_flight workers; results land
// at their input index. The first escaping exception (per-record errors are
// handled inside the jobs; only batch-fatal ones escape) cancels the rest.
void run_bounded(std::size_t count, int max_in_flight,
                 const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(max_in_flight), count);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&]() {
    while (!abort.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        job(i);
      } catch (...) {
        {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
        abort.store(true);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::vector<ResponseRecord> ChatClient::generate(std::span<const MultilingualPrompt> prompts) {
  std::lock_guard<std::mutex> lock(op_mutex_);
  if (prompts.empty()) throw Error("generate: empty batch");

  std::vector<ResponseRecord> records(prompts.size());
  run_bounded(prompts.size(), cfg_.max_in_flight, [&](std::size_t i) {
    const auto& prompt = prompts[i];
    ResponseRecord r;
    r.prompt_id = prompt.prompt_id;
    r.lang = prompt.lang;
    r.kind = ResponseKind::generation;
    r.model_id = cfg_.model_id;
    try {
      const CallOutcome outcome = impl_->complete(cfg_, "", prompt.text);
      r.text = outcome.text;
      r.finish_reason = outcome.reason;
    } catch (const AuthError&) {
      throw;
    } catch (const Error& e) {
      logx::warn("generate: prompt " + prompt.prompt_id + " failed: " + e.what());
      r.finish_reason = FinishReason::error;
    }
    records[i] = std::move(r);
  });
  return records;
}

std::vector<ResponseRecord> ChatClient::self_translate(std::span<const ResponseRecord> records,
                                                       const LanguageCode& target_lang) {
  std::lock_guard<std::mutex> lock(op_mutex_);
  if (records.empty()) throw Error("self_translate: empty batch");
  for (const auto& r : records) {
    if (r.lang == target_lang) {
      throw Error("self_translate: record " + r.prompt_id + " already in " + target_lang);
    }
  }

  const std::string target_name = language_name(target_lang);
  std::vector<ResponseRecord> out(records.size());
  run_bounded(records.size(), cfg_.max_in_flight, [&](std::size_t i) {
    const auto& source = records[i];
    ResponseRecord r;
    r.prompt_id = source.prompt_id;
    r.lang = target_lang;
    r.kind = ResponseKind::translation;
    r.source_lang = source.lang;
    r.model_id = cfg_.model_id;
    if (!source.ok()) {
      r.finish_reason = FinishReason::error;
      out[i] = std::move(r);
      return;
    }
    const std::string prompt = tmpl::build_translate_prompt(target_name, source.text);
    auto extract = [&](const std::string& reply) -> std::optional<std::string> {
      const auto first = extract_marked(reply, "<translated>", "</translated>");
      if (first && reply.find("<translated>", reply.find("</translated>")) != std::string::npos) {
        logx::warn("self_translate: multiple marker pairs for " + source.prompt_id +
                   ", keeping the first");
      }
      return first;
    };
    try {
      const CallOutcome outcome = impl_->complete(cfg_, "", prompt, extract);
      r.text = outcome.text;
      r.finish_reason = outcome.reason;
    } catch (const AuthError&) {
      throw;
    } catch (const Error& e) {
      logx::warn("self_translate: record " + source.prompt_id + " failed: " + e.what());
      r.finish_reason = FinishReason::error;
    }
    out[i] = std::move(r);
  });
  return out;
}

}  // namespace mpref::client
