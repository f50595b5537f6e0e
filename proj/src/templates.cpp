#include "mpref/templates.hpp"

#include <array>

#include "mpref/embedded/tmpl_head_to_head.hpp"
#include "mpref/embedded/tmpl_reasoning.hpp"
#include "mpref/embedded/tmpl_score_single.hpp"
#include "mpref/embedded/tmpl_self_translate.hpp"

namespace mpref::tmpl {

std::string_view score_single() { return embedded::tmpl_score_single; }
std::string_view head_to_head() { return embedded::tmpl_head_to_head; }
std::string_view self_translate() { return embedded::tmpl_self_translate; }
std::string_view reasoning() { return embedded::tmpl_reasoning; }

std::string substitute(std::string_view tmpl,
                       std::span<const std::pair<std::string_view, std::string_view>> repl) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    std::size_t match = std::string_view::npos;
    std::size_t best_pos = tmpl.size();
    for (std::size_t k = 0; k < repl.size(); ++k) {
      const auto pos = tmpl.find(repl[k].first, i);
      if (pos != std::string_view::npos && pos < best_pos) {
        best_pos = pos;
        match = k;
      }
    }
    if (match == std::string_view::npos) {
      out.append(tmpl.substr(i));
      break;
    }
    out.append(tmpl.substr(i, best_pos - i));
    out.append(repl[match].second);
    i = best_pos + repl[match].first.size();
  }
  return out;
}

std::string build_score_prompt(const std::string& lang_name, const std::string& instruction,
                               const std::string& answer) {
  const std::array<std::pair<std::string_view, std::string_view>, 3> repl{{
      {"[LANG]", lang_name},
      {"[INSTRUCTION]", instruction},
      {"[OUTPUT1]", answer},
  }};
  return substitute(score_single(), repl);
}

std::string build_head_to_head_prompt(const std::string& lang_name,
                                      const std::string& instruction, const std::string& output1,
                                      const std::string& output2) {
  const std::array<std::pair<std::string_view, std::string_view>, 4> repl{{
      {"[LANG]", lang_name},
      {"[INSTRUCTION]", instruction},
      {"[OUTPUT1]", output1},
      {"[OUTPUT2]", output2},
  }};
  return substitute(head_to_head(), repl);
}

std::string build_translate_prompt(const std::string& target_lang_name, const std::string& text) {
  const std::array<std::pair<std::string_view, std::string_view>, 2> repl{{
      {"[LANGUAGE]", target_lang_name},
      {"[TEXT]", text},
  }};
  return substitute(self_translate(), repl);
}

std::string build_reasoning_prompt(const std::string& lang_name, const std::string& instruction) {
  const std::array<std::pair<std::string_view, std::string_view>, 2> repl{{
      {"[LANGUAGE]", lang_name},
      {"[INSTRUCTION]", instruction},
  }};
  return substitute(reasoning(), repl);
}

}  // namespace mpref::tmpl
