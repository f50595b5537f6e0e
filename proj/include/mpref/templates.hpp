#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>

namespace mpref::tmpl {

// Prompt templates with [PLACEHOLDER] slots, embedded verbatim from
// data/templates/. The shipped files are the reference bytes the test
// suite checks substitution against.
std::string_view score_single();    // [LANG], [INSTRUCTION], [OUTPUT1]
std::string_view head_to_head();    // [LANG], [INSTRUCTION], [OUTPUT1], [OUTPUT2]
std::string_view self_translate();  // [LANGUAGE], [TEXT]
std::string_view reasoning();       // [LANGUAGE], [INSTRUCTION]

/// Replaces every occurrence of each placeholder, single pass over the
/// template so substituted values are never rescanned.
std::string substitute(std::string_view tmpl,
                       std::span<const std::pair<std::string_view, std::string_view>> repl);

std::string build_score_prompt(const std::string& lang_name, const std::string& instruction,
                               const std::string& answer);
std::string build_head_to_head_prompt(const std::string& lang_name,
                                      const std::string& instruction, const std::string& output1,
                                      const std::string& output2);
std::string build_translate_prompt(const std::string& target_lang_name, const std::string& text);
std::string build_reasoning_prompt(const std::string& lang_name, const std::string& instruction);

}  // namespace mpref::tmpl
