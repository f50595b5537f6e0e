#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mpref/dpo.hpp"
#include "mpref/evaluator.hpp"
#include "mpref/lang_detect.hpp"
#include "mpref/pair_builder.hpp"
#include "mpref/templates.hpp"
#include "mpref/types.hpp"

namespace py = pybind11;
using namespace mpref;

namespace {

std::vector<std::pair<std::string, double>> detect_wrapper(const std::string& text) {
  const auto det = langid::Detector::builtin().detect(text);
  if (!det) return {};
  return {{det->lang, det->confidence}};
}

}  // namespace

PYBIND11_MODULE(mpref, m) {
  m.doc() = "multilingual self-rewarding preference pipeline (core operations)";

  py::register_exception<Error>(m, "MprefError");

  // --- domain types -------------------------------------------------------
  py::class_<MultilingualPrompt>(m, "MultilingualPrompt")
      .def(py::init([](std::string prompt_id, std::string lang, std::string text) {
             return MultilingualPrompt{std::move(prompt_id), std::move(lang), std::move(text)};
           }),
           py::arg("prompt_id"), py::arg("lang"), py::arg("text"))
      .def_readwrite("prompt_id", &MultilingualPrompt::prompt_id)
      .def_readwrite("lang", &MultilingualPrompt::lang)
      .def_readwrite("text", &MultilingualPrompt::text);

  py::enum_<ResponseKind>(m, "ResponseKind")
      .value("generation", ResponseKind::generation)
      .value("translation", ResponseKind::translation);

  py::enum_<FinishReason>(m, "FinishReason")
      .value("stop", FinishReason::stop)
      .value("length", FinishReason::length)
      .value("error", FinishReason::error);

  py::class_<ResponseRecord>(m, "ResponseRecord")
      .def(py::init([](std::string prompt_id, std::string lang, std::string text,
                       ResponseKind kind, std::optional<std::string> source_lang,
                       std::string model_id, FinishReason finish_reason) {
             ResponseRecord r;
             r.prompt_id = std::move(prompt_id);
             r.lang = std::move(lang);
             r.text = std::move(text);
             r.kind = kind;
             r.source_lang = std::move(source_lang);
             r.model_id = std::move(model_id);
             r.finish_reason = finish_reason;
             return r;
           }),
           py::arg("prompt_id"), py::arg("lang"), py::arg("text"),
           py::arg("kind") = ResponseKind::generation, py::arg("source_lang") = py::none(),
           py::arg("model_id") = "", py::arg("finish_reason") = FinishReason::stop)
      .def_readwrite("prompt_id", &ResponseRecord::prompt_id)
      .def_readwrite("lang", &ResponseRecord::lang)
      .def_readwrite("text", &ResponseRecord::text)
      .def_readwrite("kind", &ResponseRecord::kind)
      .def_readwrite("source_lang", &ResponseRecord::source_lang)
      .def_readwrite("model_id", &ResponseRecord::model_id)
      .def_readwrite("finish_reason", &ResponseRecord::finish_reason);

  // --- pair building ------------------------------------------------------
  py::class_<pairs::LanguageConfig>(m, "LanguageConfig")
      .def(py::init([](std::string dominant, std::vector<std::string> non_dominant,
                       std::vector<std::string> unseen) {
             return pairs::LanguageConfig{std::move(dominant), std::move(non_dominant),
                                          std::move(unseen)};
           }),
           py::arg("dominant"), py::arg("non_dominant"),
           py::arg("unseen") = std::vector<std::string>{})
      .def_readwrite("dominant", &pairs::LanguageConfig::dominant)
      .def_readwrite("non_dominant", &pairs::LanguageConfig::non_dominant)
      .def_readwrite("unseen", &pairs::LanguageConfig::unseen);

  py::class_<pairs::PreferencePair>(m, "PreferencePair")
      .def(py::init<>())
      .def_readwrite("pair_id", &pairs::PreferencePair::pair_id)
      .def_readwrite("iteration", &pairs::PreferencePair::iteration)
      .def_readwrite("prompt_id", &pairs::PreferencePair::prompt_id)
      .def_readwrite("prompt_lang", &pairs::PreferencePair::prompt_lang)
      .def_readwrite("prompt_text", &pairs::PreferencePair::prompt_text)
      .def_readwrite("chosen_text", &pairs::PreferencePair::chosen_text)
      .def_readwrite("rejected_text", &pairs::PreferencePair::rejected_text)
      .def_readwrite("source_lang", &pairs::PreferencePair::source_lang)
      .def_property_readonly("pair_type",
                             [](const pairs::PreferencePair& p) {
                               return std::string(pairs::to_string(p.pair_type));
                             })
      .def_property_readonly("chosen_origin", [](const pairs::PreferencePair& p) {
        return std::string(pairs::to_string(p.chosen_origin));
      });

  py::class_<pairs::PairDataset>(m, "PairDataset")
      .def_readonly("pairs", &pairs::PairDataset::pairs)
      .def_readonly("iteration", &pairs::PairDataset::iteration)
      .def_readonly("seed", &pairs::PairDataset::seed)
      .def_readonly("counts", &pairs::PairDataset::counts);

  m.def(
      "build_pairs",
      [](const std::vector<MultilingualPrompt>& prompts,
         const std::vector<ResponseRecord>& native,
         const std::vector<ResponseRecord>& translations, const pairs::LanguageConfig& langs,
         std::uint64_t seed, int iteration) {
        auto result = pairs::build_pairs(prompts, native, translations, langs, seed, iteration);
        return py::make_tuple(std::move(result.dataset), result.drops);
      },
      py::arg("prompts"), py::arg("native"), py::arg("translations"), py::arg("langs"),
      py::arg("seed"), py::arg("iteration") = 0,
      "Returns (dataset, drop_report) for the given prompts and responses.");

  m.def(
      "select_translation_sources",
      [](const std::vector<std::string>& prompt_ids, const std::vector<std::string>& non_dominant,
         std::uint64_t seed) {
        return pairs::select_translation_sources(prompt_ids, non_dominant, seed);
      },
      py::arg("prompt_ids"), py::arg("non_dominant"), py::arg("seed"));

  m.def(
      "filter_pairs",
      [](const pairs::PairDataset& dataset, bool check_chosen_language, bool drop_undetermined) {
        pairs::FilterPolicy policy;
        policy.check_chosen_language = check_chosen_language;
        policy.drop_undetermined = drop_undetermined;
        auto result = pairs::filter_pairs(dataset, policy, langid::Detector::builtin());
        return py::make_tuple(std::move(result.dataset), result.drops);
      },
      py::arg("dataset"), py::arg("check_chosen_language") = true,
      py::arg("drop_undetermined") = false,
      "Language-consistency gate on the chosen side; returns (dataset, drop_report).");

  // --- toy DPO ------------------------------------------------------------
  py::class_<dpo::TrainingHyperparams>(m, "TrainingHyperparams")
      .def(py::init<>())
      .def_readwrite("beta", &dpo::TrainingHyperparams::beta)
      .def_readwrite("alpha", &dpo::TrainingHyperparams::alpha)
      .def_readwrite("learning_rate", &dpo::TrainingHyperparams::learning_rate)
      .def_readwrite("steps", &dpo::TrainingHyperparams::steps)
      .def_readwrite("batch_size", &dpo::TrainingHyperparams::batch_size)
      .def_readwrite("seed", &dpo::TrainingHyperparams::seed);

  py::class_<dpo::ToyPolicy>(m, "ToyPolicy")
      .def_readwrite("vocab", &dpo::ToyPolicy::vocab)
      .def_readwrite("context_order", &dpo::ToyPolicy::context_order)
      .def_readwrite("logits", &dpo::ToyPolicy::logits)
      .def_readwrite("model_tag", &dpo::ToyPolicy::model_tag);

  py::class_<dpo::LossBreakdown>(m, "LossBreakdown")
      .def_readonly("dpo", &dpo::LossBreakdown::dpo)
      .def_readonly("nll", &dpo::LossBreakdown::nll)
      .def_readonly("total", &dpo::LossBreakdown::total)
      .def_readonly("margin_mean", &dpo::LossBreakdown::margin_mean)
      .def_readonly("implicit_reward_acc", &dpo::LossBreakdown::implicit_reward_acc);

  m.def("make_uniform_policy", &dpo::make_uniform_policy, py::arg("vocab"),
        py::arg("context_order"), py::arg("model_tag") = "uniform");
  m.def("make_random_policy", &dpo::make_random_policy, py::arg("vocab"),
        py::arg("context_order"), py::arg("seed"), py::arg("scale") = 1.0,
        py::arg("model_tag") = "random");

  m.def(
      "seq_logprob",
      [](const dpo::ToyPolicy& policy, const std::vector<int>& tokens,
         const std::vector<int>& context) { return dpo::seq_logprob(policy, tokens, context); },
      py::arg("policy"), py::arg("tokens"), py::arg("context") = std::vector<int>{});

  auto to_tokenized = [](const std::vector<std::tuple<std::vector<int>, std::vector<int>,
                                                      std::vector<int>>>& batch) {
    std::vector<dpo::TokenizedPair> out;
    out.reserve(batch.size());
    for (const auto& [prompt, win, lose] : batch) out.push_back({prompt, win, lose});
    return out;
  };

  m.def(
      "dpo_loss",
      [to_tokenized](const dpo::ToyPolicy& policy, const dpo::ToyPolicy& reference,
                     const std::vector<std::tuple<std::vector<int>, std::vector<int>,
                                                  std::vector<int>>>& batch,
                     const dpo::TrainingHyperparams& hp) {
        return dpo::dpo_loss(policy, reference, to_tokenized(batch), hp);
      },
      py::arg("policy"), py::arg("reference"), py::arg("batch"), py::arg("hp"),
      "batch is a list of (prompt_tokens, win_tokens, lose_tokens) triples.");

  m.def(
      "dpo_grad",
      [to_tokenized](const dpo::ToyPolicy& policy, const dpo::ToyPolicy& reference,
                     const std::vector<std::tuple<std::vector<int>, std::vector<int>,
                                                  std::vector<int>>>& batch,
                     const dpo::TrainingHyperparams& hp) {
        return dpo::dpo_grad(policy, reference, to_tokenized(batch), hp);
      },
      py::arg("policy"), py::arg("reference"), py::arg("batch"), py::arg("hp"));

  m.def(
      "train_toy",
      [to_tokenized](const dpo::ToyPolicy& initial,
                     const std::vector<std::tuple<std::vector<int>, std::vector<int>,
                                                  std::vector<int>>>& dataset,
                     const dpo::TrainingHyperparams& hp) {
        auto result = dpo::train_toy(initial, to_tokenized(dataset), hp);
        return py::make_tuple(std::move(result.policy), std::move(result.curve));
      },
      py::arg("initial"), py::arg("dataset"), py::arg("hp"),
      "Returns (policy, curve); the reference is frozen at the initial policy.");

  // --- language identification and scoring ---------------------------------
  m.def("detect_lang", &detect_wrapper, py::arg("text"),
        "Returns [(lang, confidence)] or [] when undetermined.");

  m.def(
      "off_target_rate",
      [](const std::vector<std::pair<std::string, std::string>>& records) {
        return langid::off_target_rate(langid::Detector::builtin(), records);
      },
      py::arg("records"), "records: list of (text, expected_lang).");

  m.def(
      "resolve_winner",
      [](int order1_s1, int order1_s2, int order2_s1, int order2_s2) {
        return std::string(
            eval::to_string(eval::resolve_winner({order1_s1, order1_s2}, {order2_s1, order2_s2})));
      },
      py::arg("order1_s1"), py::arg("order1_s2"), py::arg("order2_s1"), py::arg("order2_s2"));

  m.def(
      "score_reasoning",
      [](const std::string& response, const std::string& gold, const std::string& lang) {
        const auto s = eval::score_reasoning(response, gold, lang, langid::Detector::builtin());
        return py::make_tuple(s.correct, s.off_target, s.reason);
      },
      py::arg("response"), py::arg("gold"), py::arg("lang"),
      "Returns (correct, off_target, reason).");

  // --- prompt templates -----------------------------------------------------
  m.def("build_score_prompt", &tmpl::build_score_prompt, py::arg("lang_name"),
        py::arg("instruction"), py::arg("answer"));
  m.def("build_head_to_head_prompt", &tmpl::build_head_to_head_prompt, py::arg("lang_name"),
        py::arg("instruction"), py::arg("output1"), py::arg("output2"));
  m.def("build_translate_prompt", &tmpl::build_translate_prompt, py::arg("target_lang_name"),
        py::arg("text"));
  m.def("build_reasoning_prompt", &tmpl::build_reasoning_prompt, py::arg("lang_name"),
        py::arg("instruction"));
  m.def("language_name", &language_name, py::arg("code"));
}
