#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpref/pair_builder.hpp"
#include "mpref/types.hpp"

namespace mpref::dpo {

struct TrainingHyperparams {
  double beta = 0.1;   // KL penalty on the log-ratio difference
  double alpha = 1.0;  // weight of the length-normalized NLL term
  double learning_rate = 0.05;
  int steps = 500;
  int batch_size = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Autoregressive categorical model over a closed vocabulary (<= 256 tokens).
/// context_order 0 conditions on nothing (unigram); 1 conditions on the
/// previous token (bigram, logits laid out row-major [context][token]).
/// Bigram policies score the first token of a stream against context slot 0.
struct ToyPolicy {
  std::vector<std::string> vocab;
  int context_order = 0;
  std::vector<double> logits;  // size V (unigram) or V*V (bigram)
  std::string model_tag;

  int vocab_size() const { return static_cast<int>(vocab.size()); }
  void validate() const;
};

ToyPolicy make_uniform_policy(std::vector<std::string> vocab, int context_order,
                              std::string model_tag = "uniform");
ToyPolicy make_random_policy(std::vector<std::string> vocab, int context_order,
                             std::uint64_t seed, double scale = 1.0,
                             std::string model_tag = "random");

struct Vocabulary {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;

  int id(const std::string& token) const;  // -1 when absent
};

/// Whitespace tokens of every text, first-seen order. Throws when the corpus
/// needs more than max_size distinct tokens.
Vocabulary build_vocab(std::span<const std::string> texts, std::size_t max_size = 256);

/// Whitespace tokenization against a closed vocabulary; unknown tokens raise
/// an Error naming the token and its position.
std::vector<int> tokenize(const Vocabulary& vocab, const std::string& text);

struct TokenizedPair {
  std::vector<int> prompt;
  std::vector<int> win;
  std::vector<int> lose;
};

std::vector<TokenizedPair> tokenize_pairs(const Vocabulary& vocab,
                                          std::span<const pairs::PreferencePair> pairs);

/// Sum of per-step conditional log-probabilities of `tokens`, conditioned on
/// the trailing context of `context` (scored tokens only). Always <= 0.
double seq_logprob(const ToyPolicy& policy, std::span<const int> tokens,
                   std::span<const int> context = {});

struct LossBreakdown {
  double dpo = 0.0;
  double nll = 0.0;
  double total = 0.0;
  double margin_mean = 0.0;          // mean of beta * (delta_win - delta_lose)
  double implicit_reward_acc = 0.0;  // fraction of batch with positive margin
};

/// Policy-vs-reference log-ratio of win and lose completions for one pair.
struct PairDelta {
  double win = 0.0;
  double lose = 0.0;
};

/// The logistic preference term computed straight from log-ratio deltas;
/// nll is left at zero. Shared by dpo_loss and the closed-form tests.
LossBreakdown preference_loss_terms(std::span<const PairDelta> deltas, double beta);

LossBreakdown dpo_loss(const ToyPolicy& policy, const ToyPolicy& reference,
                       std::span<const TokenizedPair> batch,
                       const TrainingHyperparams& hp);

/// Analytic gradient of the combined objective w.r.t. policy.logits.
/// The reference model receives no gradient.
std::vector<double> dpo_grad(const ToyPolicy& policy, const ToyPolicy& reference,
                             std::span<const TokenizedPair> batch,
                             const TrainingHyperparams& hp);

struct TrainResult {
  ToyPolicy policy;
  std::vector<LossBreakdown> curve;  // one entry per step, pre-update
};

/// Plain gradient descent against a reference frozen at the initial policy.
/// Batches cycle through the dataset in order, batch_size pairs at a time.
/// Throws on a non-finite loss, naming the step.
TrainResult train_toy(const ToyPolicy& initial, std::span<const TokenizedPair> dataset,
                      const TrainingHyperparams& hp);

/// CSV columns: step, dpo, nll, total, margin_mean, implicit_reward_acc.
void write_training_curve_csv(std::span<const LossBreakdown> curve, const std::string& path);

std::string policy_to_json(const ToyPolicy& policy);
ToyPolicy policy_from_json(const std::string& text);

struct ExportSummary {
  std::size_t pairs_written = 0;
  std::string data_path;
  std::string sidecar_path;
};

/// JSON Lines {prompt, chosen, rejected} plus a metadata sidecar at
/// `<path>.meta.json` with {iteration, seed, counts, beta, alpha}.
ExportSummary export_training_file(const pairs::PairDataset& dataset, const std::string& path,
                                   double beta, double alpha);

}  // namespace mpref::dpo
