#include "mpref/dpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mpref/jsonl.hpp"

namespace mpref::dpo {

using nlohmann::json;

namespace {

// -log sigmoid(z), stable for large |z|
double neg_log_sigmoid(double z) {
  if (z >= 0.0) return std::log1p(std::exp(-z));
  return -z + std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::size_t table_size(int vocab, int context_order) {
  return context_order == 0 ? static_cast<std::size_t>(vocab)
                            : static_cast<std::size_t>(vocab) * static_cast<std::size_t>(vocab);
}

// log softmax of one context row, written into `out` (size V)
void log_softmax_row(std::span<const double> row, std::span<double> out) {
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
}

// Precomputed log-probabilities, one row per context (a single row for
// unigram policies).
struct LogProbTable {
  int vocab = 0;
  int rows = 0;
  std::vector<double> logp;  // rows * vocab

  explicit LogProbTable(const ToyPolicy& p) {
    vocab = p.vocab_size();
    rows = p.context_order == 0 ? 1 : vocab;
    logp.resize(static_cast<std::size_t>(rows) * vocab);
    for (int r = 0; r < rows; ++r) {
      log_softmax_row({p.logits.data() + static_cast<std::size_t>(r) * vocab,
                       static_cast<std::size_t>(vocab)},
                      {logp.data() + static_cast<std::size_t>(r) * vocab,
                       static_cast<std::size_t>(vocab)});
    }
  }

  double at(int ctx, int tok) const { return logp[static_cast<std::size_t>(ctx) * vocab + tok]; }
};

void check_tokens(const ToyPolicy& p, std::span<const int> tokens, const char* what) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= p.vocab_size()) {
      throw Error(std::string(what) + ": token id " + std::to_string(tokens[i]) +
                  " at position " + std::to_string(i) + " outside vocabulary of size " +
                  std::to_string(p.vocab_size()));
    }
  }
}

int context_at(const ToyPolicy& p, std::span<const int> tokens, std::span<const int> context,
               std::size_t j) {
  if (p.context_order == 0) return 0;
  if (j > 0) return tokens[j - 1];
  return context.empty() ? 0 : context.back();
}

double seq_logprob_from_table(const ToyPolicy& p, const LogProbTable& table,
                              std::span<const int> tokens, std::span<const int> context) {
  double sum = 0.0;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    sum += table.at(context_at(p, tokens, context, j), tokens[j]);
  }
  return sum;
}

void require_same_shape(const ToyPolicy& policy, const ToyPolicy& reference) {
  if (policy.vocab != reference.vocab || policy.context_order != reference.context_order) {
    throw Error("policy and reference must share vocabulary and context order");
  }
}

}  // namespace

void TrainingHyperparams::validate() const {
  if (beta <= 0.0) throw Error("beta must be positive");
  if (alpha < 0.0) throw Error("alpha must be non-negative");
  if (learning_rate < 0.0) throw Error("learning_rate must be non-negative");
  if (steps <= 0) throw Error("steps must be positive");
  if (batch_size <= 0) throw Error("batch_size must be positive");
}

void ToyPolicy::validate() const {
  if (vocab.empty()) throw Error("policy vocabulary is empty");
  if (vocab.size() > 256) throw Error("policy vocabulary exceeds 256 tokens");
  if (context_order != 0 && context_order != 1) throw Error("context_order must be 0 or 1");
  if (logits.size() != table_size(vocab_size(), context_order)) {
    throw Error("logits table size does not match vocabulary and context order");
  }
  for (double v : logits) {
    if (!std::isfinite(v)) throw Error("logits table contains a non-finite entry");
  }
}

ToyPolicy make_uniform_policy(std::vector<std::string> vocab, int context_order,
                              std::string model_tag) {
  ToyPolicy p;
  p.vocab = std::move(vocab);
  p.context_order = context_order;
  p.logits.assign(table_size(p.vocab_size(), context_order), 0.0);
  p.model_tag = std::move(model_tag);
  p.validate();
  return p;
}

ToyPolicy make_random_policy(std::vector<std::string> vocab, int context_order,
                             std::uint64_t seed, double scale, std::string model_tag) {
  ToyPolicy p;
  p.vocab = std::move(vocab);
  p.context_order = context_order;
  p.logits.resize(table_size(p.vocab_size(), context_order));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : p.logits) v = scale * gauss(rng);
  p.model_tag = std::move(model_tag);
  p.validate();
  return p;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index.find(token);
  return it == index.end() ? -1 : it->second;
}

Vocabulary build_vocab(std::span<const std::string> texts, std::size_t max_size) {
  Vocabulary v;
  for (const auto& text : texts) {
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
      if (v.index.contains(tok)) continue;
      if (v.tokens.size() >= max_size) {
        throw Error("corpus needs more than " + std::to_string(max_size) +
                    " distinct tokens; shrink it or raise the vocabulary cap");
      }
      v.index.emplace(tok, static_cast<int>(v.tokens.size()));
      v.tokens.push_back(tok);
    }
  }
  if (v.tokens.empty()) throw Error("corpus produced an empty vocabulary");
  return v;
}

std::vector<int> tokenize(const Vocabulary& vocab, const std::string& text) {
  std::vector<int> ids;
  std::istringstream in(text);
  std::string tok;
  std::size_t pos = 0;
  while (in >> tok) {
    const int id = vocab.id(tok);
    if (id < 0) {
      throw Error("token \"" + tok + "\" at position " + std::to_string(pos) +
                  " is not in the vocabulary");
    }
    ids.push_back(id);
    ++pos;
  }
  return ids;
}

std::vector<TokenizedPair> tokenize_pairs(const Vocabulary& vocab,
                                          std::span<const pairs::PreferencePair> pairs) {
  std::vector<TokenizedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    TokenizedPair tp;
    tp.prompt = tokenize(vocab, p.prompt_text);
    tp.win = tokenize(vocab, p.chosen_text);
    tp.lose = tokenize(vocab, p.rejected_text);
    out.push_back(std::move(tp));
  }
  return out;
}

double seq_logprob(const ToyPolicy& policy, std::span<const int> tokens,
                   std::span<const int> context) {
  policy.validate();
  if (tokens.empty()) throw Error("seq_logprob: empty token sequence");
  check_tokens(policy, tokens, "seq_logprob");
  check_tokens(policy, context, "seq_logprob context");
  LogProbTable table(policy);
  return seq_logprob_from_table(policy, table, tokens, context);
}

LossBreakdown preference_loss_terms(std::span<const PairDelta> deltas, double beta) {
  if (deltas.empty()) throw Error("preference loss needs a non-empty batch");
  LossBreakdown out;
  std::size_t positive = 0;
  for (const auto& d : deltas) {
    const double margin = beta * (d.win - d.lose);
    out.dpo += neg_log_sigmoid(margin);
    out.margin_mean += margin;
    if (margin > 0.0) ++positive;
  }
  out.dpo /= static_cast<double>(deltas.size());
  out.margin_mean /= static_cast<double>(deltas.size());
  out.implicit_reward_acc = static_cast<double>(positive) / static_cast<double>(deltas.size());
  out.total = out.dpo;
  return out;
}

LossBreakdown dpo_loss(const ToyPolicy& policy, const ToyPolicy& reference,
                       std::span<const TokenizedPair> batch, const TrainingHyperparams& hp) {
  hp.validate();
  policy.validate();
  reference.validate();
  require_same_shape(policy, reference);
  if (batch.empty()) throw Error("dpo_loss: empty batch");

  LogProbTable pol(policy);
  LogProbTable ref(reference);

  std::vector<PairDelta> deltas;
  deltas.reserve(batch.size());
  double nll = 0.0;
  for (const auto& b : batch) {
    if (b.win.empty()) throw Error("dpo_loss: empty chosen sequence");
    if (b.lose.empty()) throw Error("dpo_loss: empty rejected sequence");
    check_tokens(policy, b.prompt, "dpo_loss prompt");
    check_tokens(policy, b.win, "dpo_loss chosen");
    check_tokens(policy, b.lose, "dpo_loss rejected");
    const double pw = seq_logprob_from_table(policy, pol, b.win, b.prompt);
    const double pl = seq_logprob_from_table(policy, pol, b.lose, b.prompt);
    const double rw = seq_logprob_from_table(reference, ref, b.win, b.prompt);
    const double rl = seq_logprob_from_table(reference, ref, b.lose, b.prompt);
    deltas.push_back({pw - rw, pl - rl});
    nll += -pw / static_cast<double>(b.win.size());
  }

  LossBreakdown out = preference_loss_terms(deltas, hp.beta);
  out.nll = nll / static_cast<double>(batch.size());
  out.total = out.dpo + hp.alpha * out.nll;
  return out;
}

std::vector<double> dpo_grad(const ToyPolicy& policy, const ToyPolicy& reference,
                             std::span<const TokenizedPair> batch,
                             const TrainingHyperparams& hp) {
  hp.validate();
  policy.validate();
  reference.validate();
  require_same_shape(policy, reference);
  if (batch.empty()) throw Error("dpo_grad: empty batch");

  const int vocab = policy.vocab_size();
  const int rows = policy.context_order == 0 ? 1 : vocab;
  LogProbTable pol(policy);
  LogProbTable ref(reference);

  // d total / d logits[r][v] = sum over scored steps with context r of
  //   w_step * (1{v == tok} - p(v|r)).
  std::vector<double> grad(policy.logits.size(), 0.0);
  std::vector<double> row_mass(rows, 0.0);

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  auto add_sequence = [&](std::span<const int> tokens, std::span<const int> context, double w) {
    for (std::size_t j = 0; j < tokens.size(); ++j) {
      const int ctx = context_at(policy, tokens, context, j);
      grad[static_cast<std::size_t>(ctx) * vocab + tokens[j]] += w;
      row_mass[ctx] += w;
    }
  };

  for (const auto& b : batch) {
    if (b.win.empty()) throw Error("dpo_grad: empty chosen sequence");
    if (b.lose.empty()) throw Error("dpo_grad: empty rejected sequence");
    check_tokens(policy, b.prompt, "dpo_grad prompt");
    check_tokens(policy, b.win, "dpo_grad chosen");
    check_tokens(policy, b.lose, "dpo_grad rejected");
    const double pw = seq_logprob_from_table(policy, pol, b.win, b.prompt);
    const double pl = seq_logprob_from_table(policy, pol, b.lose, b.prompt);
    const double rw = seq_logprob_from_table(reference, ref, b.win, b.prompt);
    const double rl = seq_logprob_from_table(reference, ref, b.lose, b.prompt);
    const double margin = hp.beta * ((pw - rw) - (pl - rl));
    const double s = sigmoid(-margin);  // d(-log sigmoid)/d margin = -sigmoid(-margin)
    const double w_win = (-s * hp.beta - hp.alpha / static_cast<double>(b.win.size())) * inv_b;
    const double w_lose = (s * hp.beta) * inv_b;
    add_sequence(b.win, b.prompt, w_win);
    add_sequence(b.lose, b.prompt, w_lose);
  }

  for (int r = 0; r < rows; ++r) {
    if (row_mass[r] == 0.0) continue;
    for (int v = 0; v < vocab; ++v) {
      grad[static_cast<std::size_t>(r) * vocab + v] -=
          row_mass[r] * std::exp(pol.at(r, v));
    }
  }
  return grad;
}

TrainResult train_toy(const ToyPolicy& initial, std::span<const TokenizedPair> dataset,
                      const TrainingHyperparams& hp) {
  hp.validate();
  initial.validate();
  if (dataset.empty()) throw Error("train_toy: empty dataset");

  TrainResult result;
  result.policy = initial;
  const ToyPolicy reference = initial;  // frozen snapshot of M_t
  result.curve.reserve(static_cast<std::size_t>(hp.steps));

  const std::size_t n = dataset.size();
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(hp.batch_size), n);
  std::vector<TokenizedPair> batch(bs);
  std::size_t cursor = 0;

  for (int step = 0; step < hp.steps; ++step) {
    for (std::size_t i = 0; i < bs; ++i) {
      batch[i] = dataset[(cursor + i) % n];
    }
    cursor = (cursor + bs) % n;

    LossBreakdown loss = dpo_loss(result.policy, reference, batch, hp);
    if (!std::isfinite(loss.total)) {
      throw Error("train_toy diverged at step " + std::to_string(step));
    }
    result.curve.push_back(loss);

    std::vector<double> grad = dpo_grad(result.policy, reference, batch, hp);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      result.policy.logits[i] -= hp.learning_rate * grad[i];
    }
  }
  result.policy.model_tag = initial.model_tag + "+dpo";
  return result;
}

void write_training_curve_csv(std::span<const LossBreakdown> curve, const std::string& path) {
  std::ostringstream out;
  out << "step,dpo,nll,total,margin_mean,implicit_reward_acc\n";
  out.precision(17);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out << i << ',' << curve[i].dpo << ',' << curve[i].nll << ',' << curve[i].total << ','
        << curve[i].margin_mean << ',' << curve[i].implicit_reward_acc << '\n';
  }
  jsonl::write_file(path, out.str());
}

std::string policy_to_json(const ToyPolicy& policy) {
  json j;
  j["vocab"] = policy.vocab;
  j["context_order"] = policy.context_order;
  j["logits"] = policy.logits;
  j["model_tag"] = policy.model_tag;
  return j.dump();
}

ToyPolicy policy_from_json(const std::string& text) {
  json j = json::parse(text);
  ToyPolicy p;
  p.vocab = j.at("vocab").get<std::vector<std::string>>();
  p.context_order = j.at("context_order").get<int>();
  p.logits = j.at("logits").get<std::vector<double>>();
  p.model_tag = j.value("model_tag", "");
  p.validate();
  return p;
}

ExportSummary export_training_file(const pairs::PairDataset& dataset, const std::string& path,
                                   double beta, double alpha) {
  if (dataset.pairs.empty()) throw Error("export_training_file: empty dataset");

  std::ostringstream out;
  for (const auto& p : dataset.pairs) {
    json j;
    j["prompt"] = p.prompt_text;
    j["chosen"] = p.chosen_text;
    j["rejected"] = p.rejected_text;
    out << j.dump() << '\n';
  }
  jsonl::write_file(path, out.str());

  json meta;
  meta["iteration"] = dataset.iteration;
  meta["seed"] = dataset.seed;
  meta["counts"] = dataset.counts;
  meta["beta"] = beta;
  meta["alpha"] = alpha;
  const std::string sidecar = path + ".meta.json";
  jsonl::write_file(sidecar, meta.dump(2) + "\n");

  return {dataset.pairs.size(), path, sidecar};
}

}  // namespace mpref::dpo
