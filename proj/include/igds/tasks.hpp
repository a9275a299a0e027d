// SPDX-License-Identifier: Apache-2.0
//
// Synthetic task families with exact oracles, contaminated pools, and the
// evaluation metrics (exact match, pass@n, ROUGE-1/2/L, token F1).
//
// Every prompt ends with a family word followed by the shared separator
// token; the separator is the critical position t*:
//
//   modmath          BOS a + b [* c] MATH :   -> ((a+b)[*c]) mod m
//   extract_summary  BOS w1 .. wn SUM :       -> k most frequent words, first-appearance order
//   cipher_translate BOS w1 .. wn TRANS :     -> perm(w1) .. perm(wn)

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "igds/numcore.hpp"
#include "igds/toymodel.hpp"

namespace igds {

namespace vocab {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kSep = 2;
inline constexpr TokenId kPlus = 3;
inline constexpr TokenId kTimes = 4;
inline constexpr TokenId kMathWord = 5;
inline constexpr TokenId kSumWord = 6;
inline constexpr TokenId kTransWord = 7;
inline constexpr TokenId kDigit0 = 8;
inline constexpr std::uint32_t kMaxModulus = 16;
inline constexpr TokenId kWord0 = kDigit0 + static_cast<TokenId>(kMaxModulus);  // 24
inline constexpr std::uint32_t kWordCount = 40;
inline constexpr std::uint32_t kSize = static_cast<std::uint32_t>(kWord0) + kWordCount;  // 64
inline constexpr TokenId kFiller = static_cast<TokenId>(kSize) - 1;  // last word

TokenId digit(std::uint32_t v);
TokenId word(std::uint32_t i);
std::string token_name(TokenId id);
}  // namespace vocab

enum class TaskFamily { modmath, extract_summary, cipher_translate };

const char* to_string(TaskFamily f);
TaskFamily task_family_from_string(const std::string& s);

struct TaskSpec {
  TaskFamily family = TaskFamily::modmath;
  std::uint32_t vocab_size = vocab::kSize;
  std::uint32_t modulus = 7;        // modmath
  std::uint32_t ops = 2;            // modmath: 1 -> a+b, 2 -> (a+b)*c
  std::uint32_t content_len = 8;    // extract_summary / cipher_translate source length
  std::uint32_t distinct_words = 6; // extract_summary: words drawn from this many
  std::uint32_t summary_k = 2;      // extract_summary: target length
  std::uint64_t cipher_seed = 1;    // cipher_translate: 0 means identity permutation

  void validate() const;
};

enum class DistractorKind { shuffled_target, off_task };

struct PoolSpec {
  std::size_t n_total = 2000;
  double on_task_fraction = 0.5;
  DistractorKind distractor_kind = DistractorKind::off_task;
  std::uint64_t seed = 0;
};

// Ground-truth answer for a modmath operand list.
std::uint32_t modmath_answer(std::span<const std::uint32_t> operands, std::uint32_t modulus);
std::vector<TokenId> cipher_permutation(std::uint64_t cipher_seed);

DataSample make_modmath_sample(const TaskSpec& spec, std::span<const std::uint32_t> operands);
std::vector<DataSample> gen_task_data(const TaskSpec& spec, std::size_t n, std::uint64_t seed);
std::vector<DataSample> gen_pool(const TaskSpec& spec, const PoolSpec& pool);

struct PretrainSpec {
  std::size_t n = 20000;
  double task_fraction = 0.34;  // share of sequences from the target family
  // Mean share of target-family sequences whose answer is replaced by the
  // filler token, which leaves the base model unsure whether to answer at t*.
  // The per-sequence rate is graded by the first content token from 0 to
  // 2 * answer_noise (capped at 1).
  double answer_noise = 0.0;
  std::uint64_t seed = 0;
};

// Whole prompt+target sequences mixing every family, for pretraining.
std::vector<std::vector<TokenId>> gen_pretrain_corpus(const TaskSpec& task,
                                                      const PretrainSpec& pre);

double eval_exact(const ToyModel& model, const std::vector<DataSample>& testset);

// Draws one attempt for an item; `attempt_seed` identifies the draw.
using AttemptSampler =
    std::function<std::vector<TokenId>(const DataSample&, std::uint64_t attempt_seed)>;

// pass@n over an arbitrary sampler. Attempt j of item i always uses the
// same seed, so results for n are a prefix of results for n + 1.
double pass_at_n(const std::vector<DataSample>& testset, std::size_t n, std::uint64_t seed,
                 const AttemptSampler& sampler);
double eval_pass_at_n(const ToyModel& model, const std::vector<DataSample>& testset,
                      std::size_t n, double temperature, std::uint64_t seed);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct RougeScores {
  PrecisionRecall rouge1, rouge2, rougeL;
};

PrecisionRecall rouge_n(std::span<const TokenId> reference, std::span<const TokenId> hypothesis,
                        std::size_t n);
std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b);
RougeScores rouge(std::span<const TokenId> reference, std::span<const TokenId> hypothesis);
double token_f1(std::span<const TokenId> reference, std::span<const TokenId> hypothesis);

// Line format: prompt=<ids> target=<ids> tstar=<u32> ontask=<0|1> family=<tag>
std::string format_dataset(const std::vector<DataSample>& samples);
std::vector<DataSample> parse_dataset(const std::string& text);

}  // namespace igds
