// SPDX-License-Identifier: Apache-2.0

#include "igds/tasks.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <map>
#include <sstream>

namespace igds {

namespace vocab {

TokenId digit(std::uint32_t v) {
  if (v >= kMaxModulus) fail(ErrorKind::parameter, fmt::format("digit {} out of range", v));
  return kDigit0 + static_cast<TokenId>(v);
}

TokenId word(std::uint32_t i) {
  if (i >= kWordCount) fail(ErrorKind::parameter, fmt::format("word {} out of range", i));
  return kWord0 + static_cast<TokenId>(i);
}

std::string token_name(TokenId id) {
  switch (id) {
    case kPad: return "<pad>";
    case kBos: return "<bos>";
    case kSep: return ":";
    case kPlus: return "+";
    case kTimes: return "*";
    case kMathWord: return "MATH";
    case kSumWord: return "SUM";
    case kTransWord: return "TRANS";
    default: break;
  }
  if (id >= kDigit0 && id < kWord0) return std::to_string(id - kDigit0);
  if (id >= kWord0 && id < static_cast<TokenId>(kSize)) return fmt::format("w{}", id - kWord0);
  return fmt::format("<{}>", id);
}

}  // namespace vocab

const char* to_string(TaskFamily f) {
  switch (f) {
    case TaskFamily::modmath: return "modmath";
    case TaskFamily::extract_summary: return "extract_summary";
    case TaskFamily::cipher_translate: return "cipher_translate";
  }
  return "unknown";
}

TaskFamily task_family_from_string(const std::string& s) {
  if (s == "modmath") return TaskFamily::modmath;
  if (s == "extract_summary") return TaskFamily::extract_summary;
  if (s == "cipher_translate") return TaskFamily::cipher_translate;
  fail(ErrorKind::parameter, fmt::format("unknown task family '{}'", s));
}

void TaskSpec::validate() const {
  if (vocab_size < vocab::kSize) {
    fail(ErrorKind::parameter, fmt::format("task vocabulary needs {} ids, vocab_size is {}",
                                           vocab::kSize, vocab_size));
  }
  switch (family) {
    case TaskFamily::modmath:
      if (modulus < 2 || modulus > vocab::kMaxModulus) {
        fail(ErrorKind::parameter,
             fmt::format("modulus {} outside [2, {}]", modulus, vocab::kMaxModulus));
      }
      if (ops < 1 || ops > 2) fail(ErrorKind::parameter, fmt::format("ops {} not in {{1,2}}", ops));
      break;
    case TaskFamily::extract_summary:
      if (content_len < 1 || distinct_words < 1 || distinct_words > vocab::kWordCount ||
          summary_k < 1 || summary_k > distinct_words || summary_k > content_len) {
        fail(ErrorKind::parameter, "extract_summary knobs out of range");
      }
      break;
    case TaskFamily::cipher_translate:
      if (content_len < 1) fail(ErrorKind::parameter, "cipher content_len must be >= 1");
      break;
  }
}

std::uint32_t modmath_answer(std::span<const std::uint32_t> operands, std::uint32_t modulus) {
  if (operands.size() < 2) fail(ErrorKind::parameter, "modmath needs at least two operands");
  std::uint64_t v = (operands[0] + operands[1]) % modulus;
  if (operands.size() > 2) v = (v * operands[2]) % modulus;
  return static_cast<std::uint32_t>(v);
}

std::vector<TokenId> cipher_permutation(std::uint64_t cipher_seed) {
  std::vector<TokenId> perm(vocab::kWordCount);
  for (std::uint32_t i = 0; i < vocab::kWordCount; ++i) perm[i] = vocab::word(i);
  if (cipher_seed != 0) {
    Rng rng(derive_seed(cipher_seed, 0x63697068));
    rng.shuffle(perm);
  }
  return perm;
}

DataSample make_modmath_sample(const TaskSpec& spec, std::span<const std::uint32_t> operands) {
  DataSample s;
  s.prompt = {vocab::kBos, vocab::digit(operands[0]), vocab::kPlus, vocab::digit(operands[1])};
  if (operands.size() > 2) {
    s.prompt.push_back(vocab::kTimes);
    s.prompt.push_back(vocab::digit(operands[2]));
  }
  s.prompt.push_back(vocab::kMathWord);
  s.prompt.push_back(vocab::kSep);
  s.critical_pos = s.prompt.size() - 1;
  s.target = {vocab::digit(modmath_answer(operands, spec.modulus))};
  s.source = to_string(TaskFamily::modmath);
  return s;
}

namespace {

DataSample make_summary_sample(const TaskSpec& spec, Rng& rng) {
  std::vector<std::uint32_t> ids(vocab::kWordCount);
  for (std::uint32_t i = 0; i < ids.size(); ++i) ids[i] = i;
  rng.shuffle(ids);
  ids.resize(spec.distinct_words);
  DataSample s;
  s.prompt.push_back(vocab::kBos);
  // Skewed draw: word j has weight distinct_words - j.
  const std::uint32_t total = spec.distinct_words * (spec.distinct_words + 1) / 2;
  std::vector<std::uint32_t> content;
  for (std::uint32_t i = 0; i < spec.content_len; ++i) {
    std::uint32_t r = static_cast<std::uint32_t>(rng.below(total));
    std::uint32_t j = 0;
    while (r >= spec.distinct_words - j) {
      r -= spec.distinct_words - j;
      ++j;
    }
    content.push_back(ids[j]);
    s.prompt.push_back(vocab::word(ids[j]));
  }
  std::map<std::uint32_t, std::pair<std::uint32_t, std::uint32_t>> stats;  // word -> (count, first)
  for (std::uint32_t i = 0; i < content.size(); ++i) {
    auto [it, fresh] = stats.try_emplace(content[i], 0, i);
    ++it->second.first;
  }
  std::vector<std::pair<std::uint32_t, std::pair<std::uint32_t, std::uint32_t>>> ranked(
      stats.begin(), stats.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;
  });
  ranked.resize(std::min<std::size_t>(ranked.size(), spec.summary_k));
  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) { return a.second.second < b.second.second; });
  for (const auto& r : ranked) s.target.push_back(vocab::word(r.first));
  s.prompt.push_back(vocab::kSumWord);
  s.prompt.push_back(vocab::kSep);
  s.critical_pos = s.prompt.size() - 1;
  s.source = to_string(TaskFamily::extract_summary);
  return s;
}

DataSample make_cipher_sample(const TaskSpec& spec, const std::vector<TokenId>& perm, Rng& rng) {
  DataSample s;
  s.prompt.push_back(vocab::kBos);
  for (std::uint32_t i = 0; i < spec.content_len; ++i) {
    const auto w = static_cast<std::uint32_t>(rng.below(vocab::kWordCount));
    s.prompt.push_back(vocab::word(w));
    s.target.push_back(perm[w]);
  }
  s.prompt.push_back(vocab::kTransWord);
  s.prompt.push_back(vocab::kSep);
  s.critical_pos = s.prompt.size() - 1;
  s.source = to_string(TaskFamily::cipher_translate);
  return s;
}

DataSample make_sample(const TaskSpec& spec, const std::vector<TokenId>& perm, Rng& rng) {
  switch (spec.family) {
    case TaskFamily::modmath: {
      std::vector<std::uint32_t> ops;
      for (std::uint32_t i = 0; i < spec.ops + 1; ++i) {
        ops.push_back(static_cast<std::uint32_t>(rng.below(spec.modulus)));
      }
      return make_modmath_sample(spec, ops);
    }
    case TaskFamily::extract_summary:
      return make_summary_sample(spec, rng);
    case TaskFamily::cipher_translate:
      return make_cipher_sample(spec, perm, rng);
  }
  fail(ErrorKind::parameter, "unknown task family");
}

TaskSpec sibling_spec(const TaskSpec& spec, TaskFamily family) {
  TaskSpec s = spec;
  s.family = family;
  if (family == TaskFamily::extract_summary && s.summary_k > s.distinct_words) {
    s.summary_k = s.distinct_words;
  }
  return s;
}

std::vector<TaskFamily> other_families(TaskFamily f) {
  std::vector<TaskFamily> out;
  for (auto g : {TaskFamily::modmath, TaskFamily::extract_summary, TaskFamily::cipher_translate})
    if (g != f) out.push_back(g);
  return out;
}

}  // namespace

std::vector<DataSample> gen_task_data(const TaskSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n < 1) fail(ErrorKind::parameter, "gen_task_data needs n >= 1");
  Rng rng(derive_seed(seed, 0x7461736b));
  const auto perm = cipher_permutation(spec.cipher_seed);
  std::vector<DataSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_sample(spec, perm, rng));
  return out;
}

std::vector<DataSample> gen_pool(const TaskSpec& spec, const PoolSpec& pool) {
  spec.validate();
  if (!(pool.on_task_fraction >= 0.0 && pool.on_task_fraction <= 1.0)) {
    fail(ErrorKind::parameter, "on_task_fraction must lie in [0, 1]");
  }
  const std::size_t n_on = round_half_away(pool.on_task_fraction * static_cast<double>(pool.n_total));
  const std::size_t n_off = pool.n_total - n_on;
  std::vector<DataSample> out;
  out.reserve(pool.n_total);
  if (n_on > 0) {
    out = gen_task_data(spec, n_on, derive_seed(pool.seed, 1));
  }
  Rng rng(derive_seed(pool.seed, 2));
  if (pool.distractor_kind == DistractorKind::shuffled_target) {
    if (n_off > 0) {
      auto extra = gen_task_data(spec, n_off, derive_seed(pool.seed, 3));
      for (auto& s : extra) {
        rng.shuffle(s.target);
        s.on_task = false;
        out.push_back(std::move(s));
      }
    }
  } else {
    const auto fams = other_families(spec.family);
    std::vector<std::size_t> counts(fams.size(), n_off / fams.size());
    for (std::size_t i = 0; i < n_off % fams.size(); ++i) ++counts[i];
    for (std::size_t k = 0; k < fams.size(); ++k) {
      if (counts[k] == 0) continue;
      auto extra = gen_task_data(sibling_spec(spec, fams[k]), counts[k], derive_seed(pool.seed, 4 + k));
      for (auto& s : extra) {
        s.on_task = false;
        out.push_back(std::move(s));
      }
    }
  }
  rng.shuffle(out);
  return out;
}

namespace {
constexpr int kNoiseLevels = 7;
}  // namespace

std::vector<std::vector<TokenId>> gen_pretrain_corpus(const TaskSpec& task,
                                                      const PretrainSpec& pre) {
  task.validate();
  if (!(pre.answer_noise >= 0.0 && pre.answer_noise <= 1.0)) {
    fail(ErrorKind::parameter, "answer_noise must lie in [0, 1]");
  }
  PoolSpec ps;
  ps.n_total = pre.n;
  ps.on_task_fraction = pre.task_fraction;
  ps.distractor_kind = DistractorKind::off_task;
  ps.seed = pre.seed;
  Rng noise(derive_seed(pre.seed, 0x6e6f6973));
  std::vector<std::vector<TokenId>> corpus;
  corpus.reserve(pre.n);
  for (auto& s : gen_pool(task, ps)) {
    // The filler rate grows with the first content token, from 0 to twice
    // the mean, so prompts near the answer/filler boundary always exist.
    const double level = static_cast<double>(s.prompt.at(1) % kNoiseLevels) / (kNoiseLevels - 1);
    if (s.on_task && noise.uniform() < std::min(1.0, 2.0 * pre.answer_noise * level)) {
      std::fill(s.target.begin(), s.target.end(), vocab::kFiller);
    }
    std::vector<TokenId> seq(s.prompt);
    seq.insert(seq.end(), s.target.begin(), s.target.end());
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

double eval_exact(const ToyModel& model, const std::vector<DataSample>& testset) {
  if (testset.empty()) fail(ErrorKind::input, "eval_exact needs a nonempty test set");
  std::size_t hits = 0;
  for (const auto& s : testset) {
    const auto out = generate(model, s.prompt, s.target.size(), GenerationMode::make_greedy());
    hits += out == s.target ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(testset.size());
}

double pass_at_n(const std::vector<DataSample>& testset, std::size_t n, std::uint64_t seed,
                 const AttemptSampler& sampler) {
  if (n < 1) fail(ErrorKind::parameter, "pass@n needs n >= 1");
  if (testset.empty()) fail(ErrorKind::input, "pass@n needs a nonempty test set");
  std::size_t passed = 0;
  for (std::size_t i = 0; i < testset.size(); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::uint64_t attempt_seed = derive_seed(derive_seed(seed, i), j);
      if (sampler(testset[i], attempt_seed) == testset[i].target) {
        ++passed;
        break;
      }
    }
  }
  return static_cast<double>(passed) / static_cast<double>(testset.size());
}

double eval_pass_at_n(const ToyModel& model, const std::vector<DataSample>& testset,
                      std::size_t n, double temperature, std::uint64_t seed) {
  return pass_at_n(testset, n, seed, [&](const DataSample& s, std::uint64_t attempt_seed) {
    const GenerationMode mode = temperature > 0.0 ? GenerationMode::sample(temperature, attempt_seed)
                                                  : GenerationMode::make_greedy();
    return generate(model, s.prompt, s.target.size(), mode);
  });
}

namespace {

PrecisionRecall from_counts(double overlap, double hyp_total, double ref_total) {
  PrecisionRecall pr;
  if (hyp_total == 0.0 || ref_total == 0.0) return pr;
  pr.precision = overlap / hyp_total;
  pr.recall = overlap / ref_total;
  if (pr.precision + pr.recall > 0.0) {
    pr.f1 = 2.0 * pr.precision * pr.recall / (pr.precision + pr.recall);
  }
  return pr;
}

std::map<std::vector<TokenId>, std::size_t> ngram_counts(std::span<const TokenId> s,
                                                         std::size_t n) {
  std::map<std::vector<TokenId>, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++counts[std::vector<TokenId>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                  s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

PrecisionRecall rouge_n(std::span<const TokenId> reference, std::span<const TokenId> hypothesis,
                        std::size_t n) {
  if (n == 0) fail(ErrorKind::parameter, "rouge_n needs n >= 1");
  const auto ref = ngram_counts(reference, n);
  const auto hyp = ngram_counts(hypothesis, n);
  std::size_t overlap = 0;
  for (const auto& [gram, c] : hyp) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  const double hyp_total = hypothesis.size() >= n ? static_cast<double>(hypothesis.size() - n + 1) : 0.0;
  const double ref_total = reference.size() >= n ? static_cast<double>(reference.size() - n + 1) : 0.0;
  return from_counts(static_cast<double>(overlap), hyp_total, ref_total);
}

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScores rouge(std::span<const TokenId> reference, std::span<const TokenId> hypothesis) {
  RougeScores r;
  r.rouge1 = rouge_n(reference, hypothesis, 1);
  r.rouge2 = rouge_n(reference, hypothesis, 2);
  r.rougeL = from_counts(static_cast<double>(lcs_length(reference, hypothesis)),
                         static_cast<double>(hypothesis.size()),
                         static_cast<double>(reference.size()));
  return r;
}

double token_f1(std::span<const TokenId> reference, std::span<const TokenId> hypothesis) {
  return rouge_n(reference, hypothesis, 1).f1;
}

namespace {

std::string join_ids(std::span<const TokenId> ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(ids[i]);
  }
  return s;
}

}  // namespace

std::string format_dataset(const std::vector<DataSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += fmt::format("prompt={} target={} tstar={} ontask={} family={}\n", join_ids(s.prompt),
                       join_ids(s.target), s.critical_pos, s.on_task ? 1 : 0, s.source);
  }
  return out;
}

std::vector<DataSample> parse_dataset(const std::string& text) {
  std::vector<DataSample> out;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream words(line);
    std::string w;
    DataSample s;
    std::vector<TokenId>* list = nullptr;
    bool seen_tstar = false, seen_ontask = false, seen_family = false;
    auto bad = [&](const std::string& why) {
      fail(ErrorKind::format, fmt::format("dataset line {}: {}", lineno, why));
    };
    auto parse_id = [&](const std::string& v) {
      try {
        std::size_t used = 0;
        const long id = std::stol(v, &used);
        if (used != v.size()) bad("bad token id '" + v + "'");
        return static_cast<TokenId>(id);
      } catch (const std::logic_error&) {
      }
      bad("bad token id '" + v + "'");
      return TokenId{};
    };
    while (words >> w) {
      const auto eq = w.find('=');
      if (eq == std::string::npos) {
        if (list == nullptr) bad("token id outside a list field");
        list->push_back(parse_id(w));
        continue;
      }
      const std::string key = w.substr(0, eq), val = w.substr(eq + 1);
      list = nullptr;
      if (key == "prompt" || key == "target") {
        list = key == "prompt" ? &s.prompt : &s.target;
        if (!val.empty()) list->push_back(parse_id(val));
      } else if (key == "tstar") {
        const TokenId pos = parse_id(val);
        if (pos < 0) bad("tstar must be nonnegative");
        s.critical_pos = static_cast<std::size_t>(pos);
        seen_tstar = true;
      } else if (key == "ontask") {
        if (val != "0" && val != "1") bad("ontask must be 0 or 1");
        s.on_task = val == "1";
        seen_ontask = true;
      } else if (key == "family") {
        s.source = val;
        seen_family = true;
      } else {
        bad("unknown key '" + key + "'");
      }
    }
    if (!seen_tstar || !seen_ontask || !seen_family) bad("missing field");
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace igds
