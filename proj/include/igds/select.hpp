// SPDX-License-Identifier: Apache-2.0
//
// Pool scoring and ratio selection. The feature-resonant score of a sample is
// the summed activation of the task features at t*; Loss, IFD, compression
// gain and uniform sampling are the comparison strategies.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "igds/identify.hpp"
#include "igds/sae.hpp"
#include "igds/toymodel.hpp"

namespace igds {

enum class Strategy { igds, loss, ifd, compress, random };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);
// Declared forward passes per pool sample.
std::uint32_t forward_cost(Strategy s);

enum class Direction { higher, lower };
// Which end of the score scale a strategy selects from first.
Direction selection_direction(Strategy s);

struct ScoredSample {
  std::size_t sample_ref = 0;
  double score = 0.0;
  Strategy strategy = Strategy::igds;
  std::uint32_t forward_passes_used = 0;
};

struct SelectionResult {
  Strategy strategy = Strategy::random;
  double ratio = 0.5;
  std::uint64_t seed = 0;
  std::vector<std::size_t> selected;  // rank order
  std::string manifest_hash;
};

// round(ratio × n), half away from zero; parameter error unless 0 < ratio ≤ 1.
std::size_t selection_size(std::size_t n, double ratio);

std::vector<ScoredSample> frs_score(const ToyModel& model, const std::vector<SaeParams>& saes,
                                    const TaskFeatureSet& features,
                                    const std::vector<DataSample>& pool, std::size_t threads = 1);
// Cross-entropy of the target given the prompt; lower is better.
std::vector<ScoredSample> loss_score(const ToyModel& model, const std::vector<DataSample>& pool,
                                     std::size_t threads = 1);
// L(target | prompt) / L(target | BOS); higher is selected first. A zero
// denominator scores +inf, which always ranks last.
std::vector<ScoredSample> ifd_score(const ToyModel& model, const std::vector<DataSample>& pool,
                                    std::size_t threads = 1);

// Greedy order by compressed-size gain of each document given what was
// already picked (zlib, dictionary primed with the trailing 32 KiB of the
// picked corpus). Returns pool indices in pick order.
std::vector<std::size_t> compress_order(const std::vector<std::string>& docs);
// Score = pick rank, so lower is better.
std::vector<ScoredSample> compress_score(const std::vector<DataSample>& pool);

SelectionResult random_select(std::size_t pool_size, double ratio, std::uint64_t seed);
// Non-finite scores rank last whatever the direction; ties go to the lower pool index.
SelectionResult select_by_score(const std::vector<ScoredSample>& scored, double ratio,
                                Direction direction);

// idx=<u64> score=<f64> strategy=<tag> fwd=<u32>
std::string format_scores(const std::vector<ScoredSample>& scores);
std::vector<ScoredSample> parse_scores(const std::string& text);
// Header "strategy=<tag> ratio=<f64> seed=<u64>" then idx=<u64> per line.
std::string format_selection(const SelectionResult& sel);
SelectionResult parse_selection(const std::string& text);

}  // namespace igds
