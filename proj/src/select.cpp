// SPDX-License-Identifier: Apache-2.0

#include "igds/select.hpp"

#include <fmt/format.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "igds/parallel.hpp"
#include "igds/tasks.hpp"
#include "records.hpp"

namespace igds {

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::igds: return "igds";
    case Strategy::loss: return "loss";
    case Strategy::ifd: return "ifd";
    case Strategy::compress: return "compress";
    case Strategy::random: return "random";
  }
  return "unknown";
}

Strategy strategy_from_string(const std::string& s) {
  for (Strategy k : {Strategy::igds, Strategy::loss, Strategy::ifd, Strategy::compress,
                     Strategy::random}) {
    if (s == to_string(k)) return k;
  }
  fail(ErrorKind::configuration, fmt::format("unknown strategy '{}'", s));
}

std::uint32_t forward_cost(Strategy s) {
  switch (s) {
    case Strategy::igds:
    case Strategy::loss: return 1;
    case Strategy::ifd: return 2;
    case Strategy::compress:
    case Strategy::random: return 0;
  }
  return 0;
}

Direction selection_direction(Strategy s) {
  switch (s) {
    case Strategy::igds:
    case Strategy::ifd: return Direction::higher;
    default: return Direction::lower;
  }
}

std::size_t selection_size(std::size_t n, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    fail(ErrorKind::parameter, fmt::format("ratio {} outside (0, 1]", ratio));
  }
  return std::min(n, round_half_away(ratio * static_cast<double>(n)));
}

std::vector<ScoredSample> frs_score(const ToyModel& model, const std::vector<SaeParams>& saes,
                                    const TaskFeatureSet& features,
                                    const std::vector<DataSample>& pool, std::size_t threads) {
  if (features.features.empty()) fail(ErrorKind::configuration, "empty task feature set");
  if (pool.empty()) fail(ErrorKind::input, "empty pool");
  std::vector<std::size_t> layers;
  std::vector<const SaeParams*> sae_of;
  for (const auto& tf : features.features) {
    const SaeParams& sae = sae_for_layer(saes, tf.feature.layer);
    if (tf.feature.index >= sae.d_sae()) {
      fail(ErrorKind::index, fmt::format("feature {} outside d_sae {}", to_string(tf.feature),
                                         sae.d_sae()));
    }
    sae_of.push_back(&sae);
    if (std::find(layers.begin(), layers.end(), tf.feature.layer) == layers.end()) {
      layers.push_back(tf.feature.layer);
    }
  }
  std::sort(layers.begin(), layers.end());

  std::vector<ScoredSample> out(pool.size());
  parallel_for(pool.size(), threads, [&](std::size_t i) {
    const DataSample& s = pool[i];
    s.validate();
    const ForwardResult r = forward_with_taps(model, s.prompt, layers);
    const std::size_t T = s.prompt.size();
    double score = 0.0;
    for (std::size_t k = 0; k < features.features.size(); ++k) {
      const auto& f = features.features[k].feature;
      const std::size_t li = static_cast<std::size_t>(
          std::find(layers.begin(), layers.end(), f.layer) - layers.begin());
      score += feature_activation(*sae_of[k], r.taps[li * T + s.critical_pos].state.span(),
                                  f.index);
    }
    out[i] = {i, score, Strategy::igds, 1};
  });
  return out;
}

std::vector<ScoredSample> loss_score(const ToyModel& model, const std::vector<DataSample>& pool,
                                     std::size_t threads) {
  if (pool.empty()) fail(ErrorKind::input, "empty pool");
  std::vector<ScoredSample> out(pool.size());
  parallel_for(pool.size(), threads, [&](std::size_t i) {
    out[i] = {i, target_loss(model, pool[i]), Strategy::loss, 1};
  });
  return out;
}

std::vector<ScoredSample> ifd_score(const ToyModel& model, const std::vector<DataSample>& pool,
                                    std::size_t threads) {
  if (pool.empty()) fail(ErrorKind::input, "empty pool");
  std::vector<ScoredSample> out(pool.size());
  parallel_for(pool.size(), threads, [&](std::size_t i) {
    const double cond = target_loss(model, pool[i]);
    const double uncond = unconditional_target_loss(model, pool[i], vocab::kBos);
    const double score = uncond > 0.0 ? cond / uncond : INFINITY;
    out[i] = {i, score, Strategy::ifd, 2};
  });
  return out;
}

namespace {

constexpr std::size_t kWindow = 32768;

class Compressor {
 public:
  Compressor() {
    if (deflateInit2(&z_, 9, Z_DEFLATED, -15, 9, Z_DEFAULT_STRATEGY) != Z_OK) {
      fail(ErrorKind::evaluation, "zlib initialization failed");
    }
  }
  ~Compressor() { deflateEnd(&z_); }
  Compressor(const Compressor&) = delete;
  Compressor& operator=(const Compressor&) = delete;

  // Compressed size of `doc` when the preceding bytes are `context`.
  std::size_t size_given(const std::string& context, const std::string& doc) {
    deflateReset(&z_);
    if (!context.empty()) {
      const std::size_t n = std::min(context.size(), kWindow);
      deflateSetDictionary(&z_, reinterpret_cast<const Bytef*>(context.data() + context.size() - n),
                           static_cast<uInt>(n));
    }
    buf_.resize(deflateBound(&z_, static_cast<uLong>(doc.size())) + 16);
    z_.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(doc.data()));
    z_.avail_in = static_cast<uInt>(doc.size());
    z_.next_out = buf_.data();
    z_.avail_out = static_cast<uInt>(buf_.size());
    if (deflate(&z_, Z_FINISH) != Z_STREAM_END) fail(ErrorKind::evaluation, "zlib deflate failed");
    return buf_.size() - z_.avail_out;
  }

 private:
  z_stream z_{};
  std::vector<Bytef> buf_;
};

std::string sample_bytes(const DataSample& s) {
  std::string out;
  for (TokenId t : s.prompt) out += fmt::format("{} ", t);
  out += "| ";
  for (TokenId t : s.target) out += fmt::format("{} ", t);
  out += '\n';
  return out;
}

}  // namespace

std::vector<std::size_t> compress_order(const std::vector<std::string>& docs) {
  // Lazy greedy: a document's gain can only shrink as the corpus grows, so a
  // stale gain is an upper bound and only the heap top needs refreshing.
  struct Entry {
    std::size_t gain;
    std::size_t index;
    std::size_t version;
  };
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.gain != b.gain) return a.gain < b.gain;
    return a.index > b.index;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  Compressor z;
  const std::string empty;
  for (std::size_t i = 0; i < docs.size(); ++i) heap.push({z.size_given(empty, docs[i]), i, 0});
  std::string corpus;
  std::vector<std::size_t> order;
  order.reserve(docs.size());
  while (!heap.empty()) {
    Entry top = heap.top();
    heap.pop();
    if (top.version == order.size()) {
      order.push_back(top.index);
      corpus += docs[top.index];
      if (corpus.size() > 2 * kWindow) corpus.erase(0, corpus.size() - kWindow);
      continue;
    }
    top.gain = z.size_given(corpus, docs[top.index]);
    top.version = order.size();
    heap.push(top);
  }
  return order;
}

std::vector<ScoredSample> compress_score(const std::vector<DataSample>& pool) {
  if (pool.empty()) fail(ErrorKind::input, "empty pool");
  std::vector<std::string> docs;
  docs.reserve(pool.size());
  for (const auto& s : pool) docs.push_back(sample_bytes(s));
  const auto order = compress_order(docs);
  std::vector<ScoredSample> out(pool.size());
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    out[order[rank]] = {order[rank], static_cast<double>(rank), Strategy::compress, 0};
  }
  return out;
}

SelectionResult random_select(std::size_t pool_size, double ratio, std::uint64_t seed) {
  const std::size_t m = selection_size(pool_size, ratio);
  std::vector<std::size_t> idx(pool_size);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, 0x72616e64));
  rng.shuffle(idx);
  idx.resize(m);
  return {Strategy::random, ratio, seed, std::move(idx), {}};
}

SelectionResult select_by_score(const std::vector<ScoredSample>& scored, double ratio,
                                Direction direction) {
  const std::size_t m = selection_size(scored.size(), ratio);
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const ScoredSample& x = scored[a];
    const ScoredSample& y = scored[b];
    const bool fx = std::isfinite(x.score), fy = std::isfinite(y.score);
    if (fx != fy) return fx;
    if (fx && x.score != y.score) {
      return direction == Direction::higher ? x.score > y.score : x.score < y.score;
    }
    return x.sample_ref < y.sample_ref;
  });
  SelectionResult r;
  r.strategy = scored.empty() ? Strategy::random : scored.front().strategy;
  r.ratio = ratio;
  for (std::size_t i = 0; i < m; ++i) r.selected.push_back(scored[order[i]].sample_ref);
  return r;
}

std::string format_scores(const std::vector<ScoredSample>& scores) {
  std::string out;
  for (const auto& s : scores) {
    out += fmt::format("idx={} score={} strategy={} fwd={}\n", s.sample_ref, records::f64(s.score),
                       to_string(s.strategy), s.forward_passes_used);
  }
  return out;
}

std::vector<ScoredSample> parse_scores(const std::string& text) {
  std::vector<ScoredSample> out;
  std::size_t lineno = 0;
  for (const auto& line : records::lines(text)) {
    ++lineno;
    if (line.empty()) continue;
    ScoredSample s;
    int seen = 0;
    for (const auto& [key, val] : records::split(line, "scores", lineno)) {
      if (key == "idx") {
        s.sample_ref = records::to_u64(val, "scores", lineno);
      } else if (key == "score") {
        s.score = records::to_f64(val, "scores", lineno);
      } else if (key == "strategy") {
        s.strategy = strategy_from_string(val);
      } else if (key == "fwd") {
        s.forward_passes_used = static_cast<std::uint32_t>(records::to_u64(val, "scores", lineno));
      } else {
        fail(ErrorKind::format, fmt::format("scores line {}: unknown key '{}'", lineno, key));
      }
      ++seen;
    }
    if (seen != 4) fail(ErrorKind::format, fmt::format("scores line {}: expected 4 fields", lineno));
    out.push_back(s);
  }
  return out;
}

std::string format_selection(const SelectionResult& sel) {
  std::string out = fmt::format("strategy={} ratio={} seed={}\n", to_string(sel.strategy),
                                records::f64(sel.ratio), sel.seed);
  for (std::size_t i : sel.selected) out += fmt::format("idx={}\n", i);
  return out;
}

SelectionResult parse_selection(const std::string& text) {
  const auto lines = records::lines(text);
  if (lines.empty()) fail(ErrorKind::format, "selection file has no header");
  SelectionResult r;
  int seen = 0;
  for (const auto& [key, val] : records::split(lines[0], "selection", 1)) {
    if (key == "strategy") {
      r.strategy = strategy_from_string(val);
    } else if (key == "ratio") {
      r.ratio = records::to_f64(val, "selection", 1);
    } else if (key == "seed") {
      r.seed = records::to_u64(val, "selection", 1);
    } else {
      fail(ErrorKind::format, fmt::format("selection header: unknown key '{}'", key));
    }
    ++seen;
  }
  if (seen != 3) fail(ErrorKind::format, "selection header needs strategy, ratio and seed");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = records::split(lines[i], "selection", i + 1);
    if (fields.size() != 1 || fields[0].first != "idx") {
      fail(ErrorKind::format, fmt::format("selection line {}: expected idx=<u64>", i + 1));
    }
    r.selected.push_back(records::to_u64(fields[0].second, "selection", i + 1));
  }
  return r;
}

}  // namespace igds
