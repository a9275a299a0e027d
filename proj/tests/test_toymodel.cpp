// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "igds/tasks.hpp"
#include "igds/toymodel.hpp"

using namespace igds;
using igds::test::random_tokens;
using igds::test::tiny_model_config;

namespace {

RealMatrix tap_matrix(const ForwardResult& r, std::size_t layer, std::size_t T, std::size_t d) {
  RealMatrix m(T, d);
  for (const auto& tap : r.taps) {
    if (tap.layer != layer) continue;
    std::copy(tap.state.values().begin(), tap.state.values().end(), m.row(tap.position).begin());
  }
  return m;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = tiny_model_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_model_config();
  c.vocab_size = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_model_config();
  c.max_seq_len = 1;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("forward taps: grid, no-tap identity, determinism, errors") {
  const ToyModel m = ToyModel::initialize(tiny_model_config());
  const std::vector<TokenId> toks{1, 5, 9};
  const std::vector<std::size_t> both{0, 1};
  const auto tapped = forward_with_taps(m, toks, both);
  REQUIRE(tapped.taps.size() == 6);
  std::size_t i = 0;
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t p = 0; p < 3; ++p, ++i) {
      CHECK(tapped.taps[i].layer == l);
      CHECK(tapped.taps[i].position == p);
      CHECK(tapped.taps[i].state.dim() == 8);
    }
  const auto plain = forward_with_taps(m, toks, {});
  CHECK(plain.taps.empty());
  CHECK(plain.logits == tapped.logits);
  CHECK(forward_with_taps(m, toks, {}).logits == plain.logits);
  const std::vector<std::size_t> bad{2};
  CHECK_THROWS_AS(forward_with_taps(m, toks, bad), Error);
  const std::vector<TokenId> too_long(17, 1);
  try {
    forward_with_taps(m, too_long, {});
    FAIL("expected a length error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::length);
  }
}

TEST_CASE("a residual tap is the value the next block consumes") {
  Rng rng(8);
  ModelConfig cfg = tiny_model_config();
  cfg.n_layers = 3;
  const ToyModel m = ToyModel::initialize(cfg);
  for (int trial = 0; trial < 10; ++trial) {
    const auto toks = random_tokens(2 + rng.below(10), 16, rng);
    const std::vector<std::size_t> layers{0, 1, 2};
    const auto r = forward_with_taps(m, toks, layers);
    for (std::size_t l = 0; l < 3; ++l) {
      const RealMatrix rest = forward_from_layer(m, tap_matrix(r, l, toks.size(), 8), l);
      CHECK(rest == r.logits);
    }
  }
}

TEST_CASE("generation: empty, deterministic, seeded sampling, overflow") {
  const ToyModel m = ToyModel::initialize(tiny_model_config());
  const std::vector<TokenId> prompt{1, 2, 3};
  CHECK(generate(m, prompt, 0, GenerationMode::make_greedy()).empty());
  const auto g1 = generate(m, prompt, 5, GenerationMode::make_greedy());
  CHECK(g1.size() == 5);
  CHECK(g1 == generate(m, prompt, 5, GenerationMode::make_greedy()));
  CHECK(generate(m, prompt, 5, GenerationMode::sample(1.0, 9)) ==
        generate(m, prompt, 5, GenerationMode::sample(1.0, 9)));
  // A freshly initialized model is close to uniform over 16 tokens, so two
  // seeds collide on 5 tokens with probability about 16^-5 per trial.
  int differing = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    differing += generate(m, prompt, 5, GenerationMode::sample(1.0, 2 * s)) !=
                 generate(m, prompt, 5, GenerationMode::sample(1.0, 2 * s + 1));
  }
  CHECK(differing >= 19);
  CHECK_THROWS_AS(generate(m, prompt, 14, GenerationMode::make_greedy()), Error);
}

TEST_CASE("zero interventions are bit-identical to plain forward and generation") {
  Rng rng(31);
  const ToyModel m = ToyModel::initialize(tiny_model_config());
  for (int trial = 0; trial < 20; ++trial) {
    const auto prompt = random_tokens(3 + rng.below(5), 16, rng);
    InterventionSpec spec;
    spec.layer = rng.below(2);
    spec.critical_pos = rng.below(prompt.size());
    spec.vector = igds::test::random_vector(8, rng);
    spec.scale = 0.0;
    const auto plain = forward_with_taps(m, prompt, {});
    CHECK(forward_with_taps(m, prompt, {}, &spec).logits == plain.logits);
    CHECK(generate_with_intervention(m, prompt, 4, GenerationMode::make_greedy(), spec) ==
          generate(m, prompt, 4, GenerationMode::make_greedy()));
    spec.scale = 3.0;
    spec.vector = RealVector(8, 0.0);
    CHECK(forward_with_taps(m, prompt, {}, &spec).logits == plain.logits);
    CHECK(generate_with_intervention(m, prompt, 4, GenerationMode::make_greedy(), spec) ==
          generate(m, prompt, 4, GenerationMode::make_greedy()));
  }
}

TEST_CASE("intervention positions and validation") {
  const ToyModel m = ToyModel::initialize(tiny_model_config());
  const std::vector<TokenId> prompt{1, 4, 7, 2, 9};
  InterventionSpec spec;
  spec.layer = 1;
  spec.vector = RealVector(8, 0.5);
  spec.critical_pos = 2;
  spec.position_policy = PositionPolicy::critical_only;
  const std::vector<std::size_t> top{1};
  const auto base = forward_with_taps(m, prompt, top);
  const auto edited = forward_with_taps(m, prompt, top, &spec);
  for (std::size_t p = 0; p < 5; ++p) {
    for (std::size_t i = 0; i < 8; ++i) {
      const double want = base.taps[p].state[i] + (p == 2 ? 0.5 : 0.0);
      CHECK(edited.taps[p].state[i] == doctest::Approx(want).epsilon(1e-14));
    }
  }
  spec.position_policy = PositionPolicy::all_from_critical;
  const auto all = forward_with_taps(m, prompt, top, &spec);
  for (std::size_t p = 0; p < 5; ++p) {
    CHECK(all.taps[p].state[0] == doctest::Approx(base.taps[p].state[0] + (p >= 2 ? 0.5 : 0.0)));
  }
  spec.layer = 2;
  CHECK_THROWS_AS(forward_with_taps(m, prompt, {}, &spec), Error);
  spec.layer = 0;
  spec.vector = RealVector(3, 1.0);
  CHECK_THROWS_AS(forward_with_taps(m, prompt, {}, &spec), Error);
}

TEST_CASE("a steering vector built from unembedding columns flips the greedy token") {
  const ToyModel m = ToyModel::initialize(tiny_model_config(7));
  const std::vector<TokenId> prompt{1, 3, 5, 7};
  const auto before = generate(m, prompt, 1, GenerationMode::make_greedy());
  const TokenId old_tok = before[0];
  const TokenId new_tok = (old_tok + 1) % 16;
  const auto& U = m.params.blocks[TransformerParams::unembed(2)].value;
  RealVector dir(8);
  for (std::size_t i = 0; i < 8; ++i) dir[i] = U(i, new_tok) - U(i, old_tok);
  // Scaled far past the measured logit gap, the edit dominates the final
  // layernorm input so the new token outranks the old one.
  const auto logits = forward_with_taps(m, prompt, {}).logits;
  const double gap = logits(3, old_tok) - logits(3, new_tok);
  InterventionSpec spec;
  spec.layer = 1;
  spec.vector = dir;
  spec.scale = 1e3 * (1.0 + gap);
  spec.critical_pos = 3;
  const auto after = generate_with_intervention(m, prompt, 1, GenerationMode::make_greedy(), spec);
  CHECK(after[0] != old_tok);
  const auto edited = forward_with_taps(m, prompt, {}, &spec).logits;
  CHECK(edited(3, new_tok) > edited(3, old_tok));
}

TEST_CASE("pretraining: no-op, degenerate corpus, alternating pattern") {
  ModelConfig cfg = tiny_model_config();
  cfg.vocab_size = 2;
  const ToyModel m = ToyModel::initialize(cfg);
  TrainConfig tc;
  tc.epochs = 0;
  const auto noop = train(m, {{0, 0, 0}}, tc);
  CHECK(noop.losses.empty());
  CHECK(noop.model.params.blocks[0].value == m.params.blocks[0].value);
  CHECK_THROWS_AS(train(m, {}, tc), Error);

  tc.epochs = 200;
  tc.batch_size = 4;
  tc.lr = 3e-3;
  tc.steps = 200;
  const std::vector<std::vector<TokenId>> constant(4, std::vector<TokenId>(8, 0));
  const auto c = train(m, constant, tc);
  CHECK(c.losses.back() < 0.05);
  CHECK(c.losses.back() < c.losses.front());

  const std::vector<std::vector<TokenId>> alternating{{0, 1, 0, 1, 0, 1, 0, 1}, {1, 0, 1, 0, 1, 0, 1, 0}};
  const std::vector<std::vector<TokenId>> one_phase(4, {0, 1, 0, 1, 0, 1, 0, 1});
  const auto a = train(m, one_phase, tc);
  CHECK(a.losses.size() == 200);
  CHECK(a.losses.back() < 0.1);
  const auto mixed = train(m, alternating, tc);
  CHECK(mixed.losses.back() < 0.1);
  CHECK(train(m, one_phase, tc).losses == a.losses);
}

TEST_CASE("grad_check over the transformer blocks") {
  Rng rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    ModelConfig cfg = tiny_model_config(static_cast<std::uint32_t>(100 + trial));
    cfg.d_model = 4;
    cfg.vocab_size = 6;
    ToyModel m = ToyModel::initialize(cfg);
    // Enlarge the weights so layernorm and attention operate off their
    // near-linear initial regime.
    for (auto& b : m.params.blocks)
      for (double& v : b.value.flat()) v += 0.3 * rng.normal();
    const auto inputs = random_tokens(5, 6, rng), labels = random_tokens(5, 6, rng);
    const std::vector<double> w{1, 0, 1, 0.5, 1};
    auto f = [&](bool with_grad) {
      m.params.zero_grad();
      return sequence_loss(m, inputs, labels, w, with_grad);
    };
    const auto rep = grad_check(f, igds::test::transformer_targets(m), 1e-5);
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("SFT masks prompt positions and matches the cross-entropy oracle") {
  Rng rng(12);
  const ToyModel m = ToyModel::initialize(tiny_model_config());
  for (int trial = 0; trial < 10; ++trial) {
    DataSample s;
    s.prompt = random_tokens(4, 16, rng);
    s.target = random_tokens(3, 16, rng);
    s.critical_pos = 3;
    std::vector<TokenId> seq = s.prompt;
    seq.insert(seq.end(), s.target.begin(), s.target.end());
    seq.pop_back();
    const auto logits = forward_with_taps(m, seq, {}).logits;
    RealMatrix rows(3, 16);
    for (std::size_t r = 0; r < 3; ++r)
      std::copy(logits.row(3 + r).begin(), logits.row(3 + r).end(), rows.row(r).begin());
    CHECK(target_loss(m, s) == doctest::Approx(cross_entropy(rows, s.target)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(sft(m, {}, TrainConfig{}), Error);
}

TEST_CASE("SFT: duplicated data gives the same full-batch step") {
  TaskSpec spec;
  spec.family = TaskFamily::cipher_translate;
  spec.content_len = 3;
  spec.vocab_size = vocab::kSize;
  ModelConfig cfg = tiny_model_config();
  cfg.vocab_size = vocab::kSize;
  const ToyModel big = ToyModel::initialize(cfg);
  const auto data = gen_task_data(spec, 4, 5);
  auto doubled = data;
  doubled.insert(doubled.end(), data.begin(), data.end());
  TrainConfig tc;
  tc.batch_size = 4;
  tc.steps = 1;
  tc.grad_clip = 0.0;
  const auto one = sft(big, data, tc);
  tc.batch_size = 8;
  const auto two = sft(big, doubled, tc);
  for (std::size_t b = 0; b < one.model.params.blocks.size(); ++b) {
    const auto& x = one.model.params.blocks[b].value.flat();
    const auto& y = two.model.params.blocks[b].value.flat();
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == doctest::Approx(y[i]).epsilon(1e-9));
  }
}

TEST_CASE("SFT on targets the model already predicts does not raise the loss") {
  ModelConfig cfg = tiny_model_config();
  cfg.vocab_size = vocab::kSize;
  const ToyModel m = ToyModel::initialize(cfg);
  std::vector<DataSample> data;
  Rng rng(3);
  for (int i = 0; i < 8; ++i) {
    DataSample s;
    s.prompt = random_tokens(4, 64, rng);
    s.critical_pos = 3;
    s.target = generate(m, s.prompt, 2, GenerationMode::make_greedy());
    data.push_back(s);
  }
  auto mean_loss = [&](const ToyModel& mm) {
    double t = 0;
    for (const auto& s : data) t += target_loss(mm, s);
    return t / static_cast<double>(data.size());
  };
  TrainConfig tc;
  tc.batch_size = 4;
  tc.lr = 1e-3;
  const auto after = sft(m, data, tc);
  CHECK(mean_loss(after.model) <= mean_loss(m));
}

TEST_CASE("SFT learns a cipher bijection") {
  TaskSpec spec;
  spec.family = TaskFamily::cipher_translate;
  ModelConfig cfg;
  cfg.seed = 4;
  const ToyModel m = ToyModel::initialize(cfg);
  const auto train_set = gen_task_data(spec, 256, 1);
  const auto held_out = gen_task_data(spec, 64, 2);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.epochs = 1000;
  tc.steps = 500;
  tc.lr = 1e-3;
  const auto tuned = sft(m, train_set, tc);
  CHECK(eval_exact(tuned.model, held_out) >= 0.9);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const ToyModel m = ToyModel::initialize(tiny_model_config());
  const auto bytes = encode_model(m);
  const ToyModel back = decode_model(bytes);
  CHECK(encode_model(back) == bytes);
  CHECK(back.config == m.config);
  const auto path = std::filesystem::temp_directory_path() / "igds_test_model.bin";
  save_model(back, path);
  CHECK(encode_model(load_model(path)) == bytes);
  std::filesystem::remove(path);
  auto broken = bytes;
  broken[0] = 'X';
  CHECK_THROWS_AS(decode_model(broken), Error);
  broken = bytes;
  broken.push_back(0);
  CHECK_THROWS_AS(decode_model(broken), Error);
}
