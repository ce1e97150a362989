#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "dlab/decoding.hpp"
#include "helpers.hpp"

using namespace dlab;
using dlab::testing::letters;
using dlab::testing::random_params;
using dlab::testing::TablePredictor;
using dlab::testing::tiny_config;

namespace {

std::vector<double> peaked(int vocab, TokenId at, double p) {
  std::vector<double> row(static_cast<std::size_t>(vocab), (1.0 - p) / (vocab - 2));
  row[0] = 0.0;  // mask
  row[static_cast<std::size_t>(at)] = p;
  return row;
}

std::vector<Finalization> by_step(std::vector<Candidate> c, DecodeMode mode, int s) {
  auto rng = derive_stream(0, {"step"});
  switch (mode) {
    case DecodeMode::neg_entropy: return step_neg_entropy(c, s, 0.0, 0, rng);
    case DecodeMode::margin: return step_margin(c, s, 0.0, 0, rng);
    default: return step_confidence(c, s, 0.0, 0, rng);
  }
}

std::vector<int> positions_of(const std::vector<Finalization>& f) {
  std::vector<int> out;
  for (const auto& x : f) {
    out.push_back(x.position);
  }
  return out;
}

void check_trace_invariants(const DecodeTrace& trace, int gen) {
  ASSERT_EQ(static_cast<int>(trace.records.size()), gen);
  std::set<int> seen;
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& r = trace.records[i];
    EXPECT_TRUE(seen.insert(r.position).second);
    EXPECT_GE(r.entropy, 0.0);
    EXPECT_GT(r.prob, 0.0);
    EXPECT_LE(r.prob, 1.0);
    EXPECT_EQ(r.order_index, static_cast<int>(i));
    if (i > 0) {
      EXPECT_GE(r.step, trace.records[i - 1].step);
    }
  }
}

DecodeResult run(const DenoiserParams& p, const Prompt& prompt, DecodeConfig cfg, std::uint64_t seed = 1) {
  auto rng = derive_stream(seed, {"decode-test"});
  return decode(p, prompt, cfg, letters(11), rng);
}

std::vector<TokenId> tokens_of(const DecodeResult& r) {
  const auto t = r.completion.tokens();
  return {t.begin(), t.end()};
}

const Prompt kPrompt{{2, 3, 4}};

}  // namespace

TEST(DecodeConfig, Validation) {
  DecodeConfig c;
  c.mode = DecodeMode::confidence;
  c.gen_budget = 4;
  c.block_size = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.block_size = 2;
  c.tokens_per_step = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.tokens_per_step = 1;
  EXPECT_NO_THROW(c.validate());
  c.mode = DecodeMode::ar;
  c.block_size = 99;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(parse_decode_mode("eb_parallel"), DecodeMode::eb_parallel);
  EXPECT_THROW(parse_decode_mode("fastest"), std::invalid_argument);
}

TEST(StepConfidence, SingleCandidateAlwaysFinalised) {
  const auto row = peaked(11, 4, 0.05);
  const auto f = by_step({{3, row}}, DecodeMode::confidence, 1);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].position, 3);
}

TEST(StepConfidence, TiesGoToLowerPosition) {
  const auto row = peaked(11, 4, 0.6);
  EXPECT_EQ(positions_of(by_step({{4, row}, {2, row}}, DecodeMode::confidence, 1)), std::vector<int>{2});
}

TEST(StepConfidence, KeepsTopS) {
  const auto a = peaked(11, 4, 0.3);
  const auto b = peaked(11, 5, 0.8);
  const auto c = peaked(11, 6, 0.6);
  EXPECT_EQ(positions_of(by_step({{0, a}, {1, b}, {2, c}}, DecodeMode::confidence, 2)), (std::vector<int>{1, 2}));
}

TEST(StepConfidence, SampledCandidateProbabilityIsTheKey) {
  // Position 1 has the larger top probability, so a max-probability key would
  // always pick it. Keyed on the sampled token, position 0 sometimes wins.
  std::vector<double> a(11, 0.0);
  a[2] = 0.45;
  a[3] = 0.55;
  auto b = peaked(11, 7, 0.6);
  auto rng = derive_stream(3, {"sampled-key"});
  int zero_wins = 0;
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<Candidate> c{{0, a}, {1, b}};
    const auto f = step_confidence(c, 1, 1.0, 0, rng);
    ASSERT_EQ(f.size(), 1u);
    zero_wins += f[0].position == 0 ? 1 : 0;
    EXPECT_DOUBLE_EQ(f[0].prob, (f[0].position == 0 ? a : b)[static_cast<std::size_t>(f[0].token)]);
  }
  EXPECT_GT(zero_wins, 0);
}

TEST(StepNegEntropyAndMargin, OneHotBeatsUniform) {
  std::vector<double> uniform(11, 0.1);
  uniform[0] = 0.0;
  std::vector<double> onehot(11, 0.0);
  onehot[5] = 1.0;
  for (auto mode : {DecodeMode::neg_entropy, DecodeMode::margin}) {
    EXPECT_EQ(positions_of(by_step({{0, uniform}, {1, onehot}}, mode, 1)), std::vector<int>{1});
  }
}

TEST(StepNegEntropyAndMargin, KeysDisagree) {
  const std::vector<double> a{0.0, 0.5, 0.5, 0.0};
  const std::vector<double> b{0.0, 0.6, 0.2, 0.2};
  EXPECT_NEAR(entropy(a), 0.693147, 1e-6);
  EXPECT_NEAR(entropy(b), 0.950271, 1e-6);
  EXPECT_NEAR(top2_margin(a), 0.0, 1e-15);
  EXPECT_NEAR(top2_margin(b), 0.4, 1e-15);
  EXPECT_EQ(positions_of(by_step({{0, a}, {1, b}}, DecodeMode::neg_entropy, 1)), std::vector<int>{0});
  EXPECT_EQ(positions_of(by_step({{0, a}, {1, b}}, DecodeMode::margin, 1)), std::vector<int>{1});
}

TEST(StepNegEntropyAndMargin, IdenticalDistributionsPickLowestIndex) {
  const auto row = peaked(11, 4, 0.5);
  for (auto mode : {DecodeMode::confidence, DecodeMode::neg_entropy, DecodeMode::margin}) {
    EXPECT_EQ(positions_of(by_step({{5, row}, {3, row}, {7, row}}, mode, 1)), std::vector<int>{3});
  }
}

TEST(StepEb, GammaZeroFinalisesExactlyOne) {
  const auto row = peaked(11, 4, 0.5);
  auto rng = derive_stream(0, {"eb"});
  std::vector<Candidate> c{{0, row}, {1, row}, {2, row}};
  EXPECT_EQ(step_eb(c, 0.0, 0.0, 0, rng).size(), 1u);
}

TEST(StepEb, PrefixSumThreshold) {
  // Distributions {1 - 2q, q, q} with q solved for entropies 0.1, 0.2 and 0.9.
  auto with_entropy = [](double h) {
    double lo = 1e-12, hi = 1.0 / 3.0;
    for (int i = 0; i < 200; ++i) {
      const double q = 0.5 * (lo + hi);
      const double e = -(1 - 2 * q) * std::log(1 - 2 * q) - 2 * q * std::log(q);
      (e < h ? lo : hi) = q;
    }
    return std::vector<double>{0.0, 1 - 2 * lo, lo, lo};
  };
  const auto a = with_entropy(0.1);
  const auto b = with_entropy(0.2);
  const auto c = with_entropy(0.9);
  EXPECT_NEAR(entropy(a), 0.1, 1e-9);
  EXPECT_NEAR(entropy(c), 0.9, 1e-9);
  auto rng = derive_stream(0, {"eb"});
  std::vector<Candidate> run{{0, a}, {1, b}, {2, c}};
  const auto f = step_eb(run, 0.5, 0.0, 0, rng);
  EXPECT_EQ(positions_of(f), (std::vector<int>{0, 1}));
}

TEST(StepEb, ZeroEntropyFinalisesWholeRun) {
  std::vector<double> onehot(11, 0.0);
  onehot[4] = 1.0;
  auto rng = derive_stream(0, {"eb"});
  std::vector<Candidate> run{{0, onehot}, {1, onehot}, {2, onehot}, {3, onehot}};
  EXPECT_EQ(step_eb(run, 0.0, 0.0, 0, rng).size(), 4u);
}

TEST(Decode, LookupPredictorConfidenceOrder) {
  TablePredictor pred(11, {peaked(11, 4, 0.9), peaked(11, 5, 0.5), peaked(11, 6, 0.99)});
  pred.offset = 1;
  DecodeConfig cfg;
  cfg.mode = DecodeMode::confidence;
  cfg.gen_budget = 3;
  cfg.block_size = 3;
  auto rng = derive_stream(0, {"lookup"});
  const auto r = decode(pred, Prompt{{2}}, cfg, letters(11), rng);
  ASSERT_EQ(r.trace.records.size(), 3u);
  EXPECT_EQ(r.trace.records[0].position, 2);
  EXPECT_EQ(r.trace.records[1].position, 0);
  EXPECT_EQ(r.trace.records[2].position, 1);
  EXPECT_EQ(r.trace.bypass_count(), 2);
  EXPECT_EQ(tokens_of(r), (std::vector<TokenId>{4, 5, 6}));
}

TEST(Decode, ArVisitsPositionsLeftToRight) {
  const auto p = random_params<float>(tiny_config(11, 16), 1);
  DecodeConfig cfg;
  cfg.gen_budget = 8;
  cfg.temperature = 1.0;
  const auto r = run(p, kPrompt, cfg);
  check_trace_invariants(r.trace, 8);
  for (int k = 0; k < 8; ++k) {
    EXPECT_EQ(r.trace.records[static_cast<std::size_t>(k)].position, k);
    EXPECT_EQ(r.trace.records[static_cast<std::size_t>(k)].order_index, k);
  }
  EXPECT_EQ(r.trace.bypass_count(), 0);
}

TEST(Decode, MaskNeverEmitted) {
  // A model that prefers [MASK] everywhere still has to emit real tokens.
  DenoiserParams p(tiny_config(11, 16));
  p.row(TensorIndex::final_bias(1))(0) = 1.0f;
  p.matrix(TensorIndex::head(1))(0, 0) = 50.0f;
  for (auto mode : {DecodeMode::ar, DecodeMode::confidence, DecodeMode::margin, DecodeMode::eb_parallel}) {
    DecodeConfig cfg;
    cfg.mode = mode;
    cfg.gen_budget = 6;
    cfg.block_size = 3;
    cfg.temperature = 1.0;
    const auto r = run(p, kPrompt, cfg);
    for (TokenId t : r.completion.tokens()) {
      EXPECT_NE(t, 0);
    }
  }
}

TEST(Decode, EveryModeSatisfiesTraceInvariants) {
  const auto p = random_params<float>(tiny_config(11, 16), 2);
  for (auto mode : {DecodeMode::ar, DecodeMode::confidence, DecodeMode::neg_entropy, DecodeMode::margin,
                    DecodeMode::eb_parallel}) {
    for (int s : {1, 2}) {
      DecodeConfig cfg;
      cfg.mode = mode;
      cfg.gen_budget = 8;
      cfg.block_size = 4;
      cfg.tokens_per_step = s;
      cfg.temperature = 0.8;
      cfg.eb_gamma = 1.5;
      const auto r = run(p, kPrompt, cfg, 3);
      check_trace_invariants(r.trace, 8);
      // Finalised tokens never change afterwards: the completion matches the trace.
      for (const auto& rec : r.trace.records) {
        EXPECT_EQ(r.completion.tokens()[static_cast<std::size_t>(rec.position)], rec.token);
      }
    }
  }
}

TEST(Decode, SemiAutoregressiveBlocks) {
  const auto p = random_params<float>(tiny_config(11, 16), 4);
  for (int block : {1, 2, 3, 4, 8}) {
    DecodeConfig cfg;
    cfg.mode = DecodeMode::confidence;
    cfg.gen_budget = 8;
    cfg.block_size = block;
    cfg.temperature = 0.7;
    const auto r = run(p, kPrompt, cfg, 5);
    int prev_block = 0;
    for (const auto& rec : r.trace.records) {
      const int b = rec.position / block;
      EXPECT_GE(b, prev_block);
      prev_block = b;
    }
  }
}

TEST(Decode, OrderEquivalences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = random_params<float>(tiny_config(11, 16), seed);
    DecodeConfig ar;
    ar.gen_budget = 8;
    const auto reference = tokens_of(run(p, kPrompt, ar));

    DecodeConfig conf = ar;
    conf.mode = DecodeMode::confidence;
    conf.block_size = 1;
    EXPECT_EQ(tokens_of(run(p, kPrompt, conf)), reference);

    DecodeConfig eb = ar;
    eb.mode = DecodeMode::eb_parallel;
    eb.eb_gamma = 0.0;
    const auto e = run(p, kPrompt, eb);
    EXPECT_EQ(tokens_of(e), reference);
    EXPECT_EQ(e.trace.steps, 8);
  }
}

TEST(Decode, GreedyIsDeterministicAcrossStreams) {
  const auto p = random_params<float>(tiny_config(11, 16), 6);
  DecodeConfig cfg;
  cfg.mode = DecodeMode::confidence;
  cfg.gen_budget = 8;
  cfg.block_size = 8;
  EXPECT_EQ(tokens_of(run(p, kPrompt, cfg, 1)), tokens_of(run(p, kPrompt, cfg, 2)));
}

TEST(Decode, EbTokensPerStepAccounting) {
  const auto p = random_params<float>(tiny_config(11, 16), 7);
  DecodeConfig cfg;
  cfg.mode = DecodeMode::eb_parallel;
  cfg.gen_budget = 8;
  cfg.eb_gamma = 5.0;
  const auto r = run(p, kPrompt, cfg);
  EXPECT_LT(r.trace.steps, 8);
  EXPECT_DOUBLE_EQ(r.trace.tokens_per_step(), 8.0 / r.trace.steps);
}

TEST(Decode, RejectsOverlongPrompt) {
  const auto p = random_params<float>(tiny_config(11, 8), 7);
  DecodeConfig cfg;
  cfg.gen_budget = 6;
  EXPECT_THROW(run(p, kPrompt, cfg), std::length_error);
}

TEST(DecodeTrace, BypassDefinition) {
  DecodeTrace t;
  // steps: {2}, {0}, {1, 3}
  t.records = {{0, 2, 5, 0, 1, 0}, {1, 0, 5, 0, 1, 1}, {2, 1, 5, 0, 1, 2}, {2, 3, 5, 0, 1, 3}};
  t.steps = 3;
  EXPECT_EQ(t.bypassed(), (std::vector<bool>{false, true, true, false}));
  // Simultaneous finalisation is not a bypass.
  DecodeTrace same;
  same.records = {{0, 1, 5, 0, 1, 0}, {0, 0, 5, 0, 1, 1}};
  same.steps = 1;
  EXPECT_EQ(same.bypass_count(), 0);
}
