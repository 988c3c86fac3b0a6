#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mvgpt/error.hpp"
#include "mvgpt/model.hpp"

using namespace mvgpt;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_e = 16;
  c.n_head = 2;
  c.n_layer = 2;
  c.context = 12;
  c.d_c = 5;
  c.value_map_hidden = 8;
  c.seed = 7;
  return c;
}

std::vector<bool> small_mask() { return {true, false, true, false, true}; }

std::vector<Token> sample_tokens() {
  return {{0, 0.3}, {1, std::nullopt}, {2, -1.2}, {4, 0.5}, {3, std::nullopt}, {0, 2.0}};
}

ModelInput single(const std::vector<Token>& toks, std::vector<ClassId>& cls,
                  std::vector<double>& vals) {
  cls.clear();
  vals.clear();
  for (const auto& t : toks) {
    cls.push_back(t.class_id);
    vals.push_back(t.value.value_or(0.0));
  }
  return {1, toks.size(), cls, vals};
}

}  // namespace

TEST(ModelConfig, Validation) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.n_head = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_config();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_config();
  EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);
}

TEST(Transformer, ParameterCountMatchesShapes) {
  for (std::size_t layers : {1, 2, 4}) {
    auto c = small_config();
    c.n_layer = layers;
    const std::size_t d = c.d_e, h = c.value_map_hidden, dc = c.d_c;
    // Hand count: embeddings, value map, blocks, final norm, heads.
    const std::size_t expected = dc * d + c.context * d + (h + h + h * d + d) +
                                 layers * (12 * d * d + 13 * d) + 2 * d + (d * dc + dc) +
                                 (d * 2 * dc + 2 * dc);
    EXPECT_EQ(analytic_param_count(c), expected);
    Transformer<float> m(c, small_mask());
    EXPECT_EQ(m.num_params(), expected);
  }
}

TEST(Transformer, InitIsSeededAndDecayOnlyOnMatrices) {
  Transformer<float> a(small_config(), small_mask()), b(small_config(), small_mask());
  a.init_params();
  b.init_params();
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  auto c2 = small_config();
  c2.seed = 8;
  Transformer<float> d(c2, small_mask());
  d.init_params();
  EXPECT_FALSE(std::equal(a.params().begin(), a.params().end(), d.params().begin()));
  for (const auto& t : a.layout().tensors()) {
    const bool is_bias_or_norm = t.shape.size() == 1;
    const bool is_embedding = t.name.find("embeddings") != std::string::npos;
    if (is_bias_or_norm || is_embedding) EXPECT_FALSE(t.decay) << t.name;
  }
  EXPECT_TRUE(a.layout().at("blocks.0.attn.w").decay);
}

TEST(Transformer, PredictionsAreDistributions) {
  Transformer<double> m(small_config(), small_mask());
  m.init_params();
  const auto toks = sample_tokens();
  const auto preds = m.predict(toks);
  ASSERT_EQ(preds.size(), toks.size());
  for (const auto& p : preds) {
    EXPECT_NEAR(std::accumulate(p.class_probs.begin(), p.class_probs.end(), 0.0), 1.0, 1e-12);
    for (double s : p.sigma) EXPECT_GE(s, kSigmaFloor);
  }
  const auto fixed = m.predict(toks, 0.1);
  for (const auto& p : fixed) {
    for (double s : p.sigma) EXPECT_EQ(s, 0.1);
  }
}

TEST(Transformer, Causality) {
  Transformer<double> m(small_config(), small_mask());
  m.init_params();
  auto toks = sample_tokens();
  const auto base = m.predict(toks);
  toks.back() = {2, -3.0};
  toks[4] = {4, 1.7};
  const auto changed = m.predict(toks);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_DOUBLE_EQ(base[i].class_probs[c], changed[i].class_probs[c]);
      EXPECT_DOUBLE_EQ(base[i].mu[c], changed[i].mu[c]);
    }
  }
  EXPECT_NE(base[5].class_probs[0], changed[5].class_probs[0]);
}

TEST(Transformer, ValueEntersOnlyNumericClasses) {
  Transformer<double> m(small_config(), small_mask());
  m.init_params();
  const auto a = m.embed_token({1, std::nullopt}, 2);
  const auto b = m.embed_token({1, 5.0}, 2);  // value ignored for a categorical class
  EXPECT_EQ(a, b);
  const auto c = m.embed_token({0, 0.0}, 2);
  const auto d = m.embed_token({0, 1.0}, 2);
  EXPECT_NE(c, d);
}

TEST(Transformer, BatchedRowsMatchSingleRows) {
  Transformer<float> m(small_config(), small_mask());
  m.init_params();
  const auto toks = sample_tokens();
  std::vector<ClassId> cls;
  std::vector<double> vals;
  Workspace<float> ws1;
  m.forward(single(toks, cls, vals), ws1);

  // Row 0 is the sequence; row 1 is a shorter sequence right-padded with class 0.
  std::vector<ClassId> bcls(cls);
  std::vector<double> bvals(vals);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    bcls.push_back(i < 3 ? cls[i] : 0);
    bvals.push_back(i < 3 ? vals[i] : 0.0);
  }
  Workspace<float> ws2;
  m.forward({2, toks.size(), bcls, bvals}, ws2);
  const std::size_t dc = 5;
  for (std::size_t i = 0; i < toks.size() * dc; ++i) {
    EXPECT_NEAR(ws1.logits[i], ws2.logits[i], 1e-5);
  }
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t c = 0; c < dc; ++c) {
      EXPECT_NEAR(ws2.logits[(toks.size() + t) * dc + c], ws1.logits[t * dc + c], 1e-5);
    }
  }
}

TEST(Transformer, DropoutOnlyInTrainMode) {
  auto cfg = small_config();
  cfg.dropout = 0.3;
  Transformer<float> m(cfg, small_mask());
  m.init_params();
  const auto toks = sample_tokens();
  std::vector<ClassId> cls;
  std::vector<double> vals;
  const auto in = single(toks, cls, vals);
  Workspace<float> a, b, c;
  std::mt19937_64 rng(1);
  m.forward(in, a);
  m.forward(in, b, false, &rng);
  EXPECT_EQ(a.logits, b.logits);
  m.forward(in, c, true, &rng);
  EXPECT_NE(a.logits, c.logits);
}

TEST(Transformer, RejectsBadInput) {
  Transformer<float> m(small_config(), small_mask());
  m.init_params();
  std::vector<Token> too_long(13, Token{1, std::nullopt});
  EXPECT_THROW(m.predict(too_long), ValidationError);
  std::vector<Token> bad_class{{9, std::nullopt}};
  EXPECT_THROW(m.predict(bad_class), ValidationError);
  EXPECT_THROW(Transformer<float>(small_config(), {true, false}), ValidationError);
}
