#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mvgpt/error.hpp"
#include "mvgpt/training.hpp"

using namespace mvgpt;

namespace {

TrainConfig schedule_cfg() {
  TrainConfig c;
  c.lr_max = 3e-3;
  c.min_lr = 2e-4;
  c.warmup_steps = 40;
  c.max_steps = 240;
  return c;
}

// All-categorical vocabulary with `n` classes plus the reserved time class.
Vocabulary categorical_vocab(std::size_t n) {
  std::vector<ClassSpec> classes;
  for (std::size_t i = 0; i < n; ++i) {
    classes.push_back({i, "c=" + std::to_string(i), ClassKind::categorical, Identity{},
                       ClassOrigin{"c", std::to_string(i)}});
  }
  classes.push_back({n, "time", ClassKind::numeric, ZScore{1, 1}, std::nullopt});
  return Vocabulary::from_classes(std::move(classes), n);
}

ModelConfig tiny_config(std::size_t d_c, std::size_t context) {
  ModelConfig m;
  m.d_e = 32;
  m.n_head = 2;
  m.n_layer = 1;
  m.context = context;
  m.d_c = d_c;
  m.value_map_hidden = 8;
  return m;
}

TokenSequence random_categorical(std::size_t len, std::size_t n_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n_classes - 1);
  TokenSequence s{"s" + std::to_string(seed), {}, 0.0};
  for (std::size_t i = 0; i < len; ++i) s.tokens.push_back({pick(rng), std::nullopt});
  return s;
}

// Numeric sequences: class 0 values alternating with time tokens.
std::vector<TokenSequence> numeric_seqs(std::size_t n, std::size_t len) {
  std::vector<TokenSequence> out;
  for (std::size_t s = 0; s < n; ++s) {
    TokenSequence seq{"n" + std::to_string(s), {}, 0.0};
    for (std::size_t i = 0; i < len; ++i) {
      seq.tokens.push_back({0, std::sin(0.3 * static_cast<double>(i + s))});
      seq.tokens.push_back({1, 0.0});
    }
    out.push_back(seq);
  }
  return out;
}

}  // namespace

TEST(LrSchedule, EndpointsAndMidpoint) {
  const auto c = schedule_cfg();
  EXPECT_DOUBLE_EQ(lr_schedule(0, c), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(20, c), c.lr_max / 2);
  EXPECT_DOUBLE_EQ(lr_schedule(c.warmup_steps, c), c.lr_max);
  EXPECT_NEAR(lr_schedule(c.warmup_steps + (c.max_steps - c.warmup_steps) / 2, c),
              (c.lr_max + c.min_lr) / 2, 1e-15);
  EXPECT_DOUBLE_EQ(lr_schedule(c.max_steps, c), c.min_lr);
  EXPECT_DOUBLE_EQ(lr_schedule(10 * c.max_steps, c), c.min_lr);
  for (std::size_t s = c.warmup_steps; s < c.max_steps; ++s) {
    EXPECT_GE(lr_schedule(s, c), lr_schedule(s + 1, c));
  }
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate(128));
  auto bad = c;
  bad.warmup_steps = bad.max_steps;
  EXPECT_THROW(bad.validate(128), ValidationError);
  bad = c;
  bad.batch_tokens = 64;
  EXPECT_THROW(bad.validate(128), ValidationError);
  bad = c;
  bad.lr_max = -1;
  EXPECT_THROW(bad.validate(128), ValidationError);
  c.fixed_sigma = 0.5;
  const auto back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(MakeWindows, ShortAndLongSequences) {
  std::vector<TokenSequence> seqs{random_categorical(1, 3, 1), random_categorical(5, 3, 2),
                                  random_categorical(30, 3, 3)};
  const auto w = make_windows(seqs, 8);
  // Length 1 is skipped; length 5 fits; length 30 uses span 9 and stride 4.
  ASSERT_GE(w.size(), 2u);
  EXPECT_EQ(w[0].seq, 1u);
  EXPECT_EQ(w[0].length, 5u);
  std::vector<bool> covered(30, false);
  for (std::size_t i = 1; i < w.size(); ++i) {
    EXPECT_EQ(w[i].seq, 2u);
    EXPECT_EQ(w[i].length, 9u);
    if (i > 1) EXPECT_LE(w[i].start - w[i - 1].start, 4u);
    for (std::size_t k = 0; k < w[i].length; ++k) covered[w[i].start + k] = true;
  }
  EXPECT_EQ(w.back().start + w.back().length, 30u);
  for (bool c : covered) EXPECT_TRUE(c);
}

TEST(AdamW, ZeroGradientWithoutDecayIsNoOp) {
  const auto vocab = categorical_vocab(3);
  Transformer<float> m(tiny_config(vocab.size(), 8), vocab.numeric_mask());
  m.init_params();
  const std::vector<float> before(m.params().begin(), m.params().end());
  AdamW opt(m.layout(), 0.0);
  const std::vector<float> zero(m.num_params(), 0.0f);
  for (int i = 0; i < 5; ++i) opt.step(m.params(), zero, 1e-2);
  EXPECT_EQ(std::vector<float>(m.params().begin(), m.params().end()), before);
}

TEST(AdamW, DecayOnlyTouchesFlaggedTensors) {
  const auto vocab = categorical_vocab(3);
  Transformer<float> m(tiny_config(vocab.size(), 8), vocab.numeric_mask());
  m.init_params();
  const std::vector<float> before(m.params().begin(), m.params().end());
  AdamW opt(m.layout(), 0.5);
  const std::vector<float> zero(m.num_params(), 0.0f);
  opt.step(m.params(), zero, 0.1);
  for (const auto& t : m.layout().tensors()) {
    for (std::size_t i = t.offset; i < t.offset + t.size; ++i) {
      const float expect = t.decay ? static_cast<float>(before[i] * (1.0 - 0.1 * 0.5)) : before[i];
      ASSERT_FLOAT_EQ(m.params()[i], expect) << t.name;
    }
  }
}

TEST(ClipGradNorm, BoundsGlobalNorm) {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> g(0.0f, 3.0f);
  std::vector<float> grads(1000);
  for (auto& x : grads) x = g(rng);
  const double before = clip_grad_norm(grads, 1.0);
  EXPECT_GT(before, 1.0);
  double ss = 0.0;
  for (float x : grads) ss += static_cast<double>(x) * x;
  EXPECT_LE(std::sqrt(ss), 1.0 + 1e-6);

  std::vector<float> small{0.1f, 0.2f};
  clip_grad_norm(small, 1.0);
  EXPECT_EQ(small, (std::vector<float>{0.1f, 0.2f}));
  std::vector<float> off{30.0f, 40.0f};
  EXPECT_DOUBLE_EQ(clip_grad_norm(off, 0.0), 50.0);
  EXPECT_EQ(off, (std::vector<float>{30.0f, 40.0f}));
}

TEST(Train, MemorizesOneSequence) {
  const std::size_t n_classes = 4;
  const auto vocab = categorical_vocab(n_classes);
  const std::vector<TokenSequence> seqs{random_categorical(32, n_classes, 11)};
  Transformer<float> m(tiny_config(vocab.size(), 32), vocab.numeric_mask());
  m.init_params();
  TrainConfig c;
  c.max_steps = 2000;
  c.warmup_steps = 50;
  c.batch_tokens = 32;
  c.lr_max = 3e-3;
  c.min_lr = 3e-4;
  c.weight_decay = 0.0;
  c.eval_interval = 100;
  c.patience = 0;
  const double initial = evaluate_loss(m, seqs, {}).total;
  const auto r = train(m, seqs, {}, c);
  const double final_loss = evaluate_loss(m, seqs, {}).total;
  // The sequence is a deterministic function of position, so the floor is 0.
  EXPECT_LE(final_loss, 0.1 * initial) << "initial " << initial;
  EXPECT_NEAR(final_loss, r.best_val_loss, 1e-9);
}

TEST(Train, CategoricalValueLossIsZeroEveryStep) {
  const auto vocab = categorical_vocab(3);
  const std::vector<TokenSequence> seqs{random_categorical(20, 3, 1), random_categorical(9, 3, 2)};
  Transformer<float> m(tiny_config(vocab.size(), 16), vocab.numeric_mask());
  m.init_params();
  TrainConfig c;
  c.max_steps = 30;
  c.warmup_steps = 5;
  c.batch_tokens = 32;
  c.eval_interval = 10;
  c.value_weight = 0.0;
  const auto r = train(m, seqs, {}, c);
  for (const auto& rec : r.history) {
    EXPECT_EQ(rec.train.value_loss, 0.0);
    if (rec.val) EXPECT_EQ(rec.val->value_loss, 0.0);
  }
}

TEST(Train, SameSeedSameHistoryAndBestIsMinimum) {
  const std::vector<bool> mask{true, true};
  const auto seqs = numeric_seqs(3, 40);
  TrainConfig c;
  c.max_steps = 60;
  c.warmup_steps = 10;
  c.batch_tokens = 64;
  c.eval_interval = 7;
  c.patience = 0;
  auto run = [&] {
    Transformer<float> m(tiny_config(2, 32), mask);
    m.init_params();
    auto r = train(m, seqs, {}, c);
    std::ostringstream os;
    write_loss_csv(os, r.history);
    return std::make_pair(r, os.str());
  };
  const auto [a, csv_a] = run();
  const auto [b, csv_b] = run();
  EXPECT_EQ(csv_a, csv_b);
  EXPECT_EQ(a.best_params, b.best_params);
  double min_val = INFINITY;
  std::size_t evals = 0;
  for (const auto& rec : a.history) {
    if (!rec.val) continue;
    ++evals;
    min_val = std::min(min_val, rec.val->total);
  }
  EXPECT_EQ(evals, 60u / 7u + 1u);  // every 7th step plus the last
  EXPECT_DOUBLE_EQ(a.best_val_loss, min_val);
  EXPECT_EQ(csv_a.substr(0, csv_a.find('\n')),
            "step,lr,grad_norm,train_class,train_value,train_total,val_class,val_value,val_total");
}

TEST(Train, EarlyStopsAfterPatience) {
  const std::vector<bool> mask{true, true};
  const auto seqs = numeric_seqs(2, 20);
  TrainConfig c;
  c.max_steps = 400;
  c.warmup_steps = 1;
  c.batch_tokens = 32;
  c.eval_interval = 1;
  c.patience = 1;
  c.lr_max = 0.0;  // no progress, so the second evaluation cannot improve
  c.min_lr = 0.0;
  Transformer<float> m(tiny_config(2, 16), mask);
  m.init_params();
  const auto r = train(m, seqs, {}, c);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.steps_run, 2u);
}

TEST(Train, RejectsEmptyTrainingSet) {
  const std::vector<bool> mask{true, true};
  Transformer<float> m(tiny_config(2, 16), mask);
  m.init_params();
  const std::vector<TokenSequence> seqs{TokenSequence{"x", {{0, 0.0}}, 0.0}};
  TrainConfig c;
  c.batch_tokens = 16;
  c.warmup_steps = 1;
  c.max_steps = 3;
  EXPECT_THROW(train(m, seqs, {}, c), ValidationError);
}
