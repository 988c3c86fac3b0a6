#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "mvgpt/datagen.hpp"
#include "mvgpt/error.hpp"
#include "mvgpt/tokenizer.hpp"

using namespace mvgpt;

namespace {

std::map<std::string, std::vector<double>> by_sequence(const std::vector<EventRecord>& recs) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& r : recs) out[r.seq_id].push_back(std::get<double>(r.raw_value));
  return out;
}

std::string csv(const std::vector<EventRecord>& recs) {
  std::ostringstream os;
  write_records_csv(os, recs);
  return os.str();
}

}  // namespace

TEST(Oscillator, UndampedCosineBound) {
  OscillatorSpec s;
  s.n_points = 400;
  const auto d = gen_oscillator_dataset({s}, default_oscillator_holdout(), 0);
  ASSERT_EQ(d.train.size(), 400u);
  EXPECT_DOUBLE_EQ(std::get<double>(d.train.front().raw_value), 1.0);
  for (const auto& r : d.train) EXPECT_LE(std::abs(std::get<double>(r.raw_value)), 1.0);
}

TEST(Oscillator, DampingEnvelope) {
  for (const auto& s : default_oscillator_family()) {
    const auto d = gen_oscillator_dataset({s}, default_oscillator_holdout(), 0);
    for (const auto& r : d.train) {
      EXPECT_LE(std::abs(std::get<double>(r.raw_value)),
                std::abs(s.amplitude) * std::exp(-s.damping * r.time) + 1e-15);
    }
  }
}

TEST(Oscillator, PhaseShiftedTrajectoriesCross) {
  OscillatorSpec a, b;
  b.phase = std::numbers::pi / 2;
  const auto d = gen_oscillator_dataset({a, b}, default_oscillator_holdout(), 0);
  const auto seqs = by_sequence(d.train);
  const auto& x1 = seqs.at("osc000");
  const auto& x2 = seqs.at("osc001");
  bool crossed = false;
  for (std::size_t k = 0; k + 1 < x1.size(); ++k) {
    const double s0 = x1[k] - x2[k], s1 = x1[k + 1] - x2[k + 1];
    crossed = crossed || (s0 > 0) != (s1 > 0);
  }
  EXPECT_TRUE(crossed);
}

TEST(Oscillator, DefaultFamilyShapeAndHoldout) {
  const auto fam = default_oscillator_family();
  EXPECT_EQ(fam.size(), 18u);
  const auto d = gen_oscillator_dataset(fam, default_oscillator_holdout(), 7);
  const auto seqs = by_sequence(d.train);
  EXPECT_EQ(seqs.size(), 18u);
  for (const auto& [id, xs] : seqs) EXPECT_EQ(xs.size(), 100u) << id;
  EXPECT_EQ(d.holdout.size(), 100u);
  EXPECT_EQ(d.holdout.front().seq_id, "holdout");
  for (const auto& r : d.train) EXPECT_EQ(r.class_name, "x");
  EXPECT_DOUBLE_EQ(d.train[1].time - d.train[0].time, 0.25);
}

TEST(Oscillator, DeterministicAndDuplicateHoldoutRejected) {
  auto fam = default_oscillator_family();
  for (auto& s : fam) s.noise_std = 0.05;
  const auto a = gen_oscillator_dataset(fam, default_oscillator_holdout(), 3);
  const auto b = gen_oscillator_dataset(fam, default_oscillator_holdout(), 3);
  const auto c = gen_oscillator_dataset(fam, default_oscillator_holdout(), 4);
  EXPECT_EQ(csv(a.train), csv(b.train));
  EXPECT_NE(csv(a.train), csv(c.train));
  EXPECT_THROW(gen_oscillator_dataset(fam, fam[2], 3), ValidationError);
  OscillatorSpec bad;
  bad.omega = 0.0;
  EXPECT_THROW(gen_oscillator_dataset({bad}, default_oscillator_holdout(), 0), ValidationError);
}

TEST(Calibration, InnovationStdWithinOnePercent) {
  CalibrationSpec s;
  s.n_sequences = 1000;
  s.length = 101;
  s.noise_std = 0.7;
  s.rho = 0.8;
  const auto recs = gen_calibration_dataset(s, 21);
  double ss = 0.0, sum = 0.0;
  std::size_t n = 0;
  for (const auto& [id, ys] : by_sequence(recs)) {
    ASSERT_EQ(ys.size(), 101u);
    for (std::size_t k = 1; k < ys.size(); ++k) {
      const double e = ys[k] - s.rho * ys[k - 1];
      sum += e;
      ss += e * e;
      ++n;
    }
  }
  ASSERT_EQ(n, 100000u);
  const double mean = sum / n;
  const double sd = std::sqrt((ss - n * mean * mean) / (n - 1));
  EXPECT_NEAR(sd, s.noise_std, 0.01 * s.noise_std);
}

TEST(Calibration, ValidationAndDeterminism) {
  CalibrationSpec s;
  s.noise_std = 0.0;
  EXPECT_THROW(gen_calibration_dataset(s, 1), ValidationError);
  s = {};
  s.n_sequences = 3;
  s.length = 10;
  EXPECT_EQ(csv(gen_calibration_dataset(s, 5)), csv(gen_calibration_dataset(s, 5)));
  const auto recs = gen_calibration_dataset(s, 5);
  EXPECT_EQ(recs.size(), 30u);
  EXPECT_EQ(recs.front().seq_id, "ar0000");
  EXPECT_EQ(recs.front().class_name, "y");
}
