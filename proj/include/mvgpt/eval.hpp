#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvgpt/discrete.hpp"
#include "mvgpt/model.hpp"
#include "mvgpt/tokenizer.hpp"

namespace mvgpt {

inline constexpr double kZ95 = 1.96;

/// Inverse standard normal CDF via a rational approximation, |error| < 4.5e-4.
double normal_quantile(double p);

/// Min-max scaling fitted per class on the truths and applied to both sides,
/// then the MSE over all pooled pairs. Classes whose truths are constant are
/// dropped and reported through `excluded`. Throws ValidationError when the
/// input is empty, misaligned, or nothing remains.
double mse_scaled(std::span<const ClassId> classes, std::span<const double> predictions,
                  std::span<const double> truths, std::vector<ClassId>* excluded = nullptr);

struct QQPoint {
  double theoretical = 0.0;
  double sample = 0.0;
};

/// Sorted standardized residuals against Hazen plotting positions (i - 0.5)/n.
std::vector<QQPoint> qq_points(std::span<const double> truths, std::span<const double> mus,
                               std::span<const double> sigmas);

/// Share of truths with |y - mu| <= 1.96 sigma.
double coverage_fraction(std::span<const double> truths, std::span<const double> mus,
                         std::span<const double> sigmas);

/// Teacher-forced prediction of one target token.
struct PositionPrediction {
  ClassId target_class = 0;     // continuous vocabulary
  ClassId predicted_class = 0;  // argmax, continuous vocabulary
  bool numeric = false;
  // Numeric targets only, conditioned on the true class.
  double truth_raw = 0.0, point_raw = 0.0;
  double truth_norm = 0.0, point_norm = 0.0;
  bool covered = false;     // truth inside the central 95% interval
  std::optional<double> z;  // standardized residual (Gaussian heads only)
};

/// Predictions for every target of every sequence. Each target is predicted
/// once; later windows keep at least half a context of history.
std::vector<PositionPrediction> teacher_forced_predictions(const Transformer<float>& model,
                                                           const Vocabulary& vocab,
                                                           std::span<const TokenSequence> seqs);

/// Same for a binned model; `seqs` are continuous sequences. The point value is
/// the representative of the most likely bin of the true class, and the
/// interval spans the bins holding the central 95% of that class's bin mass.
std::vector<PositionPrediction> teacher_forced_predictions(const Transformer<float>& model,
                                                           const DiscreteCodec& codec,
                                                           std::span<const TokenSequence> seqs);

struct EvalReport {
  std::optional<double> value_mse;
  std::optional<double> time_mse;
  std::map<std::string, double> coverage_95;
  double class_accuracy = 0.0;
  std::optional<double> value_mse_given_correct_class;
  std::vector<QQPoint> qq_points;
  std::size_t n_predictions = 0;
  std::vector<std::string> warnings;
};

/// value_mse and time_mse share one pipeline (mse_scaled on raw units) and
/// differ only in the class filter. QQ points pool all non-time numeric targets.
EvalReport summarize(const Vocabulary& vocab, std::span<const PositionPrediction> preds);

/// CSV `metric,class,value`.
void write_report_csv(std::ostream& out, const EvalReport& report);
/// CSV `rank,theoretical,sample`.
void write_qq_csv(std::ostream& out, std::span<const QQPoint> points);

}  // namespace mvgpt
