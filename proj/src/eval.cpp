#include "mvgpt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include "mvgpt/error.hpp"

namespace mvgpt {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("normal quantile needs p in (0, 1)");
  constexpr double c0 = 2.515517, c1 = 0.802853, c2 = 0.010328;
  constexpr double d1 = 1.432788, d2 = 0.189269, d3 = 0.001308;
  const double q = p < 0.5 ? p : 1.0 - p;
  const double t = std::sqrt(-2.0 * std::log(q));
  const double x = t - (c0 + c1 * t + c2 * t * t) / (1.0 + d1 * t + d2 * t * t + d3 * t * t * t);
  return p < 0.5 ? -x : x;
}

double mse_scaled(std::span<const ClassId> classes, std::span<const double> predictions,
                  std::span<const double> truths, std::vector<ClassId>* excluded) {
  if (classes.size() != predictions.size() || classes.size() != truths.size()) {
    throw ValidationError("mse_scaled inputs are misaligned");
  }
  if (classes.empty()) throw ValidationError("mse_scaled needs at least one pair");
  std::map<ClassId, std::pair<double, double>> range;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    auto [it, fresh] = range.try_emplace(classes[i], truths[i], truths[i]);
    if (!fresh) {
      it->second.first = std::min(it->second.first, truths[i]);
      it->second.second = std::max(it->second.second, truths[i]);
    }
  }
  if (excluded) excluded->clear();
  for (const auto& [c, r] : range) {
    if (!(r.second > r.first) && excluded) excluded->push_back(c);
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto [lo, hi] = range.at(classes[i]);
    if (!(hi > lo)) continue;
    const double d = (predictions[i] - truths[i]) / (hi - lo);
    sum += d * d;
    ++n;
  }
  if (n == 0) throw ValidationError("every class has constant truth values; MSE undefined");
  return sum / static_cast<double>(n);
}

std::vector<QQPoint> qq_points(std::span<const double> truths, std::span<const double> mus,
                               std::span<const double> sigmas) {
  if (truths.size() != mus.size() || truths.size() != sigmas.size()) {
    throw ValidationError("qq_points inputs are misaligned");
  }
  const std::size_t n = truths.size();
  if (n < 2) throw ValidationError("qq_points needs at least two values");
  std::vector<double> z(n);
  std::string bad;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sigmas[i] > 0.0)) throw ValidationError("qq_points needs positive sigmas");
    z[i] = (truths[i] - mus[i]) / sigmas[i];
    if (!std::isfinite(z[i])) bad += (bad.empty() ? "" : " ") + std::to_string(i);
  }
  if (!bad.empty()) throw ValidationError("non-finite standardized residuals at indices " + bad);
  std::sort(z.begin(), z.end());
  std::vector<QQPoint> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = {normal_quantile((static_cast<double>(i) + 0.5) / static_cast<double>(n)), z[i]};
  }
  return out;
}

double coverage_fraction(std::span<const double> truths, std::span<const double> mus,
                         std::span<const double> sigmas) {
  if (truths.size() != mus.size() || truths.size() != sigmas.size()) {
    throw ValidationError("coverage inputs are misaligned");
  }
  if (truths.empty()) throw ValidationError("coverage needs at least one value");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (!(sigmas[i] > 0.0)) throw ValidationError("coverage needs positive sigmas");
    hit += std::abs(truths[i] - mus[i]) <= kZ95 * sigmas[i];
  }
  return static_cast<double>(hit) / static_cast<double>(truths.size());
}

namespace {

// Inverse normalization that saturates instead of failing when a predicted
// logistic value leaves the image of the unit interval.
double to_raw(double v, const ClassSpec& spec) {
  if (const auto* l = std::get_if<Logistic>(&spec.norm)) {
    const double p = std::clamp(l->mean + l->std * v, 1e-12, 1.0 - 1e-12);
    return l->center + l->scale * std::log(p / (1.0 - p));
  }
  return normalize_value(v, spec, Direction::inverse);
}

// Calls fn(row, target_index) for every target of `toks`. Windows start on the
// training chunk grid (multiples of (context + 1) / 2), each as early as still
// reaches the next unscored target.
template <class Fn>
void for_each_target(const Transformer<float>& model, std::span<const Token> toks,
                     Workspace<float>& ws, Fn&& fn) {
  const std::size_t n = toks.size();
  const std::size_t context = model.config().context;
  const std::size_t stride = std::max<std::size_t>(1, (context + 1) / 2);
  std::vector<ClassId> cls;
  std::vector<double> vals;
  std::size_t done = 0;
  while (done + 1 < n) {
    const std::size_t start =
        done + 1 <= context ? 0 : (done + 1 - context + stride - 1) / stride * stride;
    const std::size_t end = std::min(n, start + context + 1);
    cls.clear();
    vals.clear();
    for (std::size_t i = start; i + 1 < end; ++i) {
      cls.push_back(toks[i].class_id);
      vals.push_back(toks[i].value.value_or(0.0));
    }
    model.forward({1, cls.size(), cls, vals}, ws);
    for (std::size_t target = done + 1; target < end; ++target) fn(target - 1 - start, target);
    done = end - 1;
  }
}

}  // namespace

std::vector<PositionPrediction> teacher_forced_predictions(const Transformer<float>& model,
                                                           const Vocabulary& vocab,
                                                           std::span<const TokenSequence> seqs) {
  if (seqs.empty()) throw ValidationError("evaluation set is empty");
  if (vocab.size() != model.config().d_c) {
    throw ValidationError("vocabulary size does not match the model");
  }
  const std::size_t dc = vocab.size();
  std::vector<PositionPrediction> out;
  Workspace<float> ws;
  for (const auto& seq : seqs) {
    for_each_target(model, seq.tokens, ws, [&](std::size_t row, std::size_t target) {
      const auto head = head_output(ws, row, dc);
      const auto& tok = seq.tokens[target];
      PositionPrediction p;
      p.target_class = tok.class_id;
      p.predicted_class = static_cast<ClassId>(
          std::max_element(head.class_probs.begin(), head.class_probs.end()) -
          head.class_probs.begin());
      const auto& spec = vocab.at(tok.class_id);
      if (spec.is_numeric() && tok.value) {
        const double mu = head.mu[tok.class_id], sigma = head.sigma[tok.class_id];
        p.numeric = true;
        p.truth_norm = *tok.value;
        p.point_norm = mu;
        p.truth_raw = to_raw(*tok.value, spec);
        p.point_raw = to_raw(mu, spec);
        p.z = (*tok.value - mu) / sigma;
        p.covered = std::abs(*tok.value - mu) <= kZ95 * sigma;
      }
      out.push_back(p);
    });
  }
  return out;
}

std::vector<PositionPrediction> teacher_forced_predictions(const Transformer<float>& model,
                                                           const DiscreteCodec& codec,
                                                           std::span<const TokenSequence> seqs) {
  if (seqs.empty()) throw ValidationError("evaluation set is empty");
  const auto& dvocab = codec.discrete();
  const auto& cvocab = codec.continuous();
  if (dvocab.size() != model.config().d_c) {
    throw ValidationError("binned vocabulary size does not match the model");
  }
  const std::size_t dc = dvocab.size();
  std::vector<PositionPrediction> out;
  Workspace<float> ws;
  std::vector<double> class_mass(cvocab.size());
  for (const auto& seq : seqs) {
    const auto binned = codec.to_discrete(seq);
    for_each_target(model, binned.tokens, ws, [&](std::size_t row, std::size_t target) {
      const auto head = head_output(ws, row, dc);
      std::fill(class_mass.begin(), class_mass.end(), 0.0);
      for (std::size_t k = 0; k < dc; ++k) class_mass[codec.origin(k).first] += head.class_probs[k];
      const auto& tok = seq.tokens[target];
      PositionPrediction p;
      p.target_class = tok.class_id;
      p.predicted_class = static_cast<ClassId>(
          std::max_element(class_mass.begin(), class_mass.end()) - class_mass.begin());
      const auto& spec = cvocab.at(tok.class_id);
      if (spec.is_numeric() && tok.value) {
        const auto& bins = *codec.bins_of(tok.class_id);
        const auto first = head.class_probs.begin() +
                           static_cast<std::ptrdiff_t>(codec.first_bin(tok.class_id));
        const std::vector<double> probs(first, first + static_cast<std::ptrdiff_t>(bins.n_bins()));
        const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) -
                                                   probs.begin());
        const auto [lo, hi] = bin_interval(probs, bins);
        p.numeric = true;
        p.truth_norm = *tok.value;
        p.truth_raw = to_raw(*tok.value, spec);
        p.point_raw = bins.representative[best];
        p.point_norm = normalize_value(p.point_raw, spec, Direction::forward);
        p.covered = p.truth_raw >= lo && p.truth_raw <= hi;
      }
      out.push_back(p);
    });
  }
  return out;
}

EvalReport summarize(const Vocabulary& vocab, std::span<const PositionPrediction> preds) {
  EvalReport r;
  r.n_predictions = preds.size();
  if (preds.empty()) throw ValidationError("no predictions to summarize");
  std::size_t correct = 0, correct_numeric = 0;
  double sq = 0.0;
  std::map<ClassId, std::pair<std::size_t, std::size_t>> cover;  // hits, total
  std::vector<ClassId> vc, tc;
  std::vector<double> vp, vt, tp, tt, z;
  const ClassId time_id = vocab.time_class_id();
  for (const auto& p : preds) {
    const bool ok = p.predicted_class == p.target_class;
    correct += ok;
    if (!p.numeric) continue;
    if (ok) {
      sq += (p.point_norm - p.truth_norm) * (p.point_norm - p.truth_norm);
      ++correct_numeric;
    }
    auto& c = cover[p.target_class];
    c.first += p.covered;
    ++c.second;
    if (p.target_class == time_id) {
      tc.push_back(p.target_class);
      tp.push_back(p.point_raw);
      tt.push_back(p.truth_raw);
    } else {
      vc.push_back(p.target_class);
      vp.push_back(p.point_raw);
      vt.push_back(p.truth_raw);
      if (p.z) z.push_back(*p.z);
    }
  }
  r.class_accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
  if (correct_numeric > 0) r.value_mse_given_correct_class = sq / static_cast<double>(correct_numeric);

  auto scaled = [&](std::span<const ClassId> c, std::span<const double> p,
                    std::span<const double> t) -> std::optional<double> {
    if (c.empty()) return std::nullopt;
    std::vector<ClassId> excluded;
    try {
      const double m = mse_scaled(c, p, t, &excluded);
      for (auto e : excluded) {
        r.warnings.push_back("class '" + vocab.at(e).name + "' has constant truth; excluded from MSE");
      }
      return m;
    } catch (const ValidationError& e) {
      r.warnings.push_back(e.what());
      return std::nullopt;
    }
  };
  r.value_mse = scaled(vc, vp, vt);
  r.time_mse = scaled(tc, tp, tt);
  for (const auto& [c, hits] : cover) {
    r.coverage_95[vocab.at(c).name] =
        static_cast<double>(hits.first) / static_cast<double>(hits.second);
  }
  if (z.size() >= 2) {
    const std::vector<double> zeros(z.size(), 0.0), ones(z.size(), 1.0);
    r.qq_points = qq_points(z, zeros, ones);
  }
  return r;
}

void write_report_csv(std::ostream& out, const EvalReport& r) {
  out << "metric,class,value\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  out << "n_predictions,," << r.n_predictions << '\n';
  out << "class_accuracy,," << format_double(r.class_accuracy) << '\n';
  out << "value_mse,," << opt(r.value_mse) << '\n';
  out << "time_mse,," << opt(r.time_mse) << '\n';
  out << "value_mse_given_correct_class,," << opt(r.value_mse_given_correct_class) << '\n';
  for (const auto& [name, cov] : r.coverage_95) {
    out << "coverage_95," << name << ',' << format_double(cov) << '\n';
  }
}

void write_qq_csv(std::ostream& out, std::span<const QQPoint> points) {
  out << "rank,theoretical,sample\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    out << i + 1 << ',' << format_double(points[i].theoretical) << ','
        << format_double(points[i].sample) << '\n';
  }
}

}  // namespace mvgpt
