#include "mvgpt/discrete.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include "mvgpt/error.hpp"

namespace mvgpt {

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sample");
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

ClassBins fit_quantile_bins(const std::string& class_name, std::span<const double> values,
                            std::size_t n_bins) {
  if (n_bins == 0) throw ValidationError("n_bins must be positive");
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw ValidationError("non-finite value in class '" + class_name + "'");
  }
  std::sort(sorted.begin(), sorted.end());
  std::size_t n_distinct = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i == 0 || sorted[i] != sorted[i - 1]) ++n_distinct;
  }
  if (n_distinct < n_bins) {
    throw ValidationError("class '" + class_name + "' has " + std::to_string(n_distinct) +
                          " distinct values, fewer than " + std::to_string(n_bins) + " bins");
  }

  ClassBins out;
  out.class_name = class_name;
  out.requested = n_bins;
  for (std::size_t k = 0; k <= n_bins; ++k) {
    const double e = quantile_sorted(sorted, static_cast<double>(k) / static_cast<double>(n_bins));
    if (out.edges.empty() || e > out.edges.back()) out.edges.push_back(e);
  }
  // A single distinct value leaves one zero-width bin.
  if (out.edges.size() == 1) out.edges.push_back(out.edges.front());
  const std::size_t n = out.edges.size() - 1;
  out.representative.assign(n, 0.0);

  std::vector<std::vector<double>> members(n);
  for (double v : sorted) members[bin_encode(v, out)].push_back(v);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& m = members[b];
    out.representative[b] = m.empty() ? 0.5 * (out.edges[b] + out.edges[b + 1])
                                      : quantile_sorted(m, 0.5);
  }
  return out;
}

std::size_t bin_encode(double v, const ClassBins& bins) {
  const std::size_t n = bins.n_bins();
  if (n <= 1) return 0;
  const auto first = bins.edges.begin() + 1;
  const auto last = bins.edges.begin() + static_cast<std::ptrdiff_t>(n);
  return static_cast<std::size_t>(std::upper_bound(first, last, v) - first);
}

double bin_decode(std::size_t id, const ClassBins& bins) {
  if (id >= bins.n_bins()) {
    throw ValidationError("bin " + std::to_string(id) + " out of range for class '" +
                          bins.class_name + "'");
  }
  return bins.representative[id];
}

BinTable::BinTable(std::vector<ClassBins> classes) : classes_(std::move(classes)) {
  std::sort(classes_.begin(), classes_.end(),
            [](const ClassBins& a, const ClassBins& b) { return a.class_name < b.class_name; });
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    const auto& c = classes_[i];
    if (i > 0 && classes_[i - 1].class_name == c.class_name) {
      throw ValidationError("duplicate bin class '" + c.class_name + "'");
    }
    if (c.edges.size() != c.representative.size() + 1 || c.representative.empty()) {
      throw ValidationError("malformed bins for class '" + c.class_name + "'");
    }
    for (std::size_t b = 0; b < c.n_bins(); ++b) {
      if (!(c.representative[b] >= c.edges[b] && c.representative[b] <= c.edges[b + 1])) {
        throw ValidationError("representative outside its bin in class '" + c.class_name + "'");
      }
    }
  }
}

const ClassBins* BinTable::find(const std::string& class_name) const {
  for (const auto& c : classes_) {
    if (c.class_name == class_name) return &c;
  }
  return nullptr;
}

const ClassBins& BinTable::at(const std::string& class_name) const {
  if (const auto* c = find(class_name)) return *c;
  throw ValidationError("no bins for class '" + class_name + "'");
}

nlohmann::ordered_json BinTable::to_json() const {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : classes_) {
    arr.push_back({{"class", c.class_name},
                   {"requested", c.requested},
                   {"edges", c.edges},
                   {"representative", c.representative}});
  }
  return arr;
}

BinTable BinTable::from_json(const nlohmann::ordered_json& j) {
  try {
    std::vector<ClassBins> classes;
    for (const auto& c : j) {
      classes.push_back({c.at("class").get<std::string>(), c.at("requested").get<std::size_t>(),
                         c.at("edges").get<std::vector<double>>(),
                         c.at("representative").get<std::vector<double>>()});
    }
    return BinTable(std::move(classes));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed bin table: ") + e.what());
  }
}

void BinTable::write_csv(std::ostream& out) const {
  out << "class,bin,lo,hi,representative\n";
  for (const auto& c : classes_) {
    for (std::size_t b = 0; b < c.n_bins(); ++b) {
      out << c.class_name << ',' << b << ',' << format_double(c.edges[b]) << ','
          << format_double(c.edges[b + 1]) << ',' << format_double(c.representative[b]) << '\n';
    }
  }
}

BinTable fit_bin_table(std::span<const EventRecord> records, const Vocabulary& vocab,
                       std::size_t n_bins) {
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : records) {
    if (const auto* v = std::get_if<double>(&r.raw_value)) values[r.class_name].push_back(*v);
  }
  std::vector<ClassBins> classes;
  for (const auto& spec : vocab.classes()) {
    if (!spec.is_numeric() || spec.class_id == vocab.time_class_id()) continue;
    classes.push_back(fit_quantile_bins(spec.name, values[spec.name], n_bins));
  }
  auto deltas = observed_time_deltas(records);
  if (deltas.empty()) deltas.push_back(1.0);
  std::vector<double> uniq = deltas;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  classes.push_back(fit_quantile_bins(kTimeClassName, deltas, std::min(n_bins, uniq.size())));
  return BinTable(std::move(classes));
}

namespace {

std::string bin_label(std::size_t b, std::size_t n) {
  std::string digits = std::to_string(b);
  const std::size_t width = std::max<std::size_t>(2, std::to_string(n - 1).size());
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return "b" + digits;
}

}  // namespace

DiscreteCodec::DiscreteCodec(Vocabulary continuous, BinTable bins)
    : continuous_(std::move(continuous)), bins_(std::move(bins)) {
  std::vector<ClassSpec> classes;
  first_.assign(continuous_.size(), 0);
  for (const auto& spec : continuous_.classes()) {
    first_[spec.class_id] = classes.size();
    if (!spec.is_numeric()) {
      ClassSpec s = spec;
      s.class_id = classes.size();
      classes.push_back(s);
      origin_.emplace_back(spec.class_id, std::nullopt);
      continue;
    }
    const auto& cb = bins_.at(spec.name);
    for (std::size_t b = 0; b < cb.n_bins(); ++b) {
      const std::string label = bin_label(b, cb.n_bins());
      ClassSpec s;
      s.class_id = classes.size();
      s.name = spec.name + "#" + label;
      s.kind = ClassKind::categorical;
      s.norm = Identity{};
      s.origin = ClassOrigin{spec.name, label};
      classes.push_back(std::move(s));
      origin_.emplace_back(spec.class_id, b);
    }
  }
  const auto& time_spec = continuous_.at(continuous_.time_class_id());
  ClassSpec reserved = time_spec;
  reserved.class_id = classes.size();
  classes.push_back(reserved);
  origin_.emplace_back(time_spec.class_id, std::nullopt);
  discrete_ = Vocabulary::from_classes(std::move(classes), origin_.size() - 1);
}

const ClassBins* DiscreteCodec::bins_of(ClassId continuous_id) const {
  const auto& spec = continuous_.at(continuous_id);
  return spec.is_numeric() ? &bins_.at(spec.name) : nullptr;
}

std::pair<ClassId, std::optional<std::size_t>> DiscreteCodec::origin(ClassId discrete_id) const {
  if (discrete_id >= origin_.size()) throw ValidationError("binned class id out of range");
  return origin_[discrete_id];
}

ClassId DiscreteCodec::encode_token(const Token& tok) const {
  const auto& spec = continuous_.at(tok.class_id);
  if (!spec.is_numeric()) return first_[tok.class_id];
  if (!tok.value) throw ValidationError("numeric token of class '" + spec.name + "' lacks a value");
  const double raw = normalize_value(*tok.value, spec, Direction::inverse);
  return first_[tok.class_id] + bin_encode(raw, bins_.at(spec.name));
}

TokenSequence DiscreteCodec::to_discrete(const TokenSequence& seq) const {
  TokenSequence out{seq.seq_id, {}, seq.base_time};
  out.tokens.reserve(seq.size());
  for (const auto& t : seq.tokens) out.tokens.push_back({encode_token(t), std::nullopt});
  return out;
}

TokenSequence DiscreteCodec::to_continuous(const TokenSequence& seq) const {
  TokenSequence out{seq.seq_id, {}, seq.base_time};
  out.tokens.reserve(seq.size());
  for (const auto& t : seq.tokens) {
    const auto [cid, bin] = origin(t.class_id);
    if (t.class_id == discrete_.time_class_id()) {
      throw ValidationError("reserved time class appears in a binned sequence");
    }
    const auto& spec = continuous_.at(cid);
    if (!bin) {
      out.tokens.push_back({cid, std::nullopt});
      continue;
    }
    const double raw = bin_decode(*bin, bins_.at(spec.name));
    out.tokens.push_back({cid, normalize_value(raw, spec, Direction::forward)});
  }
  return out;
}

std::pair<double, double> bin_interval(std::span<const double> probs, const ClassBins& bins,
                                       double tail) {
  if (probs.size() != bins.n_bins()) throw ValidationError("bin probability width mismatch");
  double total = 0.0;
  for (double p : probs) total += p;
  if (!(total > 0.0)) throw ValidationError("bin probabilities sum to zero");
  std::size_t lo = probs.size() - 1, hi = probs.size() - 1;
  bool lo_set = false;
  double cum = 0.0;
  for (std::size_t b = 0; b < probs.size(); ++b) {
    cum += probs[b] / total;
    if (!lo_set && cum > tail) {
      lo = b;
      lo_set = true;
    }
    if (cum >= 1.0 - tail) {
      hi = b;
      break;
    }
  }
  return {bins.edges[lo], bins.edges[hi + 1]};
}

}  // namespace mvgpt
