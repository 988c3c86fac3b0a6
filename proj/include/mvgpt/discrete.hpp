#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvgpt/schema.hpp"
#include "mvgpt/tokenizer.hpp"

namespace mvgpt {

/// Quantile bins of one numeric class, in raw units.
struct ClassBins {
  std::string class_name;
  std::size_t requested = 0;           // n_bins asked for before collapsing
  std::vector<double> edges;           // n_bins + 1, strictly ascending
  std::vector<double> representative;  // in-bin median of training values

  std::size_t n_bins() const { return representative.size(); }
  double width(std::size_t bin) const { return edges[bin + 1] - edges[bin]; }
  bool operator==(const ClassBins&) const = default;
};

/// Linear-interpolation sample quantile: h = (n - 1) p over sorted values.
double quantile_sorted(std::span<const double> sorted, double p);

/// Edges at quantiles k/n_bins. Repeated edges collapse, which lowers the bin
/// count; ClassBins::requested keeps the original request.
/// Throws ValidationError when fewer distinct values than n_bins exist.
ClassBins fit_quantile_bins(const std::string& class_name, std::span<const double> values,
                            std::size_t n_bins);

/// Bin i with edges[i] <= v < edges[i + 1]; out-of-range values clamp.
std::size_t bin_encode(double v, const ClassBins& bins);
/// representative[id]; throws ValidationError for an out-of-range id.
double bin_decode(std::size_t id, const ClassBins& bins);

/// Per-class bins, ordered by class name. Time-delta bins use kTimeClassName.
class BinTable {
 public:
  BinTable() = default;
  explicit BinTable(std::vector<ClassBins> classes);

  const ClassBins& at(const std::string& class_name) const;
  const ClassBins* find(const std::string& class_name) const;
  const std::vector<ClassBins>& classes() const { return classes_; }

  nlohmann::ordered_json to_json() const;
  static BinTable from_json(const nlohmann::ordered_json& j);
  /// CSV `class,bin,lo,hi,representative`.
  void write_csv(std::ostream& out) const;
  bool operator==(const BinTable&) const = default;

 private:
  std::vector<ClassBins> classes_;
};

/// Fits n_bins per numeric class of `vocab` from raw training values. Time
/// deltas get min(n_bins, distinct deltas) bins so a fixed sampling interval
/// still yields a usable (single-bin) table.
BinTable fit_bin_table(std::span<const EventRecord> records, const Vocabulary& vocab,
                       std::size_t n_bins);

/// Translates token streams between a continuous vocabulary and its binned
/// counterpart. Every numeric class, including time, becomes one categorical
/// class per bin ("hr#b03"); categorical classes keep their names. The binned
/// vocabulary still ends with the reserved numeric time class, which is never
/// emitted.
class DiscreteCodec {
 public:
  DiscreteCodec(Vocabulary continuous, BinTable bins);

  const Vocabulary& continuous() const { return continuous_; }
  const Vocabulary& discrete() const { return discrete_; }
  const BinTable& bins() const { return bins_; }

  /// Binned class id of a continuous token (value required for numeric classes).
  ClassId encode_token(const Token& tok) const;
  /// Continuous class of a binned class, and the bin index when it is a bin class.
  std::pair<ClassId, std::optional<std::size_t>> origin(ClassId discrete_id) const;
  /// First binned id of a continuous class; bins are contiguous.
  ClassId first_bin(ClassId continuous_id) const { return first_[continuous_id]; }
  const ClassBins* bins_of(ClassId continuous_id) const;

  TokenSequence to_discrete(const TokenSequence& seq) const;
  /// Bin tokens decode to their representative, re-normalized.
  TokenSequence to_continuous(const TokenSequence& seq) const;

 private:
  Vocabulary continuous_;
  BinTable bins_;
  Vocabulary discrete_;
  std::vector<ClassId> first_;
  std::vector<std::pair<ClassId, std::optional<std::size_t>>> origin_;
};

/// Central interval of a categorical distribution over consecutive bins: the
/// lower edge of the bin holding the lower-tail quantile and the upper edge of
/// the bin holding the upper-tail quantile. `probs` need not be normalized.
std::pair<double, double> bin_interval(std::span<const double> probs, const ClassBins& bins,
                                       double tail = 0.025);

}  // namespace mvgpt
