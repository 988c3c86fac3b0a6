#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

namespace mvgpt {

using ClassId = std::size_t;

enum class ClassKind { numeric, categorical };

struct ZScore {
  double mean = 0.0;
  double std = 1.0;
};

/// z-score applied after a natural log; used for heavy-tailed time deltas.
struct LogZScore {
  double mean = 0.0;
  double std = 1.0;
};

/// 1 / (1 + exp(-(v - center) / scale)), followed by a z-score of that image.
struct Logistic {
  double center = 0.0;
  double scale = 1.0;
  double mean = 0.0;
  double std = 1.0;
};

struct Identity {};

using Normalization = std::variant<Identity, ZScore, LogZScore, Logistic>;

/// Provenance of a class created by categorical expansion.
struct ClassOrigin {
  std::string raw_class;
  std::string level;
  bool operator==(const ClassOrigin&) const = default;
};

struct ClassSpec {
  ClassId class_id = 0;
  std::string name;
  ClassKind kind = ClassKind::numeric;
  Normalization norm = Identity{};
  std::optional<ClassOrigin> origin;
  // Tokens of a sequence-ordered class keep their input order within a
  // timestamp group and may repeat (e.g. words of a note).
  bool sequence_ordered = false;

  /// Raw class name used for intra-group ordering and duplicate detection.
  const std::string& raw_name() const { return origin ? origin->raw_class : name; }
  bool is_numeric() const { return kind == ClassKind::numeric; }
};

using RawValue = std::variant<double, std::string>;

struct EventRecord {
  std::string seq_id;
  double time = 0.0;
  std::string class_name;
  RawValue raw_value;
};

enum class Direction { forward, inverse };

/// Maps a raw numeric value into model units (forward) or back (inverse).
/// Throws ValidationError for categorical specs, non-finite input, or an
/// inverse logistic argument outside the open unit interval image.
double normalize_value(double v, const ClassSpec& spec, Direction direction);

inline constexpr const char* kTimeClassName = "time";

/// Immutable registry of token classes. Class ids are dense and the reserved
/// time-delta class is always last.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Validates and adopts an explicit class list (ids must be 0..n-1 in order).
  static Vocabulary from_classes(std::vector<ClassSpec> classes, ClassId time_class_id);

  std::size_t size() const { return classes_.size(); }
  ClassId time_class_id() const { return time_class_id_; }
  const ClassSpec& at(ClassId id) const;
  const std::vector<ClassSpec>& classes() const { return classes_; }

  std::optional<ClassId> find(const std::string& name) const;
  /// Resolves a raw record to its class id; the level is ignored for numeric classes.
  /// Throws ValidationError for unknown classes and unseen categorical levels.
  ClassId resolve(const std::string& raw_class, const RawValue& value) const;

  std::vector<bool> numeric_mask() const;

  nlohmann::ordered_json to_json() const;
  static Vocabulary from_json(const nlohmann::ordered_json& j);

  bool operator==(const Vocabulary& other) const;

 private:
  std::vector<ClassSpec> classes_;
  ClassId time_class_id_ = 0;
  std::map<std::string, ClassId> by_name_;
  std::map<std::pair<std::string, std::string>, ClassId> by_level_;
};

struct NormalizationChoice {
  enum class Method { zscore, log_zscore, logistic, identity };
  Method method = Method::zscore;
  double center = 0.0;  // logistic only
  double scale = 1.0;   // logistic only
};

struct VocabularyOptions {
  std::map<std::string, NormalizationChoice> per_class;
  NormalizationChoice time{NormalizationChoice::Method::zscore};
  std::vector<std::string> sequence_ordered_classes;
};

/// Builds the vocabulary from training records: one class per numeric raw
/// class, one per observed (categorical class, level), and the time class last.
Vocabulary build_vocabulary(std::span<const EventRecord> records,
                            const VocabularyOptions& options = {});

/// Sample mean and Bessel-corrected standard deviation.
std::pair<double, double> mean_and_std(std::span<const double> values);

/// Positive time deltas between consecutive distinct timestamps, per sequence.
std::vector<double> observed_time_deltas(std::span<const EventRecord> records);

}  // namespace mvgpt
