#include "mvgpt/schema.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <tuple>

#include "mvgpt/error.hpp"

namespace mvgpt {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_finite(double v, const ClassSpec& spec) {
  if (!std::isfinite(v)) {
    throw ValidationError("non-finite value for class '" + spec.name + "'");
  }
}

nlohmann::ordered_json norm_to_json(const Normalization& norm) {
  using nlohmann::ordered_json;
  return std::visit(
      Overloaded{
          [](const Identity&) { return ordered_json{{"type", "identity"}}; },
          [](const ZScore& z) {
            return ordered_json{{"type", "zscore"}, {"mean", z.mean}, {"std", z.std}};
          },
          [](const LogZScore& z) {
            return ordered_json{{"type", "log_zscore"}, {"mean", z.mean}, {"std", z.std}};
          },
          [](const Logistic& l) {
            return ordered_json{{"type", "logistic"}, {"center", l.center}, {"scale", l.scale},
                                {"mean", l.mean},     {"std", l.std}};
          },
      },
      norm);
}

Normalization norm_from_json(const nlohmann::ordered_json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "identity") return Identity{};
  if (type == "zscore") return ZScore{j.at("mean").get<double>(), j.at("std").get<double>()};
  if (type == "log_zscore") {
    return LogZScore{j.at("mean").get<double>(), j.at("std").get<double>()};
  }
  if (type == "logistic") {
    return Logistic{j.at("center").get<double>(), j.at("scale").get<double>(),
                    j.at("mean").get<double>(), j.at("std").get<double>()};
  }
  throw ValidationError("unknown normalization type '" + type + "'");
}

void validate_norm(const ClassSpec& spec) {
  const bool ok = std::visit(
      Overloaded{
          [](const Identity&) { return true; },
          [](const ZScore& z) { return z.std > 0 && std::isfinite(z.mean); },
          [](const LogZScore& z) { return z.std > 0 && std::isfinite(z.mean); },
          [](const Logistic& l) { return l.scale > 0 && l.std > 0; },
      },
      spec.norm);
  if (!ok) throw ValidationError("invalid normalization parameters for class '" + spec.name + "'");
  if (spec.kind == ClassKind::categorical && !std::holds_alternative<Identity>(spec.norm)) {
    throw ValidationError("categorical class '" + spec.name + "' must use identity normalization");
  }
}

std::string level_string(const RawValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  std::ostringstream os;
  os << std::get<double>(v);
  return os.str();
}

}  // namespace

double normalize_value(double v, const ClassSpec& spec, Direction direction) {
  if (spec.kind != ClassKind::numeric) {
    throw ValidationError("cannot normalize categorical class '" + spec.name + "'");
  }
  require_finite(v, spec);
  const bool fwd = direction == Direction::forward;
  return std::visit(
      Overloaded{
          [&](const Identity&) { return v; },
          [&](const ZScore& z) { return fwd ? (v - z.mean) / z.std : v * z.std + z.mean; },
          [&](const LogZScore& z) {
            if (fwd) {
              if (v <= 0) {
                throw ValidationError("log normalization needs positive values for class '" +
                                      spec.name + "'");
              }
              return (std::log(v) - z.mean) / z.std;
            }
            return std::exp(v * z.std + z.mean);
          },
          [&](const Logistic& l) {
            if (fwd) return (sigmoid((v - l.center) / l.scale) - l.mean) / l.std;
            const double u = v * l.std + l.mean;
            if (!(u > 0.0 && u < 1.0)) {
              throw ValidationError("logistic inverse outside (0, 1) for class '" + spec.name +
                                    "'");
            }
            return l.center + l.scale * std::log(u / (1.0 - u));
          },
      },
      spec.norm);
}

std::pair<double, double> mean_and_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::vector<double> observed_time_deltas(std::span<const EventRecord> records) {
  std::map<std::string, std::vector<double>> times;
  for (const auto& r : records) times[r.seq_id].push_back(r.time);
  std::vector<double> deltas;
  for (auto& [id, ts] : times) {
    std::sort(ts.begin(), ts.end());
    for (std::size_t i = 1; i < ts.size(); ++i) {
      if (ts[i] - ts[i - 1] > 0) deltas.push_back(ts[i] - ts[i - 1]);
    }
  }
  return deltas;
}

const ClassSpec& Vocabulary::at(ClassId id) const {
  if (id >= classes_.size()) {
    throw ValidationError("class id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(classes_.size()));
  }
  return classes_[id];
}

Vocabulary Vocabulary::from_classes(std::vector<ClassSpec> classes, ClassId time_class_id) {
  Vocabulary vocab;
  if (classes.empty()) throw ValidationError("vocabulary must not be empty");
  if (time_class_id >= classes.size()) throw ValidationError("time class id out of range");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& spec = classes[i];
    if (spec.class_id != i) throw ValidationError("class ids must be dense and ordered");
    validate_norm(spec);
    if (!vocab.by_name_.emplace(spec.name, i).second) {
      throw ValidationError("duplicate class name '" + spec.name + "'");
    }
    if (spec.origin) {
      if (!vocab.by_level_.emplace(std::make_pair(spec.origin->raw_class, spec.origin->level), i)
               .second) {
        throw ValidationError("duplicate categorical level '" + spec.name + "'");
      }
    }
  }
  if (classes[time_class_id].kind != ClassKind::numeric) {
    throw ValidationError("time class must be numeric");
  }
  vocab.classes_ = std::move(classes);
  vocab.time_class_id_ = time_class_id;
  return vocab;
}

std::optional<ClassId> Vocabulary::find(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

ClassId Vocabulary::resolve(const std::string& raw_class, const RawValue& value) const {
  if (std::holds_alternative<std::string>(value)) {
    auto it = by_level_.find({raw_class, std::get<std::string>(value)});
    if (it == by_level_.end()) {
      throw ValidationError("unknown class/level '" + raw_class + "=" + level_string(value) + "'");
    }
    return it->second;
  }
  auto it = by_name_.find(raw_class);
  if (it == by_name_.end() || classes_[it->second].kind != ClassKind::numeric ||
      it->second == time_class_id_) {
    throw ValidationError("unknown numeric class '" + raw_class + "'");
  }
  return it->second;
}

std::vector<bool> Vocabulary::numeric_mask() const {
  std::vector<bool> mask(classes_.size());
  for (const auto& c : classes_) mask[c.class_id] = c.is_numeric();
  return mask;
}

nlohmann::ordered_json Vocabulary::to_json() const {
  nlohmann::ordered_json j;
  j["time_class_id"] = time_class_id_;
  j["d_c"] = classes_.size();
  auto& arr = j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : classes_) {
    nlohmann::ordered_json e;
    e["class_id"] = c.class_id;
    e["name"] = c.name;
    e["kind"] = c.kind == ClassKind::numeric ? "numeric" : "categorical";
    e["norm"] = norm_to_json(c.norm);
    if (c.origin) {
      e["origin"] = {{"raw_class", c.origin->raw_class}, {"level", c.origin->level}};
    } else {
      e["origin"] = nullptr;
    }
    e["sequence_ordered"] = c.sequence_ordered;
    arr.push_back(std::move(e));
  }
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::ordered_json& j) {
  try {
    std::vector<ClassSpec> classes;
    for (const auto& e : j.at("classes")) {
      ClassSpec c;
      c.class_id = e.at("class_id").get<ClassId>();
      c.name = e.at("name").get<std::string>();
      const auto kind = e.at("kind").get<std::string>();
      if (kind != "numeric" && kind != "categorical") {
        throw ValidationError("unknown class kind '" + kind + "'");
      }
      c.kind = kind == "numeric" ? ClassKind::numeric : ClassKind::categorical;
      c.norm = norm_from_json(e.at("norm"));
      if (!e.at("origin").is_null()) {
        c.origin = ClassOrigin{e["origin"].at("raw_class").get<std::string>(),
                               e["origin"].at("level").get<std::string>()};
      }
      c.sequence_ordered = e.value("sequence_ordered", false);
      classes.push_back(std::move(c));
    }
    auto vocab = from_classes(std::move(classes), j.at("time_class_id").get<ClassId>());
    if (j.at("d_c").get<std::size_t>() != vocab.size()) {
      throw ValidationError("vocabulary d_c does not match class count");
    }
    return vocab;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed vocabulary: ") + e.what());
  }
}

bool Vocabulary::operator==(const Vocabulary& other) const {
  return to_json() == other.to_json();
}

Vocabulary build_vocabulary(std::span<const EventRecord> records,
                            const VocabularyOptions& options) {
  if (records.empty()) throw ValidationError("cannot build a vocabulary from zero records");

  std::map<std::string, std::vector<double>> numeric_values;
  std::map<std::string, std::set<std::string>> levels;
  for (const auto& r : records) {
    if (r.class_name == kTimeClassName) {
      throw ValidationError(std::string("class name '") + kTimeClassName + "' is reserved");
    }
    if (!std::isfinite(r.time)) {
      throw ValidationError("non-finite time in sequence '" + r.seq_id + "'");
    }
    if (const auto* v = std::get_if<double>(&r.raw_value)) {
      if (!std::isfinite(*v)) {
        throw ValidationError("non-finite value for class '" + r.class_name + "'");
      }
      numeric_values[r.class_name].push_back(*v);
    } else {
      levels[r.class_name].insert(std::get<std::string>(r.raw_value));
    }
  }
  for (const auto& [name, lv] : levels) {
    if (numeric_values.count(name)) {
      throw ValidationError("class '" + name + "' mixes numeric and categorical values");
    }
  }

  const std::set<std::string> ordered(options.sequence_ordered_classes.begin(),
                                      options.sequence_ordered_classes.end());

  // (raw_class, level) keys sort numeric classes (empty level) before their
  // namesakes' levels, which cannot collide because a class has one kind.
  std::vector<std::tuple<std::string, std::string, bool>> keys;
  for (const auto& [name, vals] : numeric_values) keys.emplace_back(name, "", true);
  for (const auto& [name, lv] : levels) {
    for (const auto& level : lv) keys.emplace_back(name, level, false);
  }
  std::sort(keys.begin(), keys.end());

  auto fit = [](const std::string& name, std::span<const double> vals,
                const NormalizationChoice& choice) -> Normalization {
    using M = NormalizationChoice::Method;
    switch (choice.method) {
      case M::identity:
        return Identity{};
      case M::zscore: {
        auto [mean, sd] = mean_and_std(vals);
        if (!(sd > 0)) throw ValidationError("class '" + name + "' has zero variance");
        return ZScore{mean, sd};
      }
      case M::log_zscore: {
        std::vector<double> logs;
        for (double v : vals) {
          if (v <= 0) throw ValidationError("class '" + name + "' has non-positive values");
          logs.push_back(std::log(v));
        }
        auto [mean, sd] = mean_and_std(logs);
        if (!(sd > 0)) throw ValidationError("class '" + name + "' has zero variance");
        return LogZScore{mean, sd};
      }
      case M::logistic: {
        if (!(choice.scale > 0)) {
          throw ValidationError("class '" + name + "' needs a positive logistic scale");
        }
        std::vector<double> squashed;
        for (double v : vals) squashed.push_back(sigmoid((v - choice.center) / choice.scale));
        auto [mean, sd] = mean_and_std(squashed);
        if (!(sd > 0)) throw ValidationError("class '" + name + "' has zero variance");
        return Logistic{choice.center, choice.scale, mean, sd};
      }
    }
    return Identity{};
  };

  std::vector<ClassSpec> classes;
  for (const auto& [raw, level, is_numeric] : keys) {
    ClassSpec c;
    c.class_id = classes.size();
    c.sequence_ordered = ordered.count(raw) > 0;
    if (is_numeric) {
      c.name = raw;
      c.kind = ClassKind::numeric;
      auto it = options.per_class.find(raw);
      c.norm = fit(raw, numeric_values[raw], it == options.per_class.end() ? NormalizationChoice{}
                                                                           : it->second);
    } else {
      c.name = raw + "=" + level;
      c.kind = ClassKind::categorical;
      c.norm = Identity{};
      c.origin = ClassOrigin{raw, level};
    }
    classes.push_back(std::move(c));
  }

  ClassSpec time;
  time.class_id = classes.size();
  time.name = kTimeClassName;
  time.kind = ClassKind::numeric;
  const auto deltas = observed_time_deltas(records);
  const auto [dmean, dstd] = mean_and_std(deltas);
  if (dstd > 0) {
    time.norm = fit(kTimeClassName, deltas, options.time);
  } else if (options.time.method == NormalizationChoice::Method::log_zscore && !deltas.empty()) {
    time.norm = LogZScore{std::log(dmean), 1.0};
  } else {
    // Constant (or absent) sampling interval: center on it with unit scale.
    time.norm = ZScore{dmean, 1.0};
  }
  classes.push_back(std::move(time));
  const ClassId time_id = classes.size() - 1;
  return Vocabulary::from_classes(std::move(classes), time_id);
}

}  // namespace mvgpt
