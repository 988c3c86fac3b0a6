#include "mvgpt/tokenizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>

#include "mvgpt/error.hpp"

namespace mvgpt {

namespace {

struct Resolved {
  double time;
  ClassId class_id;
  std::optional<double> value;
  std::size_t input_order;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

TokenSequence encode_sequence(std::span<const EventRecord> records, const Vocabulary& vocab) {
  TokenSequence seq;
  if (records.empty()) return seq;
  seq.seq_id = records.front().seq_id;

  std::vector<Resolved> items;
  items.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!std::isfinite(r.time)) {
      throw ValidationError("non-finite time in sequence '" + r.seq_id + "'");
    }
    const ClassId id = vocab.resolve(r.class_name, r.raw_value);
    const auto& spec = vocab.at(id);
    std::optional<double> value;
    if (spec.is_numeric()) {
      value = normalize_value(std::get<double>(r.raw_value), spec, Direction::forward);
    }
    items.push_back({r.time, id, value, i});
  }
  std::stable_sort(items.begin(), items.end(),
                   [](const Resolved& a, const Resolved& b) { return a.time < b.time; });

  seq.base_time = items.front().time;
  const auto& time_spec = vocab.at(vocab.time_class_id());
  std::string duplicates;
  for (std::size_t begin = 0; begin < items.size();) {
    std::size_t end = begin;
    while (end < items.size() && items[end].time == items[begin].time) ++end;
    if (begin > 0) {
      const double dt = items[begin].time - items[begin - 1].time;
      seq.tokens.push_back(
          {vocab.time_class_id(), normalize_value(dt, time_spec, Direction::forward)});
    }
    std::stable_sort(items.begin() + static_cast<std::ptrdiff_t>(begin),
                     items.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](const Resolved& a, const Resolved& b) {
                       return vocab.at(a.class_id).raw_name() < vocab.at(b.class_id).raw_name();
                     });
    for (std::size_t i = begin; i < end; ++i) {
      const auto& spec = vocab.at(items[i].class_id);
      if (i > begin && !spec.sequence_ordered &&
          vocab.at(items[i - 1].class_id).raw_name() == spec.raw_name()) {
        if (!duplicates.empty()) duplicates += "; ";
        duplicates += "t=" + format_double(items[i].time) + " class=" + spec.raw_name();
      }
      seq.tokens.push_back({items[i].class_id, items[i].value});
    }
    begin = end;
  }
  if (!duplicates.empty()) {
    throw ValidationError("duplicate (timestamp, class) in sequence '" + seq.seq_id +
                          "': " + duplicates);
  }
  return seq;
}

std::vector<TokenSequence> encode_records(std::span<const EventRecord> records,
                                          const Vocabulary& vocab) {
  std::map<std::string, std::vector<EventRecord>> groups;
  for (const auto& r : records) groups[r.seq_id].push_back(r);
  std::vector<TokenSequence> out;
  out.reserve(groups.size());
  for (const auto& [id, recs] : groups) out.push_back(encode_sequence(recs, vocab));
  return out;
}

void validate_sequence(const TokenSequence& seq, const Vocabulary& vocab) {
  const auto time_id = vocab.time_class_id();
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    const auto& tok = seq.tokens[i];
    const auto& spec = vocab.at(tok.class_id);
    if (spec.is_numeric() != tok.value.has_value()) {
      throw ValidationError("token " + std::to_string(i) + " value presence does not match class '" +
                            spec.name + "'");
    }
    if (tok.value && !std::isfinite(*tok.value)) {
      throw ValidationError("token " + std::to_string(i) + " has a non-finite value");
    }
    if (tok.class_id == time_id) {
      const double dt = normalize_value(*tok.value, spec, Direction::inverse);
      if (!(dt > 0)) {
        throw ValidationError("time token " + std::to_string(i) + " has non-positive delta " +
                              format_double(dt));
      }
    }
  }
}

std::vector<EventRecord> decode_sequence(const TokenSequence& seq, const Vocabulary& vocab) {
  validate_sequence(seq, vocab);
  std::vector<EventRecord> out;
  double t = seq.base_time;
  for (const auto& tok : seq.tokens) {
    const auto& spec = vocab.at(tok.class_id);
    if (tok.class_id == vocab.time_class_id()) {
      t += normalize_value(*tok.value, spec, Direction::inverse);
      continue;
    }
    EventRecord r;
    r.seq_id = seq.seq_id;
    r.time = t;
    if (spec.is_numeric()) {
      r.class_name = spec.name;
      r.raw_value = normalize_value(*tok.value, spec, Direction::inverse);
    } else {
      r.class_name = spec.origin ? spec.origin->raw_class : spec.name;
      r.raw_value = spec.origin ? spec.origin->level : spec.name;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<EventRecord> read_records_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty CSV input");
  const auto header = split_csv_line(line);
  const std::vector<std::string> expected{"seq_id", "time", "class", "value"};
  if (header != expected) throw ValidationError("CSV header must be seq_id,time,class,value");

  struct Raw {
    std::string seq_id, cls, value;
    double time;
  };
  std::vector<Raw> raws;
  std::map<std::string, bool> all_numeric;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() != 4) {
      throw ValidationError("line " + std::to_string(line_no) + ": expected 4 fields");
    }
    auto t = parse_double(f[1]);
    if (!t || !std::isfinite(*t)) {
      throw ValidationError("line " + std::to_string(line_no) + ": invalid time '" + f[1] + "'");
    }
    auto [it, inserted] = all_numeric.emplace(f[2], true);
    if (!parse_double(f[3])) it->second = false;
    raws.push_back({f[0], f[2], f[3], *t});
  }
  std::vector<EventRecord> out;
  out.reserve(raws.size());
  for (auto& r : raws) {
    EventRecord rec{r.seq_id, r.time, r.cls, {}};
    if (all_numeric[r.cls]) {
      rec.raw_value = *parse_double(r.value);
    } else {
      rec.raw_value = r.value;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<EventRecord> read_records_jsonl(std::istream& in) {
  std::vector<EventRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EventRecord r;
      r.seq_id = j.at("seq_id").is_string() ? j["seq_id"].get<std::string>()
                                            : j["seq_id"].dump();
      r.time = j.at("time").get<double>();
      r.class_name = j.at("class").get<std::string>();
      const auto& v = j.at("value");
      if (v.is_number()) {
        r.raw_value = v.get<double>();
      } else if (v.is_string()) {
        r.raw_value = v.get<std::string>();
      } else {
        throw ValidationError("value must be a number or string");
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<EventRecord> read_records_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  auto ends_with = [&](const std::string& suffix) {
    return path.size() >= suffix.size() &&
           path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".jsonl") || ends_with(".ndjson")) return read_records_jsonl(in);
  return read_records_csv(in);
}

void write_records_csv(std::ostream& out, std::span<const EventRecord> records) {
  out << "seq_id,time,class,value\n";
  for (const auto& r : records) {
    out << csv_escape(r.seq_id) << ',' << format_double(r.time) << ',' << csv_escape(r.class_name)
        << ',';
    if (const auto* v = std::get_if<double>(&r.raw_value)) {
      out << format_double(*v);
    } else {
      out << csv_escape(std::get<std::string>(r.raw_value));
    }
    out << '\n';
  }
}

void write_token_dump(std::ostream& out, std::span<const TokenSequence> seqs,
                      const Vocabulary& vocab,
                      std::span<const std::vector<std::optional<TokenStats>>> stats) {
  const bool with_stats = !stats.empty();
  out << "seq_id,position,class_name,value" << (with_stats ? ",mu,sigma" : "") << '\n';
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
      const auto& tok = seq.tokens[i];
      out << csv_escape(seq.seq_id) << ',' << i << ',' << csv_escape(vocab.at(tok.class_id).name)
          << ',';
      if (tok.value) out << format_double(*tok.value);
      if (with_stats) {
        out << ',';
        if (s < stats.size() && i < stats[s].size() && stats[s][i]) {
          out << format_double(stats[s][i]->mu) << ',' << format_double(stats[s][i]->sigma);
        } else {
          out << ',';
        }
      }
      out << '\n';
    }
  }
}

}  // namespace mvgpt
