#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvgpt/schema.hpp"

namespace mvgpt {

/// One (class, value) tuple. Numeric and time tokens carry a normalized value;
/// categorical tokens carry none.
struct Token {
  ClassId class_id = 0;
  std::optional<double> value;
  bool operator==(const Token&) const = default;
};

struct TokenSequence {
  std::string seq_id;
  std::vector<Token> tokens;
  double base_time = 0.0;

  std::size_t size() const { return tokens.size(); }
};

/// Flattens the records of one sequence: sorts by time, groups equal
/// timestamps, prefixes every group after the first with a time-delta token,
/// and orders a group's tokens by raw class name (stable on input order).
TokenSequence encode_sequence(std::span<const EventRecord> records, const Vocabulary& vocab);

/// Groups records by seq_id (sorted) and encodes each group.
std::vector<TokenSequence> encode_records(std::span<const EventRecord> records,
                                          const Vocabulary& vocab);

/// Reconstructs records; timestamps are base_time plus cumulative deltas.
std::vector<EventRecord> decode_sequence(const TokenSequence& seq, const Vocabulary& vocab);

/// Throws ValidationError if a token is inconsistent with the vocabulary or a
/// time token denormalizes to a non-positive delta.
void validate_sequence(const TokenSequence& seq, const Vocabulary& vocab);

// Long-format record IO: header `seq_id,time,class,value`. A class whose
// values all parse as numbers is numeric; otherwise its values are levels.
std::vector<EventRecord> read_records_csv(std::istream& in);
std::vector<EventRecord> read_records_jsonl(std::istream& in);
/// Dispatches on extension: `.jsonl`/`.ndjson` as JSON lines, otherwise CSV.
std::vector<EventRecord> read_records_file(const std::string& path);
void write_records_csv(std::ostream& out, std::span<const EventRecord> records);

/// Per-token head outputs attached to a dump (generation diagnostics).
struct TokenStats {
  double mu = 0.0;
  double sigma = 0.0;
};

/// Token dump CSV `seq_id,position,class_name,value` with optional `mu,sigma`
/// columns. Values are written in normalized units; categorical values empty.
void write_token_dump(std::ostream& out, std::span<const TokenSequence> seqs,
                      const Vocabulary& vocab,
                      std::span<const std::vector<std::optional<TokenStats>>> stats = {});

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace mvgpt
