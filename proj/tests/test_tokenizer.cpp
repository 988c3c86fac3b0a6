#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "mvgpt/error.hpp"
#include "mvgpt/tokenizer.hpp"
#include "test_support.hpp"

using namespace mvgpt;

namespace {

// hr: zscore{70, 10}; sex levels F and M; time: zscore{2, 4}.
Vocabulary hr_sex_vocab() {
  std::vector<ClassSpec> classes(4);
  classes[0] = {0, "hr", ClassKind::numeric, ZScore{70, 10}, std::nullopt};
  classes[1] = {1, "sex=F", ClassKind::categorical, Identity{}, ClassOrigin{"sex", "F"}};
  classes[2] = {2, "sex=M", ClassKind::categorical, Identity{}, ClassOrigin{"sex", "M"}};
  classes[3] = {3, "time", ClassKind::numeric, ZScore{2, 4}, std::nullopt};
  return Vocabulary::from_classes(std::move(classes), 3);
}

}  // namespace

TEST(EncodeSequence, WorkedExample) {
  const auto vocab = hr_sex_vocab();
  std::vector<EventRecord> recs{{"p", 5, "hr", 80.0}, {"p", 0, "sex", std::string("M")},
                                {"p", 0, "hr", 70.0}};
  const auto seq = encode_sequence(recs, vocab);
  // Hand-applied rules: sort by time, group, time token before later groups,
  // raw class names ordered within a group ("hr" < "sex").
  const std::vector<Token> expected{
      {0, 0.0}, {2, std::nullopt}, {3, (5.0 - 2.0) / 4.0}, {0, 1.0}};
  EXPECT_EQ(seq.tokens, expected);
  EXPECT_EQ(seq.base_time, 0.0);
  EXPECT_EQ(seq.seq_id, "p");
}

TEST(EncodeSequence, SingleRecordHasNoTimeToken) {
  const auto vocab = hr_sex_vocab();
  std::vector<EventRecord> recs{{"p", 3, "hr", 75.0}};
  const auto seq = encode_sequence(recs, vocab);
  ASSERT_EQ(seq.size(), 1u);
  EXPECT_EQ(seq.tokens[0].class_id, 0u);
}

TEST(EncodeSequence, LexicographicWithinGroup) {
  std::vector<EventRecord> recs{{"s", 0, "b", 1.0}, {"s", 0, "a", 2.0}, {"s", 1, "a", 3.0},
                                {"s", 1, "b", 4.0}};
  const auto vocab = build_vocabulary(recs);
  const auto seq = encode_sequence(recs, vocab);
  ASSERT_EQ(seq.size(), 5u);
  EXPECT_EQ(vocab.at(seq.tokens[0].class_id).name, "a");
  EXPECT_EQ(vocab.at(seq.tokens[1].class_id).name, "b");
}

TEST(EncodeSequence, Errors) {
  const auto vocab = hr_sex_vocab();
  std::vector<EventRecord> unknown{{"p", 0, "spo2", 90.0}};
  EXPECT_THROW(encode_sequence(unknown, vocab), ValidationError);
  std::vector<EventRecord> level{{"p", 0, "sex", std::string("X")}};
  EXPECT_THROW(encode_sequence(level, vocab), ValidationError);
  std::vector<EventRecord> nonfinite{{"p", 0, "hr", INFINITY}};
  EXPECT_THROW(encode_sequence(nonfinite, vocab), ValidationError);
  std::vector<EventRecord> dup{{"p", 0, "hr", 60.0}, {"p", 0, "hr", 61.0}, {"p", 1, "hr", 62.0}};
  try {
    encode_sequence(dup, vocab);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("class=hr"), std::string::npos);
  }
  std::vector<EventRecord> dup_levels{{"p", 0, "sex", std::string("M")},
                                      {"p", 0, "sex", std::string("F")}};
  EXPECT_THROW(encode_sequence(dup_levels, vocab), ValidationError);
}

TEST(EncodeSequence, SequenceOrderedClassKeepsInputOrder) {
  std::vector<EventRecord> recs{{"n", 0, "text", std::string("the")},
                                {"n", 0, "text", std::string("patient")},
                                {"n", 0, "text", std::string("is")}};
  VocabularyOptions opts;
  opts.sequence_ordered_classes = {"text"};
  const auto vocab = build_vocabulary(recs, opts);
  const auto seq = encode_sequence(recs, vocab);
  ASSERT_EQ(seq.size(), 3u);
  EXPECT_EQ(vocab.at(seq.tokens[0].class_id).name, "text=the");
  EXPECT_EQ(vocab.at(seq.tokens[1].class_id).name, "text=patient");
  EXPECT_EQ(vocab.at(seq.tokens[2].class_id).name, "text=is");
}

TEST(DecodeSequence, CumulativeTimestamps) {
  const auto vocab = hr_sex_vocab();
  // deltas 5 and 3 in raw units: normalized (5-2)/4 and (3-2)/4.
  TokenSequence seq{"p", {{0, 0.0}, {3, 0.75}, {0, 0.5}, {3, 0.25}, {2, std::nullopt}}, 0.0};
  const auto recs = decode_sequence(seq, vocab);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_DOUBLE_EQ(recs[0].time, 0.0);
  EXPECT_DOUBLE_EQ(recs[1].time, 5.0);
  EXPECT_DOUBLE_EQ(recs[2].time, 8.0);
  EXPECT_DOUBLE_EQ(std::get<double>(recs[1].raw_value), 75.0);
  EXPECT_EQ(std::get<std::string>(recs[2].raw_value), "M");
}

TEST(DecodeSequence, SingleCategoricalToken) {
  const auto vocab = hr_sex_vocab();
  TokenSequence seq{"p", {{1, std::nullopt}}, 4.5};
  const auto recs = decode_sequence(seq, vocab);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].time, 4.5);
  EXPECT_EQ(recs[0].class_name, "sex");
}

TEST(DecodeSequence, RejectsNonPositiveDelta) {
  const auto vocab = hr_sex_vocab();
  TokenSequence seq{"p", {{0, 0.0}, {3, -0.5}, {0, 0.0}}, 0.0};  // delta = 0
  EXPECT_THROW(decode_sequence(seq, vocab), ValidationError);
}

TEST(TokenizerProperty, RoundTripCountAndPermutation) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    auto recs = test_support::random_records(rng, "s" + std::to_string(trial));
    std::vector<EventRecord> augmented = recs;
    // Guarantee every level and some delta spread exists for the vocabulary.
    for (const auto* lvl : {"F", "M"}) augmented.push_back({"z", 0, "sex", std::string(lvl)});
    for (const auto* lvl : {"norepi", "vaso", "none"}) {
      augmented.push_back({"z", 0, "drug", std::string(lvl)});
    }
    for (int i = 0; i < 3; ++i) {
      for (const auto* c : {"hr", "map", "temp"}) augmented.push_back({"z", 1.0 + i * i, c, 60.0 + i});
    }
    const auto vocab = build_vocabulary(augmented);
    const auto seq = encode_sequence(recs, vocab);

    std::set<double> times;
    for (const auto& r : recs) times.insert(r.time);
    EXPECT_EQ(seq.size(), recs.size() + times.size() - 1);

    EXPECT_TRUE(test_support::same_multiset(recs, decode_sequence(seq, vocab), 1e-9));

    auto shuffled = recs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    // Shuffling can only reorder same-timestamp records of different classes.
    const auto seq2 = encode_sequence(shuffled, vocab);
    EXPECT_EQ(seq2.tokens, seq.tokens);
  }
}

TEST(RecordIo, CsvRoundTripAndTypeInference) {
  std::istringstream in(
      "seq_id,time,class,value\n"
      "a,0,hr,70\n"
      "a,0,sex,M\n"
      "a,1.5,hr,71.25\n"
      "b,0,code,\"1,2\"\n");
  const auto recs = read_records_csv(in);
  ASSERT_EQ(recs.size(), 4u);
  EXPECT_DOUBLE_EQ(std::get<double>(recs[2].raw_value), 71.25);
  EXPECT_EQ(std::get<std::string>(recs[1].raw_value), "M");
  EXPECT_EQ(std::get<std::string>(recs[3].raw_value), "1,2");
  std::ostringstream out;
  write_records_csv(out, recs);
  std::istringstream again(out.str());
  const auto back = read_records_csv(again);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].class_name, recs[i].class_name);
    EXPECT_EQ(back[i].raw_value, recs[i].raw_value);
    EXPECT_EQ(back[i].time, recs[i].time);
  }
}

TEST(RecordIo, CsvErrors) {
  std::istringstream bad_header("id,t,c,v\n");
  EXPECT_THROW(read_records_csv(bad_header), ValidationError);
  std::istringstream bad_time("seq_id,time,class,value\na,x,hr,1\n");
  EXPECT_THROW(read_records_csv(bad_time), ValidationError);
}

TEST(RecordIo, JsonLines) {
  std::istringstream in(
      "{\"seq_id\":\"a\",\"time\":0,\"class\":\"hr\",\"value\":70}\n"
      "\n"
      "{\"seq_id\":\"a\",\"time\":1,\"class\":\"sex\",\"value\":\"F\"}\n");
  const auto recs = read_records_jsonl(in);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_DOUBLE_EQ(std::get<double>(recs[0].raw_value), 70.0);
  EXPECT_EQ(std::get<std::string>(recs[1].raw_value), "F");
  std::istringstream bad("{\"seq_id\":\"a\",\"time\":0}\n");
  EXPECT_THROW(read_records_jsonl(bad), ValidationError);
}

TEST(TokenDump, Format) {
  const auto vocab = hr_sex_vocab();
  std::vector<TokenSequence> seqs{{"p", {{0, 0.5}, {2, std::nullopt}}, 0.0}};
  std::ostringstream out;
  write_token_dump(out, seqs, vocab);
  EXPECT_EQ(out.str(), "seq_id,position,class_name,value\np,0,hr,0.5\np,1,sex=M,\n");
  std::vector<std::vector<std::optional<TokenStats>>> stats{{TokenStats{0.25, 2.0}, std::nullopt}};
  std::ostringstream out2;
  write_token_dump(out2, seqs, vocab, stats);
  EXPECT_EQ(out2.str(),
            "seq_id,position,class_name,value,mu,sigma\np,0,hr,0.5,0.25,2\np,1,sex=M,,,\n");
}
