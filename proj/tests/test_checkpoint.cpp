#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "mvgpt/checkpoint.hpp"
#include "mvgpt/error.hpp"

using namespace mvgpt;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "mvgpt_test_checkpoint";
  fs::create_directories(dir);
  return (dir / name).string();
}

std::vector<EventRecord> small_records() {
  std::vector<EventRecord> recs;
  for (int i = 0; i < 40; ++i) {
    recs.push_back({"a", 0.5 * i, "hr", 70.0 + (i * 37 % 11)});
    if (i % 5 == 0) recs.push_back({"a", 0.5 * i, "sex", std::string(i % 2 ? "F" : "M")});
  }
  return recs;
}

Checkpoint make_checkpoint(bool binned) {
  const auto recs = small_records();
  Checkpoint c;
  c.vocab = build_vocabulary(recs);
  if (binned) c.bins = fit_bin_table(recs, c.vocab, 4);
  c.config.d_e = 16;
  c.config.n_head = 2;
  c.config.n_layer = 1;
  c.config.context = 8;
  c.config.value_map_hidden = 4;
  c.config.d_c = c.model_vocab().size();
  Transformer<float> m(c.config, c.model_vocab().numeric_mask());
  m.init_params();
  c.params.assign(m.params().begin(), m.params().end());
  c.meta["note"] = "unit";
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
}

}  // namespace

TEST(Checkpoint, RoundTripMultivariate) {
  const auto c = make_checkpoint(false);
  const auto path = temp_path("mv.ckpt");
  save_checkpoint(path, c);
  EXPECT_FALSE(fs::exists(path + ".tmp"));
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.config, c.config);
  EXPECT_EQ(back.vocab.to_json(), c.vocab.to_json());
  EXPECT_FALSE(back.is_discrete());
  EXPECT_EQ(back.params, c.params);
  EXPECT_EQ(back.meta["note"], "unit");
  EXPECT_EQ(slurp(path).substr(0, 8), "MVGPTCK1");
}

TEST(Checkpoint, RoundTripBinnedAndModelAgrees) {
  const auto c = make_checkpoint(true);
  const auto path = temp_path("disc.ckpt");
  save_checkpoint(path, c);
  const auto back = load_checkpoint(path);
  ASSERT_TRUE(back.is_discrete());
  EXPECT_EQ(*back.bins, *c.bins);
  EXPECT_EQ(back.model_vocab().size(), c.config.d_c);

  const auto a = c.make_model();
  const auto b = back.make_model();
  const std::vector<ClassId> cls{0, 1, 2, 0};
  const std::vector<double> vals(4, 0.0);
  Workspace<float> wa, wb;
  a.forward({1, 4, cls, vals}, wa);
  b.forward({1, 4, cls, vals}, wb);
  EXPECT_EQ(wa.logits, wb.logits);
}

TEST(Checkpoint, SaveIsByteStable) {
  const auto c = make_checkpoint(true);
  const auto p1 = temp_path("s1.ckpt"), p2 = temp_path("s2.ckpt");
  save_checkpoint(p1, c);
  save_checkpoint(p2, load_checkpoint(p1));
  EXPECT_EQ(slurp(p1), slurp(p2));
}

TEST(Checkpoint, RejectsCorruption) {
  const auto c = make_checkpoint(false);
  const auto path = temp_path("bad.ckpt");
  save_checkpoint(path, c);
  const auto good = slurp(path);

  spit(path, good.substr(0, good.size() - 3));
  EXPECT_THROW(load_checkpoint(path), ValidationError);
  spit(path, good + "x");
  EXPECT_THROW(load_checkpoint(path), ValidationError);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  spit(path, bad_magic);
  EXPECT_THROW(load_checkpoint(path), ValidationError);
  auto bad_version = good;
  const auto pos = bad_version.find("\"format_version\":1");
  ASSERT_NE(pos, std::string::npos);
  bad_version[pos + 17] = '7';
  spit(path, bad_version);
  EXPECT_THROW(load_checkpoint(path), ValidationError);
  EXPECT_THROW(load_checkpoint(temp_path("missing.ckpt")), ValidationError);
}

TEST(Checkpoint, RejectsParamCountMismatch) {
  auto c = make_checkpoint(false);
  c.params.pop_back();
  EXPECT_THROW(save_checkpoint(temp_path("short.ckpt"), c), ValidationError);
}
