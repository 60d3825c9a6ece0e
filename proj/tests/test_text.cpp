#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "promptopt/rng.hpp"
#include "promptopt/text.hpp"

using namespace promptopt;

TEST(Text, TrimAndSplit) {
  EXPECT_EQ(text::trim("  a b \n"), "a b");
  EXPECT_EQ(text::trim(""), "");
  auto parts = text::split_whitespace("  a\tb  c\n");
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[2], "c");
  auto fields = text::split("a|||b|||", "|||");
  ASSERT_EQ(fields.size(), 3u);
  EXPECT_EQ(fields[2], "");
}

TEST(Text, NormalizeAnswer) {
  EXPECT_EQ(text::normalize_answer("  Paris "), "paris");
  EXPECT_EQ(text::normalize_answer("42."), "42");
  EXPECT_EQ(text::normalize_answer("New   York\tCity."), "new york city");
  EXPECT_EQ(text::normalize_answer("1.."), "1.");
}

TEST(Text, CodepointOffsets) {
  const std::string s = "h\xC3\xA9llo \xE2\x82\xAC!";  // "héllo €!"
  EXPECT_EQ(text::codepoint_count(s), 8u);
  EXPECT_EQ(text::codepoint_substr(s, 1, 2).value(), "\xC3\xA9");
  EXPECT_EQ(text::codepoint_substr(s, 6, 7).value(), "\xE2\x82\xAC");
  EXPECT_EQ(text::codepoint_substr(s, 0, 8).value(), s);
  EXPECT_FALSE(text::codepoint_substr(s, 3, 9).has_value());
  EXPECT_FALSE(text::codepoint_substr(s, 5, 4).has_value());
}

TEST(Text, FencedBlock) {
  EXPECT_EQ(text::fenced_block("prose\n```json\n{\"a\":1}\n```\ntrailer").value(), "{\"a\":1}");
  EXPECT_EQ(text::fenced_block("```\nx\n```").value(), "x");
  EXPECT_FALSE(text::fenced_block("no fence here").has_value());
  EXPECT_FALSE(text::fenced_block("```\nunterminated").has_value());
  EXPECT_EQ(text::fenced_block(text::fence("body")).value(), "body");
}

TEST(Text, DigestIsStable) {
  EXPECT_EQ(text::digest("abc"), text::digest("abc"));
  EXPECT_NE(text::digest("abc"), text::digest("abd"));
  EXPECT_EQ(text::hex64(0xffULL), "00000000000000ff");
}

TEST(Rng, SameSeedSameSequence) {
  DeterministicRng a(42), b(42), c(43);
  std::vector<std::uint64_t> va, vb, vc;
  for (int i = 0; i < 50; ++i) {
    va.push_back(a.below(1000));
    vb.push_back(b.below(1000));
    vc.push_back(c.below(1000));
  }
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
}

TEST(Rng, SampleIndicesAreDistinctAndInRange) {
  DeterministicRng rng(7);
  for (std::size_t n = 1; n < 30; ++n) {
    for (std::size_t k = 0; k <= n; ++k) {
      auto idx = rng.sample_indices(n, k);
      ASSERT_EQ(idx.size(), k);
      std::sort(idx.begin(), idx.end());
      EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
      for (auto i : idx) EXPECT_LT(i, n);
    }
  }
}

TEST(Rng, ShuffleIsPermutation) {
  DeterministicRng rng(1);
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  rng.shuffle(w);
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}
