// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>

#include "rway/data.hpp"
#include "rway/error.hpp"
#include "test_util.hpp"

using namespace rway;

TEST(Bytes, RoundTripIncludingHighBytes) {
  std::string text = "passkey 12345.";
  text.push_back(char(0xff));
  text.push_back(char(0x00));
  const auto ids = encode_bytes(text);
  ASSERT_EQ(ids.size(), text.size());
  EXPECT_EQ(ids[0], std::size_t('p'));
  EXPECT_EQ(ids[text.size() - 2], 255u);
  EXPECT_EQ(decode_bytes(ids), text);
  const std::vector<std::size_t> bad{256};
  EXPECT_THROW(decode_bytes(bad), InputError);
}

TEST(LoadTokens, BytesAndIds) {
  const auto dir = fixture::scratch_dir("data_load");
  std::ofstream(dir / "text.txt") << "abc\n";
  EXPECT_EQ(load_tokens(dir / "text.txt"), (std::vector<std::size_t>{97, 98, 99, 10}));
  std::ofstream(dir / "stream.ids") << "1 2\n300\t4\n";
  EXPECT_EQ(load_tokens(dir / "stream.ids"), (std::vector<std::size_t>{1, 2, 300, 4}));
  std::ofstream(dir / "bad.ids") << "1 x 3";
  EXPECT_THROW(load_tokens(dir / "bad.ids"), InputError);
  std::ofstream(dir / "neg.ids") << "1 -3";
  EXPECT_THROW(load_tokens(dir / "neg.ids"), InputError);
  std::ofstream(dir / "empty.txt");
  EXPECT_THROW(load_tokens(dir / "empty.txt"), InputError);
  EXPECT_THROW(load_tokens(dir / "missing.txt"), InputError);
}

TEST(SplitTokens, TailBecomesValidation) {
  std::vector<std::size_t> t(100);
  for (std::size_t i = 0; i < 100; ++i) t[i] = i;
  const auto split = split_tokens(t, 0.1);
  EXPECT_EQ(split.train.size(), 90u);
  EXPECT_EQ(split.val.size(), 10u);
  EXPECT_EQ(split.train.back(), 89u);
  EXPECT_EQ(split.val.front(), 90u);
  EXPECT_ANY_THROW(split_tokens(t, 0.0));
  EXPECT_ANY_THROW(split_tokens(t, 1.0));
}

TEST(SyntheticCorpus, DeterministicPrintableText) {
  const auto a = synthetic_corpus(5000, 1);
  EXPECT_EQ(a.size(), 5000u);
  EXPECT_EQ(a, synthetic_corpus(5000, 1));
  EXPECT_NE(a, synthetic_corpus(5000, 2));
  for (char c : a) EXPECT_TRUE(c == '\n' || (c >= 32 && c < 127)) << int(c);
  EXPECT_NE(a.find(' '), std::string::npos);
}
