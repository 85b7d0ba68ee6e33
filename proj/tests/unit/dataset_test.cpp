// Copyright 2026 The Istruttore Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <random>
#include <string>

#include "istruttore/dataset.hpp"
#include "istruttore/text.hpp"
#include "support/test_support.hpp"

namespace istruttore {
namespace {

TEST(ParseAlpaca, AntonymRecordKeepsInput) {
  const auto m = parse_alpaca(
      R"([{"instruction":"Data una parola, costruisci i suoi antonimi.","input":"Luce","output":"Scuro, pesante, denso"}])",
      "alpaca_it");
  ASSERT_EQ(m.record_count(), 1u);
  EXPECT_EQ(m.records[0].instruction, "Data una parola, costruisci i suoi antonimi.");
  ASSERT_TRUE(m.records[0].input.has_value());
  EXPECT_EQ(*m.records[0].input, "Luce");
  EXPECT_EQ(m.records[0].output, "Scuro, pesante, denso");
  EXPECT_EQ(m.source_name, "alpaca_it");
}

TEST(ParseAlpaca, EmptyArray) { EXPECT_EQ(parse_alpaca("[]").record_count(), 0u); }

TEST(ParseAlpaca, EmptyInputBecomesAbsent) {
  const auto m = parse_alpaca(R"([{"instruction":"X","input":"","output":"Y"}])");
  EXPECT_FALSE(m.records[0].input.has_value());
}

TEST(ParseAlpaca, MissingInputKeyIsAbsent) {
  const auto m = parse_alpaca(R"([{"instruction":"X","output":"Y"}])");
  EXPECT_FALSE(m.records[0].input.has_value());
}

TEST(ParseAlpaca, BadUtf8ReportsOffset) {
  std::string raw = R"([{"instruction":"ab)";
  raw += '\xff';
  raw += R"(","output":"y"}])";
  try {
    parse_alpaca(raw);
    FAIL() << "expected DecodeError";
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.byte_offset(), 19u);
    EXPECT_EQ(e.kind(), ErrorKind::kDecode);
  }
}

TEST(ParseAlpaca, MissingKeyNamesKeyAndIndex) {
  try {
    parse_alpaca(R"([{"instruction":"a","output":"b"},{"instruction":"c"}])");
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.key(), "output");
    EXPECT_EQ(e.record_index(), 1u);
  }
}

TEST(ParseAlpaca, EmptyOutputIsValidationError) {
  try {
    parse_alpaca(R"([{"instruction":"a","output":"b"},{"instruction":"a","output":"b"},{"instruction":"c","output":"  "}])");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.record_index(), 2u);
  }
}

TEST(ParseAlpaca, MalformedJsonIsDecodeError) { EXPECT_THROW(parse_alpaca("[{"), DecodeError); }

TEST(ParseAlpaca, NonArrayIsSchemaError) { EXPECT_THROW(parse_alpaca(R"({"a":1})"), SchemaError); }

TEST(ValidateRecord, Examples) {
  EXPECT_TRUE(validate_record({"Riassumi il testo", std::nullopt, "Un riassunto."}).ok());
  const auto empty = validate_record({"", std::nullopt, "x"});
  ASSERT_FALSE(empty.ok());
  EXPECT_EQ(empty.violations, std::vector<Violation>{Violation::kEmptyInstruction});
  const auto blank = validate_record({"x", std::string("   "), "y"});
  EXPECT_EQ(blank.violations, std::vector<Violation>{Violation::kBlankInput});
  const auto all = validate_record({" ", std::string(""), "\n"});
  EXPECT_EQ(all.violations.size(), 3u);
}

TEST(NormalizeRecord, Idempotent) {
  const InstructionRecord r{"a", std::string(" \t"), "b"};
  const auto once = normalize_record(r);
  EXPECT_FALSE(once.input.has_value());
  EXPECT_EQ(normalize_record(once), once);
}

TEST(SerializeDataset, EmptyManifest) { EXPECT_EQ(serialize_dataset({}), "[]"); }

TEST(SerializeDataset, AbsentInputWrittenAsEmptyString) {
  DatasetManifest m{{{"I", std::nullopt, "O"}}, "x"};
  const auto json = nlohmann::json::parse(serialize_dataset(m));
  ASSERT_TRUE(json[0].contains("input"));
  EXPECT_EQ(json[0]["input"], "");
}

TEST(SerializeDataset, InvalidRecordRejected) {
  DatasetManifest m{{{"", std::nullopt, "O"}}, "x"};
  EXPECT_THROW(serialize_dataset(m), ValidationError);
}

std::string random_field(std::mt19937_64& rng) {
  static const std::vector<std::string> parts{"a", "è", "\"q\"", "\\", "\n", "日本", "tab\t", "x y", "🙂"};
  std::uniform_int_distribution<std::size_t> n(1, 6), pick(0, parts.size() - 1);
  std::string s = "w";
  for (std::size_t i = n(rng); i > 0; --i) s += parts[pick(rng)];
  return s;
}

TEST(SerializeDataset, RoundTripProperty) {
  std::mt19937_64 rng(42);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 200; ++trial) {
    DatasetManifest m;
    m.source_name = "s";
    const int n = trial % 7;
    for (int i = 0; i < n; ++i) {
      InstructionRecord r{random_field(rng), std::nullopt, random_field(rng)};
      if (coin(rng)) r.input = random_field(rng);
      m.records.push_back(r);
    }
    EXPECT_EQ(parse_alpaca(serialize_dataset(m), "s"), m);
  }
}

TEST(ParseSquadIt, FixtureAndDefaults) {
  const auto recs = parse_squad_it(testing::read_fixture("squad_it.json"));
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].id, "squad-0");
  EXPECT_EQ(recs[0].question, "Quando è stata la seconda crisi petrolifera?");
  EXPECT_EQ(recs[0].gold_answers, std::vector<std::string>{"1979"});
  const auto noid = parse_squad_it(R"([{"paragraph":"p","question":"q","answers":["a"]}])");
  EXPECT_EQ(noid[0].id, "0");
}

TEST(ParseSquadIt, EmptyAnswersRejected) {
  EXPECT_THROW(parse_squad_it(R"([{"paragraph":"p","question":"q","answers":[]}])"), ValidationError);
  EXPECT_THROW(parse_squad_it(R"([{"paragraph":"p","question":" ","answers":["a"]}])"), ValidationError);
}

TEST(ParseNewsSum, FixtureNewspapers) {
  const auto recs = parse_newssum(testing::read_fixture("newssum.jsonl"));
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].newspaper, Newspaper::kIlPost);
  EXPECT_EQ(recs[1].newspaper, Newspaper::kFanpage);
}

TEST(ParseNewsSum, UnknownNewspaperRejected) {
  EXPECT_THROW(parse_newssum(R"({"article":"a","reference_summary":"b","newspaper":"corriere"})"), Error);
}

TEST(ParseXformal, Directions) {
  const auto f2i = parse_xformal(testing::read_fixture("xformal_f2i.jsonl"));
  const auto i2f = parse_xformal(testing::read_fixture("xformal_i2f.jsonl"));
  EXPECT_EQ(f2i.at(0).direction, StyleDirection::kFormalToInformal);
  EXPECT_EQ(i2f.at(0).direction, StyleDirection::kInformalToFormal);
  EXPECT_THROW(parse_xformal(R"({"source":"a","references":["b"],"direction":"x"})"), Error);
  EXPECT_THROW(parse_xformal(R"({"source":"a","references":[],"direction":"f2i"})"), Error);
}

TEST(ParseDataset, NeverDropsRecords) {
  std::string lines;
  for (int i = 0; i < 50; ++i) {
    lines += R"({"source":"s)" + std::to_string(i) + R"(","references":["r"],"direction":"f2i"})" + "\n\n";
  }
  const auto parsed = parse_dataset(lines, DatasetFormat::kXformal);
  EXPECT_EQ(std::get<std::vector<XformalRecord>>(parsed).size(), 50u);
}

TEST(Text, Utf8AndLowercase) {
  EXPECT_EQ(text::to_lower("ÈPERCHÉ Città"), "èperché città");
  EXPECT_FALSE(text::find_invalid_utf8("naïve 日本").has_value());
  EXPECT_EQ(text::find_invalid_utf8("ab\xc3"), std::optional<std::size_t>(2));
  EXPECT_EQ(text::trim("  a b \n"), "a b");
  EXPECT_TRUE(text::is_blank(" \t\n"));
}

}  // namespace
}  // namespace istruttore
