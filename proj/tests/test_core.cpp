#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "kvconsist/core.hpp"

namespace kvconsist {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("kvconsist-core-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "-" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Profile fig_profile() {
  return Profile({{"gender", "female"}, {"location", "Beijing"}, {"constellation", "Leo"}});
}

Example sample(Label label) {
  Example ex;
  ex.profile = Profile({{"gender", "female"}, {"location", "Beijing Haidian"}, {"constellation", "Leo"}});
  ex.post = {"where", "are", "you", "?"};
  ex.response = {"i", "live", "in", "Haidian"};
  ex.domain = "location";
  ex.label = label;
  if (label != Label::kIrrelevant) ex.attribute = AttributePair{"location", "Beijing Haidian"};
  ex.response_parse = std::vector<ParseArc>{{1, 2}, {2, 0}, {3, 2}, {4, 3}};
  return ex;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Labels, ParseAndPrint) {
  for (Label l : kAllLabels) EXPECT_EQ(parse_label(to_string(l)), l);
  EXPECT_EQ(parse_label("C"), Label::kContradicted);
  EXPECT_FALSE(try_parse_label("MAYBE"));
  EXPECT_THROW(parse_label("MAYBE"), Error);
}

TEST(Profile, RejectsBadPairs) {
  EXPECT_THROW(Profile(std::vector<AttributePair>{}), Error);
  EXPECT_THROW(Profile({{"gender", "male"}, {"gender", "female"}}), Error);
  EXPECT_THROW(Profile({{"", "male"}}), Error);
  EXPECT_THROW(Profile({{"gender", ""}}), Error);
}

TEST(Profile, LookupAndReplace) {
  const Profile p = fig_profile();
  EXPECT_EQ(*p.find("location"), "Beijing");
  EXPECT_EQ(p.position_of("constellation"), 2u);
  EXPECT_EQ(p.find("age"), nullptr);
  const Profile q = p.with_value("constellation", "Aries");
  EXPECT_EQ(*q.find("constellation"), "Aries");
  EXPECT_EQ(*p.find("constellation"), "Leo");
  EXPECT_THROW(p.with_value("age", "3"), Error);
}

TEST(Example, Validation) {
  const KeySet keys;
  EXPECT_NO_THROW(validate_example(sample(Label::kEntailed), keys));
  auto ex = sample(Label::kEntailed);
  ex.response.clear();
  EXPECT_THROW(validate_example(ex, keys), Error);
  ex = sample(Label::kEntailed);
  ex.domain = "age";
  EXPECT_THROW(validate_example(ex, keys), Error);
  ex = sample(Label::kEntailed);
  ex.attribute = AttributePair{"age", "3"};
  EXPECT_THROW(validate_example(ex, keys), Error);
}

TEST(Jsonl, RoundTripPreservesEverything) {
  TempDir dir;
  Dataset ds;
  ds.split = Split::kValid;
  ds.examples = {sample(Label::kEntailed), sample(Label::kIrrelevant), sample(Label::kContradicted)};
  ds.examples[1].response_parse.reset();
  ds.examples[2].surface_swap = std::array<int, 2>{1, 2};
  const fs::path p = dir.path() / "valid.jsonl";
  save_dataset(ds, p);
  const Dataset back = load_dataset(p);
  EXPECT_EQ(back, ds);

  // Saving again is byte-identical.
  const fs::path p2 = dir.path() / "valid2.jsonl";
  save_dataset(back, p2);
  EXPECT_EQ(read_file(p), read_file(p2));
}

TEST(Jsonl, EmptyAndSingle) {
  TempDir dir;
  Dataset ds;
  save_dataset(ds, dir.path() / "a.jsonl");
  EXPECT_EQ(read_file(dir.path() / "a.jsonl"), "");
  ds.examples.push_back(sample(Label::kEntailed));
  save_dataset(ds, dir.path() / "b.jsonl");
  const std::string text = read_file(dir.path() / "b.jsonl");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
}

TEST(Jsonl, FieldOrderMatchesSchema) {
  const std::string line = example_to_json_line(sample(Label::kEntailed));
  const auto pos = [&](const char* f) { return line.find(std::string("\"") + f + "\""); };
  EXPECT_LT(pos("profile"), pos("post"));
  EXPECT_LT(pos("post"), pos("response"));
  EXPECT_LT(pos("response"), pos("domain"));
  EXPECT_LT(pos("domain"), pos("attribute"));
  EXPECT_LT(pos("attribute"), pos("label"));
  EXPECT_LT(pos("label"), pos("response_parse"));
  EXPECT_EQ(pos("surface_swap"), std::string::npos);
}

TEST(Jsonl, ErrorsNameLineAndField) {
  TempDir dir;
  const fs::path p = dir.path() / "bad.jsonl";
  {
    std::ofstream out(p);
    out << example_to_json_line(sample(Label::kEntailed)) << '\n';
    std::string bad = example_to_json_line(sample(Label::kEntailed));
    bad.replace(bad.find("ENTAILED"), 8, "MAYBE");
    out << bad << '\n';
  }
  try {
    load_dataset(p);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.field(), "label");
    EXPECT_NE(std::string(e.what()).find("MAYBE"), std::string::npos);
  }

  {
    std::ofstream out(p);
    out << "{\"profile\": [[\"gender\", \"male\"]], \"post\": [], \"response\": 3}\n";
  }
  try {
    load_dataset(p);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
    EXPECT_EQ(e.field(), "response");
  }

  {
    std::ofstream out(p);
    out << "not json\n";
  }
  EXPECT_THROW(load_dataset(p), ParseError);
}

TEST(Jsonl, MissingFileAndUnwritablePath) {
  EXPECT_THROW(load_dataset("/nonexistent/x.jsonl"), IoError);
  EXPECT_THROW(save_dataset(Dataset{}, "/nonexistent/dir/x.jsonl"), IoError);
}

TEST(TemplateRender, DefaultBank) {
  EXPECT_EQ(join_tokens(template_render(fig_profile(), ProfileTemplateBank())),
            "my gender is female . my location is Beijing . my constellation is Leo .");
  EXPECT_EQ(template_render(Profile({{"gender", "male"}}), ProfileTemplateBank()).size(), 5u);
  EXPECT_THROW(template_render(Profile({{"age", "3"}}), ProfileTemplateBank()), Error);
}

TEST(Tokens, SplitAndJoin) {
  EXPECT_EQ(split_tokens("  a  b\tc\n"), (Tokens{"a", "b", "c"}));
  EXPECT_TRUE(split_tokens("   ").empty());
  EXPECT_EQ(join_tokens({"a", "b"}), "a b");
}

}  // namespace
}  // namespace kvconsist
