#include "kvconsist/core.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include <json.hpp>

namespace kvconsist {

using json = nlohmann::ordered_json;

ParseError::ParseError(std::size_t line, std::string field, const std::string& detail)
    : Error("line " + std::to_string(line) + ", field '" + field + "': " + detail, "parse"),
      line_(line),
      field_(std::move(field)) {}

std::string_view to_string(Label label) {
  switch (label) {
    case Label::kEntailed: return "ENTAILED";
    case Label::kContradicted: return "CONTRADICTED";
    case Label::kIrrelevant: return "IRRELEVANT";
  }
  return "?";
}

std::optional<Label> try_parse_label(std::string_view text) {
  if (text == "ENTAILED" || text == "E") return Label::kEntailed;
  if (text == "CONTRADICTED" || text == "C") return Label::kContradicted;
  if (text == "IRRELEVANT" || text == "I") return Label::kIrrelevant;
  return std::nullopt;
}

Label parse_label(std::string_view text) {
  if (auto label = try_parse_label(text)) return *label;
  throw Error("unknown label '" + std::string(text) + "'", "label");
}

Tokens split_tokens(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_tokens(const Tokens& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

KeySet::KeySet() : keys_{"gender", "location", "constellation"} {}

KeySet::KeySet(std::vector<std::string> keys) : keys_(std::move(keys)) {
  std::set<std::string> seen;
  for (const auto& k : keys_) {
    if (k.empty()) throw Error("key set contains an empty key", "keyset");
    if (!seen.insert(k).second) throw Error("key set repeats key '" + k + "'", "keyset");
  }
  if (keys_.empty()) throw Error("key set is empty", "keyset");
}

bool KeySet::contains(std::string_view key) const {
  return std::find(keys_.begin(), keys_.end(), key) != keys_.end();
}

Profile::Profile(std::vector<AttributePair> pairs) : pairs_(std::move(pairs)) {
  if (pairs_.empty()) throw Error("profile must have at least one pair", "profile");
  std::set<std::string> seen;
  for (const auto& p : pairs_) {
    if (p.key.empty()) throw Error("profile key is empty", "profile");
    if (split_tokens(p.value).empty()) throw Error("profile value for '" + p.key + "' is empty", "profile");
    if (!seen.insert(p.key).second) throw Error("profile repeats key '" + p.key + "'", "profile");
  }
}

const std::string* Profile::find(std::string_view key) const {
  for (const auto& p : pairs_)
    if (p.key == key) return &p.value;
  return nullptr;
}

std::optional<std::size_t> Profile::position_of(std::string_view key) const {
  for (std::size_t i = 0; i < pairs_.size(); ++i)
    if (pairs_[i].key == key) return i;
  return std::nullopt;
}

Profile Profile::with_value(std::string_view key, std::string value) const {
  auto pairs = pairs_;
  bool found = false;
  for (auto& p : pairs) {
    if (p.key == key) {
      p.value = std::move(value);
      found = true;
    }
  }
  if (!found) throw Error("profile has no key '" + std::string(key) + "'", "profile");
  return Profile(std::move(pairs));
}

void validate_example(const Example& ex, const KeySet& keys) {
  if (ex.profile.empty()) throw Error("example profile is empty", "example");
  for (const auto& p : ex.profile.pairs())
    if (!keys.contains(p.key)) throw Error("profile key '" + p.key + "' is not in the key set", "example");
  if (ex.response.empty()) throw Error("example response is empty", "example");
  if (!keys.contains(ex.domain)) throw Error("domain '" + ex.domain + "' is not in the key set", "example");
  if (!ex.profile.find(ex.domain)) throw Error("domain '" + ex.domain + "' is not a profile key", "example");
  if (ex.attribute && !keys.contains(ex.attribute->key))
    throw Error("attribute key '" + ex.attribute->key + "' is not in the key set", "example");
  if (ex.surface_swap) {
    const auto n = static_cast<int>(ex.profile.size());
    const auto [a, b] = *ex.surface_swap;
    if (a < 0 || b < 0 || a >= n || b >= n || a == b)
      throw Error("surface_swap must name two distinct profile positions", "example");
  }
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

std::optional<Split> try_parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "valid") return Split::kValid;
  if (text == "test") return Split::kTest;
  return std::nullopt;
}

std::string example_to_json_line(const Example& ex) {
  json j;
  json profile = json::array();
  for (const auto& p : ex.profile.pairs()) profile.push_back({p.key, p.value});
  j["profile"] = std::move(profile);
  j["post"] = ex.post;
  j["response"] = ex.response;
  j["domain"] = ex.domain;
  j["attribute"] = ex.attribute ? json::array({ex.attribute->key, ex.attribute->value}) : json(nullptr);
  j["label"] = std::string(to_string(ex.label));
  if (ex.response_parse) {
    json arcs = json::array();
    for (const auto& a : *ex.response_parse) arcs.push_back({a.token, a.head});
    j["response_parse"] = std::move(arcs);
  } else {
    j["response_parse"] = nullptr;
  }
  if (ex.surface_swap) j["surface_swap"] = {(*ex.surface_swap)[0], (*ex.surface_swap)[1]};
  return j.dump();
}

namespace {

const json& require(const json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) throw ParseError(line, field, "missing");
  return *it;
}

Tokens token_list(const json& j, const char* field, std::size_t line) {
  if (!j.is_array()) throw ParseError(line, field, "expected an array of strings");
  Tokens out;
  out.reserve(j.size());
  for (const auto& t : j) {
    if (!t.is_string()) throw ParseError(line, field, "expected an array of strings");
    out.push_back(t.get<std::string>());
  }
  return out;
}

AttributePair string_pair(const json& j, const char* field, std::size_t line) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_string() || !j[1].is_string())
    throw ParseError(line, field, "expected a [key, value] string pair");
  return {j[0].get<std::string>(), j[1].get<std::string>()};
}

}  // namespace

Example example_from_json_line(std::string_view line, std::size_t line_no, const KeySet& keys) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(line_no, "<line>", std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(line_no, "<line>", "expected a JSON object");

  Example ex;
  {
    const auto& jp = require(j, "profile", line_no);
    if (!jp.is_array()) throw ParseError(line_no, "profile", "expected an array of pairs");
    std::vector<AttributePair> pairs;
    for (const auto& p : jp) pairs.push_back(string_pair(p, "profile", line_no));
    try {
      ex.profile = Profile(std::move(pairs));
    } catch (const Error& e) {
      throw ParseError(line_no, "profile", e.what());
    }
  }
  ex.post = token_list(require(j, "post", line_no), "post", line_no);
  ex.response = token_list(require(j, "response", line_no), "response", line_no);
  {
    const auto& d = require(j, "domain", line_no);
    if (!d.is_string()) throw ParseError(line_no, "domain", "expected a string");
    ex.domain = d.get<std::string>();
  }
  if (auto it = j.find("attribute"); it != j.end() && !it->is_null())
    ex.attribute = string_pair(*it, "attribute", line_no);
  {
    const auto& l = require(j, "label", line_no);
    if (!l.is_string()) throw ParseError(line_no, "label", "expected a string");
    auto label = try_parse_label(l.get<std::string>());
    if (!label) throw ParseError(line_no, "label", "unknown label '" + l.get<std::string>() + "'");
    ex.label = *label;
  }
  if (auto it = j.find("response_parse"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError(line_no, "response_parse", "expected an array of [token, head]");
    std::vector<ParseArc> arcs;
    for (const auto& a : *it) {
      if (!a.is_array() || a.size() != 2 || !a[0].is_number_integer() || !a[1].is_number_integer())
        throw ParseError(line_no, "response_parse", "expected [token, head] integer pairs");
      arcs.push_back({a[0].get<int>(), a[1].get<int>()});
    }
    ex.response_parse = std::move(arcs);
  }
  if (auto it = j.find("surface_swap"); it != j.end() && !it->is_null()) {
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number_integer() || !(*it)[1].is_number_integer())
      throw ParseError(line_no, "surface_swap", "expected [i, j]");
    ex.surface_swap = std::array<int, 2>{(*it)[0].get<int>(), (*it)[1].get<int>()};
  }
  try {
    validate_example(ex, keys);
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(line_no, "<example>", e.what());
  }
  return ex;
}

Dataset load_dataset(const std::filesystem::path& path, const KeySet& keys) {
  auto split = try_parse_split(path.stem().string()).value_or(Split::kTrain);
  return load_dataset(path, split, keys);
}

Dataset load_dataset(const std::filesystem::path& path, Split split, const KeySet& keys) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  Dataset ds;
  ds.split = split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_tokens(line).empty()) continue;
    ds.examples.push_back(example_from_json_line(line, line_no, keys));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset '" + path.string() + "'");
  for (const auto& ex : ds.examples) out << example_to_json_line(ex) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

ProfileTemplateBank::ProfileTemplateBank()
    : templates_{{"gender", "my {KEY} is {VALUE} ."},
                 {"location", "my {KEY} is {VALUE} ."},
                 {"constellation", "my {KEY} is {VALUE} ."}} {}

ProfileTemplateBank::ProfileTemplateBank(std::map<std::string, std::string> templates)
    : templates_(std::move(templates)) {}

Tokens template_render(const Profile& profile, const ProfileTemplateBank& bank) {
  Tokens out;
  for (const auto& [key, value] : profile.pairs()) {
    auto it = bank.templates().find(key);
    if (it == bank.templates().end()) throw Error("no profile template for key '" + key + "'", "template");
    for (const auto& tok : split_tokens(it->second)) {
      if (tok == "{VALUE}") {
        for (auto& v : split_tokens(value)) out.push_back(std::move(v));
      } else if (tok == "{KEY}") {
        out.push_back(key);
      } else {
        out.push_back(tok);
      }
    }
  }
  return out;
}

}  // namespace kvconsist
