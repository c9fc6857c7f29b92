#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kvconsist {

/// Base class for every error raised by the library. `kind()` is a short
/// machine-readable tag that the CLI echoes in its error JSON.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, std::string kind = "error")
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// A dataset line that could not be decoded.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::string field, const std::string& detail);
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, "io") {}
};

enum class Label : std::uint8_t { kEntailed = 0, kContradicted = 1, kIrrelevant = 2 };

inline constexpr std::size_t kNumLabels = 3;
inline constexpr std::array<Label, kNumLabels> kAllLabels = {
    Label::kEntailed, Label::kContradicted, Label::kIrrelevant};

std::string_view to_string(Label label);
/// Accepts ENTAILED / CONTRADICTED / IRRELEVANT (and the single-letter forms).
std::optional<Label> try_parse_label(std::string_view text);
Label parse_label(std::string_view text);
inline std::size_t index_of(Label label) { return static_cast<std::size_t>(label); }

using Tokens = std::vector<std::string>;

/// Splits on runs of ASCII whitespace.
Tokens split_tokens(std::string_view text);
std::string join_tokens(const Tokens& tokens, std::string_view sep = " ");

/// The configurable set of attribute keys a profile may use.
class KeySet {
 public:
  KeySet();  // gender, location, constellation
  explicit KeySet(std::vector<std::string> keys);

  const std::vector<std::string>& keys() const { return keys_; }
  std::size_t size() const { return keys_.size(); }
  bool contains(std::string_view key) const;

  friend bool operator==(const KeySet&, const KeySet&) = default;

 private:
  std::vector<std::string> keys_;
};

struct AttributePair {
  std::string key;
  std::string value;

  friend bool operator==(const AttributePair&, const AttributePair&) = default;
};

/// Ordered key-value attribute profile. Construction rejects empty profiles,
/// empty keys or values, and duplicate keys.
class Profile {
 public:
  Profile() = default;
  explicit Profile(std::vector<AttributePair> pairs);
  Profile(std::initializer_list<AttributePair> pairs) : Profile(std::vector<AttributePair>(pairs)) {}

  const std::vector<AttributePair>& pairs() const { return pairs_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }

  const std::string* find(std::string_view key) const;
  std::optional<std::size_t> position_of(std::string_view key) const;
  /// Copy with the value under `key` replaced.
  Profile with_value(std::string_view key, std::string value) const;

  friend bool operator==(const Profile&, const Profile&) = default;

 private:
  std::vector<AttributePair> pairs_;
};

/// One arc of an external dependency parse: 1-based token index and its
/// head (0 marks the root).
struct ParseArc {
  int token = 0;
  int head = 0;

  friend bool operator==(const ParseArc&, const ParseArc&) = default;
};

struct Example {
  Profile profile;
  Tokens post;
  Tokens response;
  std::string domain;
  std::optional<AttributePair> attribute;
  Label label = Label::kIrrelevant;
  std::optional<std::vector<ParseArc>> response_parse;
  /// Adversarial surface perturbation: the value spans of these two profile
  /// pairs (0-based positions) trade places in the linearized sequence.
  /// The profile itself is untouched.
  std::optional<std::array<int, 2>> surface_swap;

  friend bool operator==(const Example&, const Example&) = default;
};

/// Throws Error when an Example invariant does not hold.
void validate_example(const Example& ex, const KeySet& keys);

enum class Split : std::uint8_t { kTrain, kValid, kTest };
std::string_view to_string(Split split);
std::optional<Split> try_parse_split(std::string_view text);

struct Dataset {
  std::vector<Example> examples;
  Split split = Split::kTrain;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Encodes one example as a single JSON line (no trailing newline).
std::string example_to_json_line(const Example& ex);
/// Decodes one JSON line; `line_no` is only used in error messages.
Example example_from_json_line(std::string_view line, std::size_t line_no, const KeySet& keys);

/// The split is taken from the file stem when it names one, else kTrain.
Dataset load_dataset(const std::filesystem::path& path, const KeySet& keys = KeySet());
Dataset load_dataset(const std::filesystem::path& path, Split split, const KeySet& keys = KeySet());
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

/// Per-key sentence templates used to turn a profile into prose. `{VALUE}`
/// expands to the value tokens and `{KEY}` to the key.
class ProfileTemplateBank {
 public:
  ProfileTemplateBank();  // "my {KEY} is {VALUE} ." for the default keys
  explicit ProfileTemplateBank(std::map<std::string, std::string> templates);

  const std::map<std::string, std::string>& templates() const { return templates_; }

 private:
  std::map<std::string, std::string> templates_;
};

Tokens template_render(const Profile& profile, const ProfileTemplateBank& bank);

}  // namespace kvconsist
