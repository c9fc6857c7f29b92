#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kvconsist/core.hpp"

namespace kvconsist {

struct Province {
  std::string name;
  std::vector<std::string> cities;
};

/// A location value split into its province and optional city.
struct Place {
  std::string province;
  std::optional<std::string> city;
};

/// Province -> city containment used for location reasoning.
class LocationOntology {
 public:
  LocationOntology();  // ten provinces with five cities each
  explicit LocationOntology(std::vector<Province> provinces);

  const std::vector<Province>& provinces() const { return provinces_; }
  bool is_province(std::string_view name) const;
  bool is_city(std::string_view name) const;
  const std::string* province_of(std::string_view city) const;

  /// Every value a profile may carry: each province alone, then "Province City"
  /// for each of its cities.
  std::vector<std::string> location_values() const;

  /// "Province" or "Province City".
  static Place parse_value(std::string_view value);
  /// Canonical value naming `place` (province alone if the place is a province).
  std::string value_for(std::string_view place) const;
  /// True iff the two values can describe the same place: equal provinces and,
  /// when both name a city, equal cities.
  static bool consistent(std::string_view profile_value, std::string_view revealed_value);

 private:
  std::vector<Province> provinces_;
  std::map<std::string, std::string, std::less<>> city_to_province_;
};

/// Slots a response or post template can carry.
enum class SlotKind { kValue, kPartner, kCity, kProvince, kOther };
std::optional<SlotKind> slot_kind(std::string_view token);

struct ResponseTemplate {
  std::string id;
  std::string domain;
  std::string text;
  /// True when the response talks about the speaker's own attribute.
  bool self_revealing = false;
  /// 1-based head per token, 0 for the root; empty means no parse.
  std::vector<int> heads;
};

struct TemplateBank {
  std::vector<ResponseTemplate> responses;
  std::map<std::string, std::vector<std::string>> posts;  // domain -> templates
  std::vector<std::string> genders;
  std::vector<std::string> constellations;
  /// Nouns a speaker of the given gender uses for themself ("girl").
  std::map<std::string, std::vector<std::string>> self_nouns;
  /// Nouns a speaker of the given gender uses for a partner ("boyfriend").
  std::map<std::string, std::vector<std::string>> partner_nouns;

  static TemplateBank defaults();
  /// Throws unless every slot is resolvable and parses match template lengths.
  void validate(const LocationOntology& ontology) const;
  const ResponseTemplate* find(std::string_view id) const;
};

TemplateBank load_template_bank(const std::filesystem::path& path);
void save_template_bank(const TemplateBank& bank, const std::filesystem::path& path);
LocationOntology load_ontology(const std::filesystem::path& path);
void save_ontology(const LocationOntology& ontology, const std::filesystem::path& path);

struct GenConfig {
  std::size_t train = 6000;
  std::size_t valid = 1000;
  std::size_t test = 1000;
  std::size_t keyswap = 500;
  /// ENTAILED / CONTRADICTED / IRRELEVANT shares.
  std::array<double, kNumLabels> label_mix = {0.28, 0.26, 0.46};
  /// Per-domain shares, keyed by attribute key.
  std::map<std::string, double> domain_mix = {{"gender", 0.26}, {"location", 0.55}, {"constellation", 0.19}};
  /// Share of contradictions produced by rewriting an entailed example.
  double rewrite_fraction = 1.0 / 3.0;
  /// Share of profiles whose location names a province only.
  double province_only_fraction = 0.3;
  /// Share of city-level contradictions that stay inside the profile's province.
  double same_province_fraction = 0.5;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Largest-remainder apportionment of `total` over `shares`.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& shares);

struct GeneratedCorpus {
  Dataset train;
  Dataset valid;
  Dataset test;
  /// Adversarial subset whose linearized surface misplaces the domain value.
  Dataset keyswap;
};

/// Seeded, oracle-consistent corpus. No (profile, response) surface pair
/// repeats anywhere in the corpus.
GeneratedCorpus generate(const GenConfig& cfg, const TemplateBank& bank, const LocationOntology& ontology);

/// Character-level Levenshtein distance.
std::size_t edit_distance(std::string_view a, std::string_view b);

/// Closed candidate set of profile values for a domain.
std::vector<std::string> domain_candidates(std::string_view domain, const TemplateBank& bank,
                                           const LocationOntology& ontology);
bool values_consistent(std::string_view domain, std::string_view profile_value, std::string_view revealed_value);

/// Turns an entailed example into a contradicted one by replacing the profile
/// value of the annotated key with the conflicting candidate at minimal edit
/// distance from the original (first in candidate order on ties).
Example rewrite_contradiction(const Example& ex, const TemplateBank& bank, const LocationOntology& ontology);

struct TemplateMatch {
  const ResponseTemplate* tmpl = nullptr;
  std::vector<std::pair<SlotKind, std::string>> slots;
  /// Attribute value the speaker reveals about themself, if any.
  std::optional<std::string> revealed;
};

/// Recovers the template and slot fillers behind a generated response.
TemplateMatch match_response(const Example& ex, const TemplateBank& bank, const LocationOntology& ontology);

/// Label implied by the relation semantics for a generated example.
Label rule_oracle(const Example& ex, const TemplateBank& bank, const LocationOntology& ontology);

}  // namespace kvconsist
