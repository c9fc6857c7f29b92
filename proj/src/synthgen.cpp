#include "kvconsist/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <unordered_set>

#include <json.hpp>

namespace kvconsist {

using json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kGender = "gender";
constexpr std::string_view kLocation = "location";
constexpr std::string_view kConstellation = "constellation";

template <class T>
const T& pick(const std::vector<T>& items, std::mt19937_64& rng) {
  if (items.empty()) throw Error("cannot sample from an empty list", "generator");
  std::uniform_int_distribution<std::size_t> d(0, items.size() - 1);
  return items[d(rng)];
}

bool coin(double p, std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

bool contains(const std::vector<std::string>& v, std::string_view s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::vector<std::string> without(const std::vector<std::string>& v, std::string_view s) {
  std::vector<std::string> out;
  for (const auto& x : v)
    if (x != s) out.push_back(x);
  return out;
}

std::vector<std::string> flatten(const std::map<std::string, std::vector<std::string>>& m) {
  std::vector<std::string> out;
  for (const auto& [_, v] : m) out.insert(out.end(), v.begin(), v.end());
  return out;
}

bool is_revealing_slot(SlotKind k) { return k != SlotKind::kOther; }

bool slot_allowed(std::string_view domain, SlotKind k) {
  if (domain == kGender) return k == SlotKind::kValue || k == SlotKind::kPartner;
  if (domain == kConstellation) return k == SlotKind::kValue || k == SlotKind::kOther;
  if (domain == kLocation) return k == SlotKind::kCity || k == SlotKind::kProvince;
  return false;
}

}  // namespace

LocationOntology::LocationOntology()
    : LocationOntology({{"Jiangsu", {"Nanjing", "Suzhou", "Wuxi", "Changzhou", "Yangzhou"}},
                        {"Shaanxi", {"Xi'an", "Hancheng", "Xianyang", "Baoji", "Yan'an"}},
                        {"Henan", {"Zhengzhou", "Anyang", "Luoyang", "Kaifeng", "Xinxiang"}},
                        {"Guangdong", {"Guangzhou", "Shenzhen", "Foshan", "Dongguan", "Zhuhai"}},
                        {"Zhejiang", {"Hangzhou", "Ningbo", "Wenzhou", "Shaoxing", "Jiaxing"}},
                        {"Shandong", {"Jinan", "Qingdao", "Yantai", "Weifang", "Zibo"}},
                        {"Sichuan", {"Chengdu", "Mianyang", "Leshan", "Yibin", "Deyang"}},
                        {"Hubei", {"Wuhan", "Yichang", "Xiangyang", "Jingzhou", "Huangshi"}},
                        {"Fujian", {"Fuzhou", "Xiamen", "Quanzhou", "Putian", "Zhangzhou"}},
                        {"Hunan", {"Changsha", "Zhuzhou", "Xiangtan", "Hengyang", "Yueyang"}}}) {}

LocationOntology::LocationOntology(std::vector<Province> provinces) : provinces_(std::move(provinces)) {
  std::set<std::string> names;
  for (const auto& p : provinces_) {
    if (p.name.empty() || split_tokens(p.name).size() != 1)
      throw Error("province names must be single tokens", "ontology");
    if (p.cities.empty()) throw Error("province '" + p.name + "' has no cities", "ontology");
    if (!names.insert(p.name).second) throw Error("province '" + p.name + "' listed twice", "ontology");
  }
  for (const auto& p : provinces_) {
    for (const auto& c : p.cities) {
      if (split_tokens(c).size() != 1) throw Error("city names must be single tokens", "ontology");
      if (names.count(c) || !city_to_province_.emplace(c, p.name).second)
        throw Error("city '" + c + "' is not unique across the ontology", "ontology");
    }
  }
}

bool LocationOntology::is_province(std::string_view name) const {
  return std::any_of(provinces_.begin(), provinces_.end(), [&](const Province& p) { return p.name == name; });
}

bool LocationOntology::is_city(std::string_view name) const { return city_to_province_.find(name) != city_to_province_.end(); }

const std::string* LocationOntology::province_of(std::string_view city) const {
  auto it = city_to_province_.find(city);
  return it == city_to_province_.end() ? nullptr : &it->second;
}

std::vector<std::string> LocationOntology::location_values() const {
  std::vector<std::string> out;
  for (const auto& p : provinces_) {
    out.push_back(p.name);
    for (const auto& c : p.cities) out.push_back(p.name + " " + c);
  }
  return out;
}

Place LocationOntology::parse_value(std::string_view value) {
  const auto toks = split_tokens(value);
  if (toks.empty() || toks.size() > 2) throw Error("location value '" + std::string(value) + "' is malformed", "ontology");
  Place p{toks[0], std::nullopt};
  if (toks.size() == 2) p.city = toks[1];
  return p;
}

std::string LocationOntology::value_for(std::string_view place) const {
  if (is_province(place)) return std::string(place);
  if (const auto* prov = province_of(place)) return *prov + " " + std::string(place);
  throw Error("unknown place '" + std::string(place) + "'", "ontology");
}

bool LocationOntology::consistent(std::string_view profile_value, std::string_view revealed_value) {
  const Place a = parse_value(profile_value);
  const Place b = parse_value(revealed_value);
  if (a.province != b.province) return false;
  return !a.city || !b.city || *a.city == *b.city;
}

std::optional<SlotKind> slot_kind(std::string_view token) {
  if (token == "{VALUE}") return SlotKind::kValue;
  if (token == "{PARTNER}") return SlotKind::kPartner;
  if (token == "{CITY}") return SlotKind::kCity;
  if (token == "{PROVINCE}") return SlotKind::kProvince;
  if (token == "{OTHER}") return SlotKind::kOther;
  return std::nullopt;
}

TemplateBank TemplateBank::defaults() {
  TemplateBank b;
  b.genders = {"female", "male"};
  b.constellations = {"Aries", "Taurus", "Gemini", "Cancer", "Leo", "Virgo",
                      "Libra", "Scorpio", "Sagittarius", "Capricorn", "Aquarius", "Pisces"};
  b.self_nouns = {{"female", {"girl", "woman", "lady"}}, {"male", {"boy", "man", "guy"}}};
  b.partner_nouns = {{"female", {"boyfriend", "husband"}}, {"male", {"girlfriend", "wife"}}};
  b.posts = {
      {"gender",
       {"too cold and you girls will catch cold", "who wants to go shopping this weekend ?",
        "bro are you free tonight ?", "what did you do on valentine's day ?"}},
      {"location",
       {"where are you now ?", "did you build it on the site ?", "i am not here",
        "how is the weather over there ?"}},
      {"constellation",
       {"bro are you also a {OTHER} ?", "what is your sign ?", "which constellation is the most stubborn ?"}},
  };
  b.responses = {
      // gender, self-revealing
      {"g-self-1", "gender", "i am a {VALUE}", true, {4, 4, 4, 0}},
      {"g-self-2", "gender", "as a {VALUE} i love this", true, {3, 3, 5, 5, 0, 5}},
      {"g-self-3", "gender", "i am hanging out with my {PARTNER}", true, {3, 3, 0, 3, 3, 7, 5}},
      {"g-self-4", "gender", "my {PARTNER} bought me flowers today", true, {2, 3, 0, 3, 3, 3}},
      {"g-self-5", "gender", "i am a {VALUE} who loves football", true, {4, 4, 4, 0, 6, 4, 6}},
      {"g-self-6", "gender", "going on a date with my {PARTNER} tonight", true, {0, 1, 4, 2, 1, 7, 5, 1}},
      // gender, irrelevant
      {"g-irr-1", "gender", "go find your {PARTNER} ha ha", false, {0, 1, 4, 2, 1, 1}},
      {"g-irr-2", "gender", "she is a {VALUE} from our class", false, {4, 4, 4, 0, 4, 7, 5}},
      {"g-irr-3", "gender", "my sister has a {PARTNER} now", false, {2, 3, 0, 5, 3, 3}},
      {"g-irr-4", "gender", "that {VALUE} over there is funny", false, {2, 6, 2, 3, 6, 0}},
      {"g-irr-5", "gender", "do you have a {PARTNER} ?", false, {3, 3, 0, 5, 3, 3}},
      {"g-irr-6", "gender", "every {VALUE} should learn to cook", false, {2, 4, 4, 0, 6, 4}},
      // constellation, self-revealing
      {"c-self-1", "constellation", "i am a {VALUE}", true, {4, 4, 4, 0}},
      {"c-self-2", "constellation", "i am an {VALUE} bullied by {OTHER}", true, {4, 4, 4, 0, 4, 5, 6}},
      {"c-self-3", "constellation", "as a {VALUE} i get along with {OTHER} people", true, {3, 3, 5, 5, 0, 5, 5, 9, 7}},
      {"c-self-4", "constellation", "my sign is {VALUE} not {OTHER}", true, {2, 4, 4, 0, 6, 4}},
      {"c-self-5", "constellation", "typical {VALUE} like me", true, {2, 0, 2, 3}},
      // constellation, irrelevant
      {"c-irr-1", "constellation", "my best friend is a {VALUE}", false, {3, 3, 6, 6, 6, 0}},
      {"c-irr-2", "constellation", "{VALUE} and {OTHER} are a good match", false, {7, 3, 1, 7, 7, 7, 0}},
      {"c-irr-3", "constellation", "are you a {VALUE} ?", false, {4, 4, 4, 0, 4}},
      {"c-irr-4", "constellation", "i heard {VALUE} people are stubborn", false, {2, 0, 4, 6, 6, 2}},
      {"c-irr-5", "constellation", "which sign matches {VALUE} best", false, {2, 3, 0, 3, 3}},
      // location, self-revealing
      {"l-self-1", "location", "i live in {CITY}", true, {2, 0, 2, 3}},
      {"l-self-2", "location", "i live in {PROVINCE}", true, {2, 0, 2, 3}},
      {"l-self-3", "location", "we are in {CITY} now", true, {2, 0, 2, 3, 2}},
      {"l-self-4", "location", "i just moved to {PROVINCE} last month", true, {3, 3, 0, 3, 4, 7, 3}},
      {"l-self-5", "location", "i work in {CITY} these days", true, {2, 0, 2, 3, 6, 2}},
      {"l-self-6", "location", "greetings from {CITY} where i live", true, {0, 1, 2, 6, 6, 3}},
      {"l-self-7", "location", "emm i am back home in {PROVINCE}", true, {3, 3, 0, 3, 3, 3, 6}},
      {"l-self-8", "location", "we are in {CITY}", true, {2, 0, 2, 3}},
      // location, irrelevant
      {"l-irr-1", "location", "she lives in {CITY}", false, {2, 0, 2, 3}},
      {"l-irr-2", "location", "i also hope to visit {CITY} one day", false, {3, 3, 0, 5, 3, 5, 8, 5}},
      {"l-irr-3", "location", "i am interested in the history of {CITY}", false, {3, 3, 0, 3, 6, 4, 6, 7}},
      {"l-irr-4", "location", "i want the {PROVINCE} soy-braised pork", false, {2, 0, 6, 6, 6, 2}},
      {"l-irr-5", "location", "my brother works in {PROVINCE}", false, {2, 3, 0, 3, 4}},
      {"l-irr-6", "location", "have you ever been to {CITY} ?", false, {4, 4, 4, 0, 4, 5, 4}},
  };
  return b;
}

const ResponseTemplate* TemplateBank::find(std::string_view id) const {
  for (const auto& r : responses)
    if (r.id == id) return &r;
  return nullptr;
}

void TemplateBank::validate(const LocationOntology& ontology) const {
  if (genders.size() < 2) throw Error("template bank needs at least two genders", "templates");
  if (constellations.size() < 2) throw Error("template bank needs at least two constellations", "templates");
  if (ontology.provinces().size() < 2) throw Error("ontology needs at least two provinces", "templates");
  for (const auto& g : genders) {
    if (!self_nouns.count(g) || self_nouns.at(g).empty()) throw Error("no self nouns for gender '" + g + "'", "templates");
    if (!partner_nouns.count(g) || partner_nouns.at(g).empty())
      throw Error("no partner nouns for gender '" + g + "'", "templates");
  }
  std::set<std::string> ids;
  for (const auto& r : responses) {
    if (!ids.insert(r.id).second) throw Error("template id '" + r.id + "' repeats", "templates");
    const auto toks = split_tokens(r.text);
    if (toks.empty()) throw Error("template '" + r.id + "' is empty", "templates");
    int revealing = 0;
    for (const auto& t : toks) {
      if (t.front() == '{' && !slot_kind(t)) throw Error("template '" + r.id + "' has unknown slot " + t, "templates");
      if (auto k = slot_kind(t)) {
        if (!slot_allowed(r.domain, *k)) throw Error("template '" + r.id + "' uses slot " + t + " outside its domain", "templates");
        if (is_revealing_slot(*k)) ++revealing;
      }
    }
    if (r.self_revealing && revealing != 1)
      throw Error("self-revealing template '" + r.id + "' must have exactly one attribute slot", "templates");
    if (!r.heads.empty()) {
      if (r.heads.size() != toks.size()) throw Error("template '" + r.id + "' parse does not cover its tokens", "templates");
      if (std::count(r.heads.begin(), r.heads.end(), 0) != 1)
        throw Error("template '" + r.id + "' parse must have exactly one root", "templates");
    }
  }
}

TemplateBank load_template_bank(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open template bank '" + path.string() + "'");
  TemplateBank b;
  try {
    const json j = json::parse(in);
    b.genders = j.at("genders").get<std::vector<std::string>>();
    b.constellations = j.at("constellations").get<std::vector<std::string>>();
    b.self_nouns = j.at("self_nouns").get<std::map<std::string, std::vector<std::string>>>();
    b.partner_nouns = j.at("partner_nouns").get<std::map<std::string, std::vector<std::string>>>();
    b.posts = j.at("posts").get<std::map<std::string, std::vector<std::string>>>();
    for (const auto& r : j.at("responses")) {
      b.responses.push_back({r.at("id").get<std::string>(), r.at("domain").get<std::string>(),
                             r.at("text").get<std::string>(), r.at("self_revealing").get<bool>(),
                             r.value("heads", std::vector<int>{})});
    }
  } catch (const json::exception& e) {
    throw Error("template bank '" + path.string() + "': " + e.what(), "templates");
  }
  return b;
}

void save_template_bank(const TemplateBank& bank, const std::filesystem::path& path) {
  json j;
  j["genders"] = bank.genders;
  j["constellations"] = bank.constellations;
  j["self_nouns"] = bank.self_nouns;
  j["partner_nouns"] = bank.partner_nouns;
  j["posts"] = bank.posts;
  j["responses"] = json::array();
  for (const auto& r : bank.responses)
    j["responses"].push_back(
        {{"id", r.id}, {"domain", r.domain}, {"text", r.text}, {"self_revealing", r.self_revealing}, {"heads", r.heads}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

LocationOntology load_ontology(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ontology '" + path.string() + "'");
  std::vector<Province> provinces;
  try {
    const json j = json::parse(in);
    for (const auto& p : j.at("provinces"))
      provinces.push_back({p.at("name").get<std::string>(), p.at("cities").get<std::vector<std::string>>()});
  } catch (const json::exception& e) {
    throw Error("ontology '" + path.string() + "': " + e.what(), "ontology");
  }
  return LocationOntology(std::move(provinces));
}

void save_ontology(const LocationOntology& ontology, const std::filesystem::path& path) {
  json j;
  j["provinces"] = json::array();
  for (const auto& p : ontology.provinces()) j["provinces"].push_back({{"name", p.name}, {"cities", p.cities}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

void GenConfig::validate() const {
  auto check_mix = [](double sum, bool nonneg, const char* what) {
    if (!nonneg) throw Error(std::string(what) + " has a negative share", "config");
    if (std::abs(sum - 1.0) > 1e-6) throw Error(std::string(what) + " must sum to 1", "config");
  };
  check_mix(label_mix[0] + label_mix[1] + label_mix[2],
            std::all_of(label_mix.begin(), label_mix.end(), [](double v) { return v >= 0.0; }), "label mix");
  double sum = 0.0;
  bool nonneg = true;
  for (const auto& [k, v] : domain_mix) {
    if (k != kGender && k != kLocation && k != kConstellation)
      throw Error("domain mix names unsupported domain '" + k + "'", "config");
    sum += v;
    nonneg = nonneg && v >= 0.0;
  }
  check_mix(sum, nonneg, "domain mix");
  for (double f : {rewrite_fraction, province_only_fraction, same_province_fraction})
    if (f < 0.0 || f > 1.0) throw Error("generator fractions must lie in [0, 1]", "config");
}

std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& shares) {
  std::vector<std::size_t> out(shares.size(), 0);
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t used = 0;
  for (std::size_t i = 0; i < shares.size(); ++i) {
    const double exact = shares[i] * static_cast<double>(total);
    out[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    used += out[i];
    rema.emplace_back(exact - static_cast<double>(out[i]), i);
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < total && k < rema.size(); ++k, ++used) ++out[rema[k].second];
  return out;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<std::string> domain_candidates(std::string_view domain, const TemplateBank& bank,
                                           const LocationOntology& ontology) {
  if (domain == kGender) return bank.genders;
  if (domain == kConstellation) return bank.constellations;
  if (domain == kLocation) return ontology.location_values();
  throw Error("no candidate set for domain '" + std::string(domain) + "'", "generator");
}

bool values_consistent(std::string_view domain, std::string_view profile_value, std::string_view revealed_value) {
  if (domain == kLocation) return LocationOntology::consistent(profile_value, revealed_value);
  return profile_value == revealed_value;
}

Example rewrite_contradiction(const Example& ex, const TemplateBank& bank, const LocationOntology& ontology) {
  if (ex.label != Label::kEntailed) throw Error("rewrite_contradiction expects an ENTAILED example", "precondition");
  if (!ex.attribute) throw Error("rewrite_contradiction expects an annotated attribute", "precondition");
  const std::string& key = ex.attribute->key;
  const std::string* original = ex.profile.find(key);
  if (!original) throw Error("profile has no value for '" + key + "'", "precondition");

  const std::string* best = nullptr;
  std::size_t best_dist = 0;
  const auto candidates = domain_candidates(key, bank, ontology);
  for (const auto& c : candidates) {
    if (values_consistent(key, c, ex.attribute->value)) continue;
    const std::size_t d = edit_distance(*original, c);
    if (!best || d < best_dist) {
      best = &c;
      best_dist = d;
    }
  }
  if (!best) throw Error("no candidate for '" + key + "' conflicts with '" + ex.attribute->value + "'", "generator");
  Example out = ex;
  out.profile = ex.profile.with_value(key, *best);
  out.label = Label::kContradicted;
  return out;
}

TemplateMatch match_response(const Example& ex, const TemplateBank& bank, const LocationOntology& ontology) {
  const auto self_nouns = flatten(bank.self_nouns);
  const auto partner_nouns = flatten(bank.partner_nouns);
  auto fits = [&](SlotKind k, const std::string& tok) {
    switch (k) {
      case SlotKind::kValue:
        return ex.domain == kGender ? contains(self_nouns, tok) : contains(bank.constellations, tok);
      case SlotKind::kPartner: return contains(partner_nouns, tok);
      case SlotKind::kCity: return ontology.is_city(tok);
      case SlotKind::kProvince: return ontology.is_province(tok);
      case SlotKind::kOther: return contains(bank.constellations, tok);
    }
    return false;
  };

  for (const auto& r : bank.responses) {
    if (r.domain != ex.domain) continue;
    const auto toks = split_tokens(r.text);
    if (toks.size() != ex.response.size()) continue;
    TemplateMatch m;
    m.tmpl = &r;
    bool ok = true;
    for (std::size_t i = 0; i < toks.size() && ok; ++i) {
      if (auto k = slot_kind(toks[i])) {
        ok = fits(*k, ex.response[i]);
        if (ok) m.slots.emplace_back(*k, ex.response[i]);
      } else {
        ok = toks[i] == ex.response[i];
      }
    }
    if (!ok) continue;
    if (r.self_revealing) {
      for (const auto& [k, tok] : m.slots) {
        if (!is_revealing_slot(k)) continue;
        const auto& table = k == SlotKind::kPartner ? bank.partner_nouns : bank.self_nouns;
        if (ex.domain == kGender) {
          for (const auto& [g, nouns] : table)
            if (contains(nouns, tok)) m.revealed = g;
        } else if (ex.domain == kLocation) {
          m.revealed = ontology.value_for(tok);
        } else {
          m.revealed = tok;
        }
      }
    }
    return m;
  }
  throw Error("response '" + join_tokens(ex.response) + "' matches no template of domain '" + ex.domain + "'",
              "template");
}

Label rule_oracle(const Example& ex, const TemplateBank& bank, const LocationOntology& ontology) {
  const TemplateMatch m = match_response(ex, bank, ontology);
  if (!m.tmpl->self_revealing) return Label::kIrrelevant;
  if (!m.revealed) throw Error("template '" + m.tmpl->id + "' reveals no attribute", "template");
  const std::string* value = ex.profile.find(ex.domain);
  if (!value) throw Error("profile has no '" + ex.domain + "' value", "precondition");
  return values_consistent(ex.domain, *value, *m.revealed) ? Label::kEntailed : Label::kContradicted;
}

namespace {

class Generator {
 public:
  Generator(const GenConfig& cfg, const TemplateBank& bank, const LocationOntology& ontology)
      : cfg_(cfg), bank_(bank), onto_(ontology), rng_(cfg.seed) {
    for (const auto& r : bank_.responses) (r.self_revealing ? self_ : irrelevant_)[r.domain].push_back(&r);
    self_nouns_ = flatten(bank_.self_nouns);
    partner_nouns_ = flatten(bank_.partner_nouns);
    for (const auto& p : onto_.provinces()) {
      provinces_.push_back(p.name);
      for (const auto& c : p.cities) cities_.push_back(c);
    }
  }

  Dataset split(std::size_t n, Split which, bool keyswap) {
    std::vector<double> domain_shares;
    std::vector<std::string> domains;
    for (const auto& [k, v] : cfg_.domain_mix) {
      domains.push_back(k);
      domain_shares.push_back(v);
    }
    std::vector<std::pair<Label, std::string>> cells;
    const auto label_counts = apportion(n, {cfg_.label_mix.begin(), cfg_.label_mix.end()});
    for (std::size_t l = 0; l < kNumLabels; ++l) {
      const auto per_domain = apportion(label_counts[l], domain_shares);
      for (std::size_t d = 0; d < domains.size(); ++d)
        for (std::size_t k = 0; k < per_domain[d]; ++k) cells.emplace_back(kAllLabels[l], domains[d]);
    }
    std::shuffle(cells.begin(), cells.end(), rng_);

    Dataset ds;
    ds.split = which;
    ds.examples.reserve(n);
    for (const auto& [label, domain] : cells) {
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        Example ex = make(label, domain);
        if (keyswap) {
          const int pos = static_cast<int>(*ex.profile.position_of(domain));
          std::vector<int> others;
          for (int i = 0; i < static_cast<int>(ex.profile.size()); ++i)
            if (i != pos) others.push_back(i);
          ex.surface_swap = std::array<int, 2>{pos, pick(others, rng_)};
        }
        if (seen_.insert(surface_key(ex)).second) {
          ds.examples.push_back(std::move(ex));
          placed = true;
        }
      }
      if (!placed) throw Error("generator could not find a fresh (profile, response) pair; ontology too small", "infeasible");
    }
    return ds;
  }

 private:
  static std::string surface_key(const Example& ex) {
    std::string k;
    for (const auto& [key, value] : ex.profile.pairs()) k += key + "=" + value + ";";
    k += "|" + join_tokens(ex.response);
    if (ex.surface_swap) k += "|swap";
    return k;
  }

  Profile random_profile() {
    const std::string& province = pick(provinces_, rng_);
    std::string location = province;
    if (!coin(cfg_.province_only_fraction, rng_)) {
      for (const auto& p : onto_.provinces())
        if (p.name == province) location += " " + pick(p.cities, rng_);
    }
    return Profile({{"gender", pick(bank_.genders, rng_)},
                    {"location", location},
                    {"constellation", pick(bank_.constellations, rng_)}});
  }

  // Revealed attribute value for a self-revealing slot.
  std::string revealed_value(const std::string& domain, SlotKind slot, const Profile& profile, bool consistent) {
    const std::string& current = *profile.find(domain);
    if (domain == kGender || domain == kConstellation) {
      const auto& pool = domain == kGender ? bank_.genders : bank_.constellations;
      return consistent ? current : pick(without(pool, current), rng_);
    }
    const Place place = LocationOntology::parse_value(current);
    if (slot == SlotKind::kProvince)
      return consistent ? place.province : pick(without(provinces_, place.province), rng_);
    const Province* home = nullptr;
    for (const auto& p : onto_.provinces())
      if (p.name == place.province) home = &p;
    if (!home) throw Error("profile province '" + place.province + "' is not in the ontology", "generator");
    if (consistent) return place.city ? *place.city : pick(home->cities, rng_);
    if (place.city && home->cities.size() > 1 && coin(cfg_.same_province_fraction, rng_))
      return pick(without(home->cities, *place.city), rng_);
    std::vector<std::string> elsewhere;
    for (const auto& c : cities_)
      if (*onto_.province_of(c) != place.province) elsewhere.push_back(c);
    return pick(elsewhere, rng_);
  }

  // Surface token for a slot. `revealed` is set only for the attribute slot of
  // a self-revealing template.
  std::string fill(const std::string& domain, SlotKind slot, const std::optional<std::string>& revealed,
                   const std::string& exclude) {
    switch (slot) {
      case SlotKind::kValue:
        if (domain == kGender) return revealed ? pick(bank_.self_nouns.at(*revealed), rng_) : pick(self_nouns_, rng_);
        return revealed ? *revealed : pick(without(bank_.constellations, exclude), rng_);
      case SlotKind::kPartner:
        return revealed ? pick(bank_.partner_nouns.at(*revealed), rng_) : pick(partner_nouns_, rng_);
      case SlotKind::kCity: return revealed ? *revealed : pick(cities_, rng_);
      case SlotKind::kProvince: return revealed ? *revealed : pick(provinces_, rng_);
      case SlotKind::kOther: return pick(without(bank_.constellations, exclude), rng_);
    }
    return {};
  }

  Tokens post_for(const std::string& domain) {
    Tokens out;
    auto it = bank_.posts.find(domain);
    if (it == bank_.posts.end() || it->second.empty()) return out;
    for (const auto& t : split_tokens(pick(it->second, rng_))) {
      auto k = slot_kind(t);
      out.push_back(k ? fill(domain, *k, std::nullopt, {}) : t);
    }
    return out;
  }

  Example make(Label label, const std::string& domain) {
    if (label == Label::kContradicted && coin(cfg_.rewrite_fraction, rng_))
      return rewrite_contradiction(make(Label::kEntailed, domain), bank_, onto_);

    Example ex;
    ex.profile = random_profile();
    ex.domain = domain;
    ex.label = label;
    ex.post = post_for(domain);

    const bool self = label != Label::kIrrelevant;
    const auto& pool = self ? self_ : irrelevant_;
    auto it = pool.find(domain);
    if (it == pool.end() || it->second.empty())
      throw Error("no " + std::string(self ? "self-revealing" : "irrelevant") + " templates for domain '" + domain + "'",
                  "infeasible");
    const ResponseTemplate& t = *pick(it->second, rng_);
    const auto toks = split_tokens(t.text);

    std::string first_value;  // keeps {OTHER} distinct from the attribute word
    for (const auto& tok : toks) {
      auto k = slot_kind(tok);
      if (!k) {
        ex.response.push_back(tok);
        continue;
      }
      std::string filled;
      if (self && is_revealing_slot(*k)) {
        const std::string value = revealed_value(domain, *k, ex.profile, label == Label::kEntailed);
        filled = fill(domain, *k, value, {});
        ex.attribute = AttributePair{domain, domain == kLocation ? onto_.value_for(value) : value};
      } else {
        filled = fill(domain, *k, std::nullopt, first_value);
      }
      if (first_value.empty()) first_value = filled;
      ex.response.push_back(std::move(filled));
    }
    if (!t.heads.empty()) {
      std::vector<ParseArc> arcs;
      for (std::size_t i = 0; i < t.heads.size(); ++i) arcs.push_back({static_cast<int>(i) + 1, t.heads[i]});
      ex.response_parse = std::move(arcs);
    }
    return ex;
  }

  const GenConfig& cfg_;
  const TemplateBank& bank_;
  const LocationOntology& onto_;
  std::mt19937_64 rng_;
  std::map<std::string, std::vector<const ResponseTemplate*>> self_, irrelevant_;
  std::vector<std::string> self_nouns_, partner_nouns_, provinces_, cities_;
  std::unordered_set<std::string> seen_;
};

}  // namespace

GeneratedCorpus generate(const GenConfig& cfg, const TemplateBank& bank, const LocationOntology& ontology) {
  cfg.validate();
  bank.validate(ontology);
  Generator gen(cfg, bank, ontology);
  GeneratedCorpus out;
  out.train = gen.split(cfg.train, Split::kTrain, false);
  out.valid = gen.split(cfg.valid, Split::kValid, false);
  out.test = gen.split(cfg.test, Split::kTest, false);
  out.keyswap = gen.split(cfg.keyswap, Split::kTest, true);
  return out;
}

}  // namespace kvconsist
