// SPDX-License-Identifier: Apache-2.0
#include "slu/features.hpp"

#include <algorithm>

#include "slu/error.hpp"
#include "slu/text.hpp"

namespace slu {

namespace {

constexpr unsigned kAllFamilies = 0x3f;

struct FamilyName {
  FeatureFamily family;
  const char* name;
};

constexpr FamilyName kFamilyNames[] = {
    {FeatureFamily::surface, "surface"},         {FeatureFamily::sem_categories, "sem"},
    {FeatureFamily::syntactic, "syn"},           {FeatureFamily::morphological, "morph"},
    {FeatureFamily::pap, "pap"},                 {FeatureFamily::mlp_conf, "conf"},
};

}  // namespace

void FeatureVectorSpec::check() const {
  if (families == 0) throw ConfigError("feature spec enables no family");
  if ((families & ~kAllFamilies) != 0) throw ConfigError("feature spec has unknown families");
  if (bins < 2) throw ConfigError("confidence discretization needs at least 2 bins");
}

FeatureVectorSpec FeatureVectorSpec::all(std::size_t bins) { return {kAllFamilies, bins}; }

FeatureVectorSpec FeatureVectorSpec::without_confidence(std::size_t bins) {
  return all(bins).without(FeatureFamily::pap).without(FeatureFamily::mlp_conf);
}

FeatureVectorSpec FeatureVectorSpec::parse(std::string_view list, std::size_t bins) {
  if (text::trim(list) == "all") return all(bins);
  FeatureVectorSpec spec{0, bins};
  for (const auto& raw : text::split(list, ',')) {
    const auto item = text::trim(raw);
    if (item.empty()) continue;
    bool found = false;
    for (const auto& f : kFamilyNames)
      if (item == f.name) {
        spec = spec.with(f.family);
        found = true;
      }
    if (!found) throw ConfigError("unknown feature family '" + std::string(item) + "'");
  }
  return spec;
}

std::string FeatureVectorSpec::to_string() const {
  std::vector<std::string> names;
  for (const auto& f : kFamilyNames)
    if (has(f.family)) names.emplace_back(f.name);
  return text::join(names, ",");
}

std::vector<DiscreteFeature> morphological_features(const Token& token) {
  const auto cps = text::decode_utf8(token.surface);
  std::vector<char32_t> lower(cps);
  for (auto& c : lower) c = text::to_lower(c);
  std::vector<DiscreteFeature> out;
  const std::size_t n = std::min<std::size_t>(4, lower.size());
  for (std::size_t len = 1; len <= n; ++len)
    out.push_back({"pre" + std::to_string(len), text::encode_utf8(lower.data(), lower.data() + len)});
  for (std::size_t len = 1; len <= n; ++len)
    out.push_back({"suf" + std::to_string(len),
                   text::encode_utf8(lower.data() + lower.size() - len, lower.data() + lower.size())});
  out.push_back({"cap", !cps.empty() && text::is_upper(cps.front()) ? "1" : "0"});
  return out;
}

std::vector<DiscreteFeature> semantic_category_features(const Token& token, const Lexicon& lexicon) {
  std::vector<DiscreteFeature> out;
  for (const auto& c : lexicon.categories_of(token.surface)) out.push_back({"cat", c});
  return out;
}

std::size_t confidence_bin(double c, std::size_t k) {
  if (k < 2) throw ConfigError("confidence discretization needs at least 2 bins");
  if (!(c >= 0.0 && c <= 1.0)) throw RangeError("confidence " + text::exact(c) + " outside [0,1]");
  const auto b = static_cast<std::size_t>(c * static_cast<double>(k));
  return std::min(b, k - 1);
}

DiscreteFeature discretize_confidence(std::string_view measure, double c, std::size_t k) {
  return {std::string(measure), std::to_string(confidence_bin(c, k))};
}

std::vector<DiscreteFeature> token_features(const Token& token, const Utterance& utt,
                                            const FeatureVectorSpec& spec) {
  spec.check();
  std::vector<DiscreteFeature> out;
  if (spec.has(FeatureFamily::surface)) out.push_back({"w", text::lowercase(token.surface)});
  if (spec.has(FeatureFamily::sem_categories))
    for (const auto& c : token.sem_categories) out.push_back({"cat", c});
  if (spec.has(FeatureFamily::syntactic)) {
    out.push_back({"lemma", token.lemma});
    out.push_back({"pos", token.pos});
    std::string gov = "ROOT";
    if (token.governor && *token.governor < utt.tokens.size())
      gov = text::lowercase(utt.tokens[*token.governor].surface);
    out.push_back({"gov", gov});
    out.push_back({"dep", token.deprel});
  }
  if (spec.has(FeatureFamily::morphological)) {
    auto m = morphological_features(token);
    out.insert(out.end(), m.begin(), m.end());
  }
  if (spec.has(FeatureFamily::pap))
    out.push_back(token.pap ? discretize_confidence("pap", *token.pap, spec.bins) : DiscreteFeature{"pap", "absent"});
  if (spec.has(FeatureFamily::mlp_conf))
    out.push_back(token.mlp_conf ? discretize_confidence("conf", *token.mlp_conf, spec.bins)
                                 : DiscreteFeature{"conf", "absent"});
  return out;
}

}  // namespace slu
