#include "diffuforge/templating.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <set>

#include <fmt/format.h>

namespace diffuforge {

namespace {

bool is_name_char(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' ||
         c == '-';
}

}  // namespace

TemplateText TemplateText::parse(const std::string& text) {
  TemplateText out;
  std::string literal;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '{') {
      if (i + 1 < text.size() && text[i + 1] == '{') {
        literal += '{';
        i += 2;
        continue;
      }
      std::size_t j = i + 1;
      while (j < text.size() && is_name_char(text[j])) ++j;
      if (j == i + 1 || j >= text.size() || text[j] != '}') {
        throw TemplateError(fmt::format("unterminated or malformed placeholder at offset {}", i), i);
      }
      if (!literal.empty()) out.segments_.emplace_back(std::move(literal));
      literal.clear();
      out.segments_.emplace_back(Placeholder{text.substr(i + 1, j - i - 1), i});
      i = j + 1;
    } else if (c == '}') {
      if (i + 1 < text.size() && text[i + 1] == '}') {
        literal += '}';
        i += 2;
        continue;
      }
      throw TemplateError(fmt::format("unmatched '}}' at offset {}", i), i);
    } else {
      literal += c;
      ++i;
    }
  }
  if (!literal.empty()) out.segments_.emplace_back(std::move(literal));
  return out;
}

std::vector<std::string> TemplateText::placeholder_names() const {
  std::vector<std::string> names;
  for (const auto& seg : segments_) {
    if (const auto* p = std::get_if<Placeholder>(&seg)) names.push_back(p->name);
  }
  return names;
}

std::string TemplateText::render(const std::map<std::string, std::string>& bindings) const {
  std::string out;
  for (const auto& seg : segments_) {
    if (const auto* lit = std::get_if<std::string>(&seg)) {
      out += *lit;
    } else {
      const auto& p = std::get<Placeholder>(seg);
      const auto it = bindings.find(p.name);
      if (it == bindings.end()) {
        throw TemplateError(fmt::format("placeholder '{{{}}}' has no binding", p.name), p.offset);
      }
      out += it->second;
    }
  }
  return out;
}

std::size_t PromptTemplate::combination_count() const {
  std::size_t total = 1;
  for (const auto& a : attributes) {
    if (a.values.empty()) return 0;
    if (total > std::numeric_limits<std::size_t>::max() / a.values.size()) {
      return std::numeric_limits<std::size_t>::max();
    }
    total *= a.values.size();
  }
  return total;
}

PromptTemplate parse_template(const nlohmann::ordered_json& raw) {
  std::vector<std::string> errors;
  PromptTemplate t;
  if (!raw.is_object()) throw ValidationError("template entry must be an object");

  if (raw.contains("id") && raw["id"].is_string() && !raw["id"].get<std::string>().empty()) {
    t.template_id = raw["id"].get<std::string>();
  } else {
    errors.push_back("template entry needs a non-empty string \"id\"");
  }
  const std::string where = t.template_id.empty() ? std::string("template") : "template '" + t.template_id + "'";

  auto parse_text = [&](const std::string& field, const std::string& text) -> std::optional<TemplateText> {
    try {
      return TemplateText::parse(text);
    } catch (const TemplateError& e) {
      errors.push_back(fmt::format("{}: {}: {}", where, field, e.what()));
      return std::nullopt;
    }
  };

  if (raw.contains("prompt") && raw["prompt"].is_string()) {
    t.body_source = raw["prompt"].get<std::string>();
    if (auto body = parse_text("prompt", t.body_source)) t.body = std::move(*body);
  } else {
    errors.push_back(where + ": missing string \"prompt\"");
  }
  if (raw.contains("negative_prompt") && !raw["negative_prompt"].is_null()) {
    if (raw["negative_prompt"].is_string()) {
      t.negative_source = raw["negative_prompt"].get<std::string>();
      t.negative_body = parse_text("negative_prompt", *t.negative_source);
    } else {
      errors.push_back(where + ": \"negative_prompt\" must be a string");
    }
  }

  if (raw.contains("attributes")) {
    const auto& attrs = raw["attributes"];
    if (!attrs.is_object()) {
      errors.push_back(where + ": \"attributes\" must be an object");
    } else {
      for (const auto& [name, values] : attrs.items()) {
        Attribute a{name, {}};
        bool ok = true;
        if (name.empty() || !std::all_of(name.begin(), name.end(), is_name_char)) {
          errors.push_back(fmt::format("{}: attribute name '{}' must match [A-Za-z0-9_-]+", where, name));
          ok = false;
        }
        if (!values.is_array() || values.empty()) {
          errors.push_back(fmt::format("{}: attribute '{}' needs a non-empty list of values", where, name));
          continue;
        }
        std::set<std::string> seen;
        for (const auto& v : values) {
          if (!v.is_string()) {
            errors.push_back(fmt::format("{}: attribute '{}' values must be strings", where, name));
            ok = false;
            break;
          }
          const auto s = v.get<std::string>();
          if (!seen.insert(s).second) {
            errors.push_back(fmt::format("{}: attribute '{}' repeats value '{}'", where, name, s));
            ok = false;
          }
          a.values.push_back(s);
        }
        if (ok) t.attributes.push_back(std::move(a));
      }
    }
  }

  std::set<std::string> defined;
  for (const auto& a : t.attributes) defined.insert(a.name);
  if (raw.contains("attributes") && raw["attributes"].is_object()) {
    // Attributes that failed validation still count as defined so the
    // placeholder check does not double-report them.
    for (const auto& [name, _] : raw["attributes"].items()) defined.insert(name);
  }

  auto check_placeholders = [&](const std::string& field, const TemplateText& text) {
    for (const auto& seg : text.segments()) {
      if (const auto* p = std::get_if<TemplateText::Placeholder>(&seg); p && !defined.count(p->name)) {
        errors.push_back(fmt::format("{}: {}: placeholder '{{{}}}' at offset {} has no attribute definition",
                                     where, field, p->name, p->offset));
      }
    }
  };
  check_placeholders("prompt", t.body);
  if (t.negative_body) check_placeholders("negative_prompt", *t.negative_body);

  if (raw.contains("tokens_of_interest") && !raw["tokens_of_interest"].is_null()) {
    const auto& toks = raw["tokens_of_interest"];
    if (!toks.is_array()) {
      errors.push_back(where + ": \"tokens_of_interest\" must be a list of strings");
    } else {
      for (const auto& tok : toks) {
        if (!tok.is_string() || tok.get<std::string>().empty()) {
          errors.push_back(where + ": tokens_of_interest entries must be non-empty strings");
          continue;
        }
        const auto s = tok.get<std::string>();
        if (auto parsed = parse_text("tokens_of_interest", s)) check_placeholders("tokens_of_interest", *parsed);
        t.tokens_of_interest.push_back(s);
      }
    }
  }

  if (raw.contains("count") && !raw["count"].is_null()) {
    if (raw["count"].is_number_integer() && raw["count"].get<long long>() >= 1) {
      t.count = raw["count"].get<std::size_t>();
    } else {
      errors.push_back(where + ": \"count\" must be an integer >= 1");
    }
  }
  if (raw.contains("seed") && !raw["seed"].is_null()) {
    if (raw["seed"].is_number_integer()) {
      t.seed = raw["seed"].get<std::uint64_t>();
    } else {
      errors.push_back(where + ": \"seed\" must be an integer");
    }
  }
  if (raw.contains("generation")) t.generation = raw["generation"];

  if (!errors.empty()) throw ValidationErrors(std::move(errors));
  return t;
}

namespace {

ExpandedPrompt build_prompt(const PromptTemplate& t, const std::vector<std::size_t>& choice) {
  ExpandedPrompt p;
  p.template_id = t.template_id;
  for (std::size_t i = 0; i < t.attributes.size(); ++i) {
    p.bindings[t.attributes[i].name] = t.attributes[i].values[choice[i]];
  }
  p.text = t.body.render(p.bindings);
  if (t.negative_body) p.negative_text = t.negative_body->render(p.bindings);

  std::vector<std::string> tokens;
  if (!t.tokens_of_interest.empty()) {
    for (const auto& tok : t.tokens_of_interest) tokens.push_back(TemplateText::parse(tok).render(p.bindings));
  } else if (const auto it = p.bindings.find("object"); it != p.bindings.end()) {
    tokens.push_back(it->second);
  }
  for (auto& tok : tokens) {
    if (std::find(p.tokens_of_interest.begin(), p.tokens_of_interest.end(), tok) == p.tokens_of_interest.end()) {
      p.tokens_of_interest.push_back(std::move(tok));
    }
  }
  return p;
}

}  // namespace

std::vector<ExpandedPrompt> expand_all(const PromptTemplate& t, std::size_t cap) {
  const std::size_t total = t.combination_count();
  if (total > cap) {
    throw ValidationError(fmt::format(
        "template '{}' expands to {} prompts, above the cap of {}; set \"count\" to use sampling mode",
        t.template_id, total == std::numeric_limits<std::size_t>::max() ? std::string("more than 2^64")
                                                                        : std::to_string(total),
        cap));
  }
  std::vector<ExpandedPrompt> out;
  out.reserve(total);
  std::vector<std::size_t> odometer(t.attributes.size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    out.push_back(build_prompt(t, odometer));
    for (std::size_t i = odometer.size(); i-- > 0;) {
      if (++odometer[i] < t.attributes[i].values.size()) break;
      odometer[i] = 0;
    }
  }
  return out;
}

std::vector<ExpandedPrompt> sample(const PromptTemplate& t, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("sample size must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<ExpandedPrompt> out;
  out.reserve(n);
  std::vector<std::size_t> choice(t.attributes.size());
  for (std::size_t k = 0; k < n; ++k) {
    // Independent uniform picks per attribute are uniform over the product.
    for (std::size_t i = 0; i < choice.size(); ++i) {
      std::uniform_int_distribution<std::size_t> pick(0, t.attributes[i].values.size() - 1);
      choice[i] = pick(rng);
    }
    out.push_back(build_prompt(t, choice));
  }
  return out;
}

std::vector<ExpandedPrompt> expand_configured(const PromptTemplate& t, std::size_t cap) {
  if (t.count) return sample(t, *t.count, t.seed.value_or(0));
  return expand_all(t, cap);
}

}  // namespace diffuforge
