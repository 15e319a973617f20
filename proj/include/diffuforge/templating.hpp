#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffuforge/error.hpp"

namespace diffuforge {

/// Raised for template problems; `offset` is set for brace errors.
class TemplateError : public ValidationError {
 public:
  TemplateError(const std::string& message, std::optional<std::size_t> offset = std::nullopt)
      : ValidationError(message), offset_(offset) {}
  std::optional<std::size_t> offset() const noexcept { return offset_; }

 private:
  std::optional<std::size_t> offset_;
};

/// Prompt text split into literal runs and `{name}` placeholders.
/// `{{` and `}}` are literal braces.
class TemplateText {
 public:
  struct Placeholder {
    std::string name;
    std::size_t offset;  // byte offset of the opening brace
  };
  using Segment = std::variant<std::string, Placeholder>;

  TemplateText() = default;
  /// Throws TemplateError with the byte offset of a malformed brace.
  static TemplateText parse(const std::string& text);

  const std::vector<Segment>& segments() const noexcept { return segments_; }
  std::vector<std::string> placeholder_names() const;
  /// Every placeholder must be bound.
  std::string render(const std::map<std::string, std::string>& bindings) const;

 private:
  std::vector<Segment> segments_;
};

struct Attribute {
  std::string name;
  std::vector<std::string> values;  // non-empty, duplicate-free, ordered
};

struct PromptTemplate {
  std::string template_id;
  std::string body_source;
  TemplateText body;
  std::optional<std::string> negative_source;
  std::optional<TemplateText> negative_body;
  std::vector<Attribute> attributes;  // declaration order
  /// Explicit tokens (may themselves contain placeholders). Empty means
  /// "use the value bound to the `object` attribute, if any".
  std::vector<std::string> tokens_of_interest;
  std::optional<std::size_t> count;  // set => sampling mode
  std::optional<std::uint64_t> seed;
  nlohmann::ordered_json generation;  // per-template generation overrides, may be null

  /// Number of distinct expansions; saturates at SIZE_MAX.
  std::size_t combination_count() const;
};

struct ExpandedPrompt {
  std::string template_id;
  std::string text;
  std::optional<std::string> negative_text;
  std::map<std::string, std::string> bindings;
  std::vector<std::string> tokens_of_interest;

  friend bool operator==(const ExpandedPrompt&, const ExpandedPrompt&) = default;
};

constexpr std::size_t kDefaultExpansionCap = 100'000;

/// Parses one template entry of the configuration:
/// `{ "id", "prompt", "negative_prompt"?, "attributes", "tokens_of_interest"?,
///    "count"?, "seed"?, "generation"? }`.
/// Collects every problem in the entry before throwing ValidationErrors.
PromptTemplate parse_template(const nlohmann::ordered_json& raw);

/// Cartesian product in odometer order (last attribute fastest).
std::vector<ExpandedPrompt> expand_all(const PromptTemplate& t,
                                       std::size_t cap = kDefaultExpansionCap);

/// n draws, uniform with replacement over the cartesian product.
std::vector<ExpandedPrompt> sample(const PromptTemplate& t, std::size_t n, std::uint64_t seed);

/// Sampling mode when `count` is set, otherwise full expansion.
std::vector<ExpandedPrompt> expand_configured(const PromptTemplate& t,
                                              std::size_t cap = kDefaultExpansionCap);

}  // namespace diffuforge
