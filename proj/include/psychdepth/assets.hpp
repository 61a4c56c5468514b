#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace psychdepth {

// A text template shipped under assets/prompts. The file starts with
// "# key: value" metadata lines closed by a line holding only "---"; the body
// is everything after it, minus one trailing newline.
struct PromptAsset {
  std::string name;
  std::map<std::string, std::string> meta;
  std::string body;

  std::string version() const;
  // "verbatim" or "reconstructed".
  std::string status() const;
};

PromptAsset parse_asset(std::string name, std::string_view text);

// Built-in assets, embedded at build time. Throws NotFound for unknown names.
const PromptAsset& prompt_asset(std::string_view name);
std::vector<std::string> prompt_asset_names();

// Replaces {name} for every name in `vars` in one pass; substituted text is
// never rescanned, and braces around unknown names are left alone.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars);

}  // namespace psychdepth
