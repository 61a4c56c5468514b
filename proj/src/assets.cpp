#include "psychdepth/assets.hpp"

#include <mutex>

#include "psychdepth/error.hpp"

namespace psychdepth {

// Generated from assets/prompts at configure time.
namespace embedded {
struct RawAsset {
  const char* name;
  const char* text;
};
extern const RawAsset kAssets[];
extern const std::size_t kAssetCount;
}  // namespace embedded

std::string PromptAsset::version() const {
  auto it = meta.find("version");
  return it == meta.end() ? std::string() : it->second;
}

std::string PromptAsset::status() const {
  auto it = meta.find("status");
  return it == meta.end() ? std::string() : it->second;
}

PromptAsset parse_asset(std::string name, std::string_view text) {
  PromptAsset a;
  a.name = std::move(name);
  std::size_t pos = 0;
  while (true) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) {
      throw Error(ErrorCode::Parse, "asset " + a.name + " has no '---' header terminator", {{"asset", a.name}});
    }
    auto line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line == "---") break;
    if (line.rfind("# ", 0) != 0) {
      throw Error(ErrorCode::Parse, "asset " + a.name + ": header lines must start with '# '", {{"asset", a.name}});
    }
    line.remove_prefix(2);
    auto colon = line.find(':');
    if (colon == std::string_view::npos) continue;  // free-form note
    auto value = line.substr(colon + 1);
    while (!value.empty() && value.front() == ' ') value.remove_prefix(1);
    a.meta[std::string(line.substr(0, colon))] = std::string(value);
  }
  a.body = std::string(text.substr(pos));
  if (!a.body.empty() && a.body.back() == '\n') a.body.pop_back();
  return a;
}

namespace {

const std::map<std::string, PromptAsset, std::less<>>& registry() {
  static const auto assets = [] {
    std::map<std::string, PromptAsset, std::less<>> m;
    for (std::size_t i = 0; i < embedded::kAssetCount; ++i) {
      m.emplace(embedded::kAssets[i].name, parse_asset(embedded::kAssets[i].name, embedded::kAssets[i].text));
    }
    return m;
  }();
  return assets;
}

}  // namespace

const PromptAsset& prompt_asset(std::string_view name) {
  const auto& m = registry();
  auto it = m.find(name);
  if (it == m.end()) throw Error(ErrorCode::NotFound, "no prompt asset named " + std::string(name));
  return it->second;
}

std::vector<std::string> prompt_asset_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : registry()) out.push_back(k);
  return out;
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = vars.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

}  // namespace psychdepth
