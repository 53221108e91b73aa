// SPDX-License-Identifier: Apache-2.0
#include "synweather/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "synweather/swt1.hpp"

namespace synweather {

using nlohmann::json;

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  throw std::invalid_argument("split_name: bad enum value");
}

Split split_from_name(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split \"" + s + "\"");
}

std::vector<ManifestEntry> Manifest::select(RegionId r, VariableId v, Split s) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.region == r && e.variable == v && e.split == s) out.push_back(e);
  return out;
}

std::vector<ManifestEntry> Manifest::select(Split s) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(e);
  return out;
}

std::size_t Manifest::count(Split s) const {
  std::size_t n = 0;
  for (const auto& e : entries) n += (e.split == s) ? 1 : 0;
  return n;
}

Manifest build_manifest(const std::filesystem::path& root, const SplitRule& rule) {
  if (!std::filesystem::is_directory(root))
    throw std::runtime_error("build_manifest: \"" + root.string() + "\" is not a directory");

  Manifest m;
  for (const auto& de : std::filesystem::recursive_directory_iterator(root)) {
    if (!de.is_regular_file() || de.path().extension() != ".swt1") continue;
    swt1::FieldOrStack loaded = swt1::load_field(de.path());
    ManifestEntry e;
    e.path = std::filesystem::relative(de.path(), root).generic_string();
    if (const auto* f = std::get_if<WeatherField>(&loaded)) {
      e.region = f->region;
      e.variable = f->variable;
      e.timestamp = f->timestamp;
    } else {
      continue;  // input stacks are referenced by naming convention, not listed
    }
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty())
    throw std::runtime_error("build_manifest: no weather fields found under \"" +
                             root.string() + "\"");

  std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) {
    return std::tie(a.timestamp, a.region, a.variable, a.path) <
           std::tie(b.timestamp, b.region, b.variable, b.path);
  });

  std::set<std::int64_t> stamps;
  for (const auto& e : m.entries) stamps.insert(e.timestamp);
  std::vector<std::int64_t> ordered(stamps.begin(), stamps.end());

  const std::size_t n = ordered.size();
  const std::size_t n_test = std::min<std::size_t>(rule.test_timestamps, n);
  const std::size_t n_valid = std::min<std::size_t>(rule.valid_timestamps, n - n_test);
  const std::int64_t test_from =
      n_test > 0 ? ordered[n - n_test] : std::numeric_limits<std::int64_t>::max();
  const std::int64_t valid_from =
      n_valid > 0 ? ordered[n - n_test - n_valid] : std::numeric_limits<std::int64_t>::max();

  for (auto& e : m.entries) {
    if (e.timestamp >= test_from)
      e.split = Split::Test;
    else if (e.timestamp >= valid_from)
      e.split = Split::Valid;
    else
      e.split = Split::Train;
  }
  return m;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  json j;
  j["format_version"] = m.format_version;
  json entries = json::array();
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    if (!seen.insert(e.path).second)
      throw std::runtime_error("save_manifest: duplicate path \"" + e.path + "\"");
    entries.push_back({{"path", e.path},
                       {"region", region_name(e.region)},
                       {"variable", variable_name(e.variable)},
                       {"timestamp", e.timestamp},
                       {"split", split_name(e.split)}});
  }
  j["entries"] = entries;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_manifest: cannot open \"" + path.string() + "\"");
  out << j.dump(2) << "\n";
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open \"" + path.string() + "\"");
  json j = json::parse(in);
  Manifest m;
  m.format_version = j.at("format_version").get<std::string>();
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.path = je.at("path").get<std::string>();
    e.region = region_from_name(je.at("region").get<std::string>());
    e.variable = variable_from_name(je.at("variable").get<std::string>());
    e.timestamp = je.at("timestamp").get<std::int64_t>();
    e.split = split_from_name(je.at("split").get<std::string>());
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::string input_path_for(const ManifestEntry& target) {
  const std::string& p = target.path;
  const std::string var = variable_name(target.variable);
  const std::string suffix = "_" + var + ".swt1";
  if (p.size() > suffix.size() && p.compare(p.size() - suffix.size(), suffix.size(), suffix) == 0)
    return p.substr(0, p.size() - suffix.size()) + "_input.swt1";
  throw std::runtime_error("input_path_for: \"" + p + "\" does not follow the scene naming convention");
}

}  // namespace synweather
