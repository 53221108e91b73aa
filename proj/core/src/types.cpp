// SPDX-License-Identifier: Apache-2.0
#include "synweather/types.hpp"

#include <cmath>
#include <limits>

namespace synweather {

std::string region_name(RegionId r) {
  switch (r) {
    case RegionId::CONUS: return "CONUS";
    case RegionId::Europe: return "Europe";
    case RegionId::EastAsia: return "EastAsia";
    case RegionId::TCRegion: return "TCRegion";
  }
  throw std::invalid_argument("region_name: bad enum value");
}

std::string variable_name(VariableId v) {
  switch (v) {
    case VariableId::CR: return "CR";
    case VariableId::Precipitation: return "Precipitation";
    case VariableId::VisibleLight: return "VisibleLight";
    case VariableId::MWBT: return "MWBT";
  }
  throw std::invalid_argument("variable_name: bad enum value");
}

RegionId region_from_name(const std::string& s) {
  for (RegionId r : kAllRegions)
    if (region_name(r) == s) return r;
  throw std::invalid_argument("unknown region \"" + s + "\"");
}

VariableId variable_from_name(const std::string& s) {
  for (VariableId v : kAllVariables)
    if (variable_name(v) == s) return v;
  throw std::invalid_argument("unknown variable \"" + s + "\"");
}

std::string region_prompt_name(RegionId r) {
  switch (r) {
    case RegionId::CONUS: return "CONUS";
    case RegionId::Europe: return "Europe";
    case RegionId::EastAsia: return "East Asia";
    case RegionId::TCRegion: return "TC Region";
  }
  throw std::invalid_argument("region_prompt_name: bad enum value");
}

std::string variable_prompt_name(VariableId v) {
  switch (v) {
    case VariableId::CR: return "CR";
    case VariableId::Precipitation: return "Precipitation";
    case VariableId::VisibleLight: return "Visible Light";
    case VariableId::MWBT: return "MWBT";
  }
  throw std::invalid_argument("variable_prompt_name: bad enum value");
}

WeatherField import_grid(NdArray<float> raw, RegionId region, VariableId variable,
                         std::int64_t timestamp) {
  if (raw.rank() != 2 || raw.dim(0) < 1 || raw.dim(1) < 1)
    throw std::invalid_argument("import_grid: expected a non-empty 2-D grid, got " +
                                shape_str(raw.shape));
  float finite_min = std::numeric_limits<float>::infinity();
  bool any_finite = false;
  for (float v : raw.data) {
    if (std::isfinite(v)) {
      any_finite = true;
      if (v < finite_min) finite_min = v;
    }
  }
  if (!any_finite) throw std::invalid_argument("import_grid: grid has no finite values");

  const bool floor_at_zero =
      variable == VariableId::CR || variable == VariableId::Precipitation;
  const float fill = floor_at_zero ? 0.0f : finite_min;
  for (float& v : raw.data)
    if (!std::isfinite(v)) v = fill;

  WeatherField f;
  f.data = std::move(raw);
  f.region = region;
  f.variable = variable;
  f.timestamp = timestamp;
  return f;
}

std::vector<std::string> default_channel_names(int count) {
  std::vector<std::string> names;
  names.reserve(count);
  for (int i = 0; i < count; ++i) names.push_back("C" + std::to_string(7 + i));
  return names;
}

}  // namespace synweather
