// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "synweather/tensor.hpp"

namespace synweather {

enum class RegionId { CONUS, Europe, EastAsia, TCRegion };
enum class VariableId { CR, Precipitation, VisibleLight, MWBT };

inline constexpr RegionId kAllRegions[] = {RegionId::CONUS, RegionId::Europe,
                                           RegionId::EastAsia, RegionId::TCRegion};
inline constexpr VariableId kAllVariables[] = {VariableId::CR, VariableId::Precipitation,
                                               VariableId::VisibleLight, VariableId::MWBT};

/// Stable identifiers used in file headers and manifests.
std::string region_name(RegionId r);
std::string variable_name(VariableId v);
RegionId region_from_name(const std::string& s);
VariableId variable_from_name(const std::string& s);

/// Rendering used inside prompt text ("TC Region", "East Asia", "Visible Light").
std::string region_prompt_name(RegionId r);
std::string variable_prompt_name(VariableId v);

/// Min-max normalization record. `log_applied` marks a log1p transform taken
/// before the min-max map (used for precipitation).
struct NormState {
  float min = 0.0f;
  float max = 1.0f;
  bool log_applied = false;

  NormState() = default;
  NormState(float mn, float mx, bool log) : min(mn), max(mx), log_applied(log) {
    if (!(max > min)) throw std::invalid_argument("NormState: max must be > min");
  }
};

/// Single-variable 2-D grid in physical units (dBZ, mm/h, %, K), or in
/// normalized [0,1] units when `norm` is set.
struct WeatherField {
  NdArray<float> data;  // H x W
  RegionId region = RegionId::CONUS;
  VariableId variable = VariableId::CR;
  std::int64_t timestamp = 0;
  std::optional<NormState> norm;

  std::int64_t height() const { return data.shape.at(0); }
  std::int64_t width() const { return data.shape.at(1); }
};

/// C-channel co-registered satellite input grid.
struct SatelliteStack {
  NdArray<float> data;  // C x H x W
  std::vector<std::string> channel_names;
  RegionId region = RegionId::CONUS;
  std::int64_t timestamp = 0;

  std::int64_t channels() const { return data.shape.at(0); }
  std::int64_t height() const { return data.shape.at(1); }
  std::int64_t width() const { return data.shape.at(2); }
};

/// Builds a WeatherField from a raw grid, replacing NaN/Inf with the
/// variable's physical floor (0 for CR and precipitation, the finite grid
/// minimum otherwise). Grids with no finite values are rejected.
WeatherField import_grid(NdArray<float> raw, RegionId region, VariableId variable,
                         std::int64_t timestamp);

/// Default channel naming for the 10-channel synthetic stack (ABI-style C07..C16).
std::vector<std::string> default_channel_names(int count = 10);

}  // namespace synweather
