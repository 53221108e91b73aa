// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "synweather/types.hpp"

namespace synweather::swt1 {

// SWT1 container layout (bit-exact):
//   bytes 0..3   magic "SWT1"
//   bytes 4..7   header length N, little-endian u32
//   bytes 8..8+N UTF-8 JSON header:
//                {"arrays":[{"name","shape","dtype":"f32","offset","length"},...],
//                 "meta":{...}}
//   then the raw array payloads at the declared offsets, relative to the
//   end of the header. Arrays are row-major little-endian f32.

/// One named array inside a container file.
struct ArrayEntry {
  std::string name;
  NdArray<float> array;
};

struct ArrayFile {
  std::vector<ArrayEntry> arrays;
  std::string meta_json;  // the header's "meta" object, serialized
};

/// Writes a generic named-array container. `meta_json` must be a JSON
/// object (defaults to {}). Rejects non-finite payload values.
void save_arrays(const std::filesystem::path& path, const std::vector<ArrayEntry>& arrays,
                 const std::string& meta_json = "{}");

ArrayFile load_arrays(const std::filesystem::path& path);

/// Field/stack serialization with the pinned meta schema:
///   field: meta {"region","variable","timestamp","norm":{"min","max","log"}},
///          one array "data" of shape [1,H,W]
///   stack: meta {"region","timestamp","channels":[...]},
///          one array "data" of shape [C,H,W]
void save_field(const WeatherField& field, const std::filesystem::path& path);
void save_stack(const SatelliteStack& stack, const std::filesystem::path& path);

using FieldOrStack = std::variant<WeatherField, SatelliteStack>;
FieldOrStack load_field(const std::filesystem::path& path);

/// Convenience wrappers that throw when the file holds the other kind.
WeatherField load_weather_field(const std::filesystem::path& path);
SatelliteStack load_satellite_stack(const std::filesystem::path& path);

}  // namespace synweather::swt1
