// SPDX-License-Identifier: Apache-2.0
#include "synweather/swt1.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "SWT1 writer assumes a little-endian host");

namespace synweather::swt1 {

using nlohmann::json;

namespace {

void check_finite(const NdArray<float>& a, const std::string& name) {
  for (float v : a.data)
    if (!std::isfinite(v))
      throw std::runtime_error("save: non-finite values present in array \"" + name + "\"");
}

void write_file(const std::filesystem::path& path, const std::vector<ArrayEntry>& arrays,
                const json& meta) {
  json header;
  json jarrays = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : arrays) {
    check_finite(e.array, e.name);
    const std::uint64_t length = static_cast<std::uint64_t>(e.array.size()) * sizeof(float);
    jarrays.push_back({{"name", e.name},
                       {"shape", e.array.shape},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"length", length}});
    offset += length;
  }
  header["arrays"] = jarrays;
  header["meta"] = meta;

  const std::string htext = header.dump();
  if (htext.size() > 0xFFFFFFFFull) throw std::runtime_error("save: header too large");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save: cannot open \"" + path.string() + "\" for writing");
  out.write("SWT1", 4);
  const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& e : arrays)
    out.write(reinterpret_cast<const char*>(e.array.ptr()),
              static_cast<std::streamsize>(e.array.size() * sizeof(float)));
  out.flush();
  if (!out) throw std::runtime_error("save: I/O failure writing \"" + path.string() + "\"");
}

struct RawFile {
  json header;
  std::vector<ArrayEntry> arrays;
};

RawFile read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load: cannot open \"" + path.string() + "\"");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 8 || std::memcmp(bytes.data(), "SWT1", 4) != 0)
    throw std::runtime_error("load: bad magic in \"" + path.string() + "\"");
  std::uint32_t hlen = 0;
  std::memcpy(&hlen, bytes.data() + 4, 4);
  if (bytes.size() < 8ull + hlen)
    throw std::runtime_error("load: header length exceeds file size");

  RawFile out;
  try {
    out.header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + hlen);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("load: malformed header JSON: ") + e.what());
  }

  const char* payload = bytes.data() + 8 + hlen;
  const std::uint64_t payload_size = bytes.size() - 8 - hlen;

  std::uint64_t expected_end = 0;
  for (const auto& ja : out.header.at("arrays")) {
    ArrayEntry e;
    e.name = ja.at("name").get<std::string>();
    const std::string dtype = ja.at("dtype").get<std::string>();
    if (dtype != "f32") throw std::runtime_error("load: unsupported dtype \"" + dtype + "\"");
    Shape shape = ja.at("shape").get<Shape>();
    const std::uint64_t offset = ja.at("offset").get<std::uint64_t>();
    const std::uint64_t length = ja.at("length").get<std::uint64_t>();
    const std::uint64_t want = static_cast<std::uint64_t>(shape_numel(shape)) * sizeof(float);
    if (length != want || offset + length > payload_size)
      throw std::runtime_error("load: payload length mismatch for array \"" + e.name + "\"");
    expected_end = std::max(expected_end, offset + length);
    e.array = NdArray<float>(std::move(shape));
    std::memcpy(e.array.ptr(), payload + offset, length);
    out.arrays.push_back(std::move(e));
  }
  if (expected_end != payload_size)
    throw std::runtime_error("load: payload length mismatch (trailing or missing bytes)");
  return out;
}

json field_meta(const WeatherField& f) {
  json norm;
  if (f.norm) {
    norm = {{"min", f.norm->min}, {"max", f.norm->max}, {"log", f.norm->log_applied}};
  } else {
    norm = nullptr;
  }
  return {{"region", region_name(f.region)},
          {"variable", variable_name(f.variable)},
          {"timestamp", f.timestamp},
          {"norm", norm}};
}

}  // namespace

void save_arrays(const std::filesystem::path& path, const std::vector<ArrayEntry>& arrays,
                 const std::string& meta_json) {
  json meta = json::parse(meta_json);
  if (!meta.is_object()) throw std::invalid_argument("save_arrays: meta must be a JSON object");
  write_file(path, arrays, meta);
}

ArrayFile load_arrays(const std::filesystem::path& path) {
  RawFile raw = read_file(path);
  ArrayFile out;
  out.arrays = std::move(raw.arrays);
  out.meta_json = raw.header.value("meta", json::object()).dump();
  return out;
}

void save_field(const WeatherField& field, const std::filesystem::path& path) {
  if (field.data.rank() != 2)
    throw std::invalid_argument("save_field: expected H x W data, got " +
                                shape_str(field.data.shape));
  ArrayEntry e;
  e.name = "data";
  e.array = field.data.reshaped({1, field.height(), field.width()});
  write_file(path, {e}, field_meta(field));
}

void save_stack(const SatelliteStack& stack, const std::filesystem::path& path) {
  if (stack.data.rank() != 3)
    throw std::invalid_argument("save_stack: expected C x H x W data, got " +
                                shape_str(stack.data.shape));
  if (stack.channel_names.size() != static_cast<std::size_t>(stack.channels()))
    throw std::invalid_argument("save_stack: channel_names length must equal C");
  json meta = {{"region", region_name(stack.region)},
               {"timestamp", stack.timestamp},
               {"channels", stack.channel_names}};
  ArrayEntry e{"data", stack.data};
  write_file(path, {e}, meta);
}

FieldOrStack load_field(const std::filesystem::path& path) {
  RawFile raw = read_file(path);
  const json& meta = raw.header.at("meta");
  if (raw.arrays.size() != 1 || raw.arrays[0].name != "data")
    throw std::runtime_error("load: expected a single \"data\" array in \"" + path.string() + "\"");
  NdArray<float>& data = raw.arrays[0].array;
  if (data.rank() != 3)
    throw std::runtime_error("load: expected 3-d data array, got " + shape_str(data.shape));

  if (meta.contains("channels")) {
    SatelliteStack s;
    s.data = std::move(data);
    s.channel_names = meta.at("channels").get<std::vector<std::string>>();
    s.region = region_from_name(meta.at("region").get<std::string>());
    s.timestamp = meta.at("timestamp").get<std::int64_t>();
    if (s.channel_names.size() != static_cast<std::size_t>(s.channels()))
      throw std::runtime_error("load: channel_names length does not match channel count");
    return s;
  }

  WeatherField f;
  if (data.dim(0) != 1)
    throw std::runtime_error("load: weather field must have a single channel, got " +
                             shape_str(data.shape));
  f.data = data.reshaped({data.dim(1), data.dim(2)});
  f.region = region_from_name(meta.at("region").get<std::string>());
  f.variable = variable_from_name(meta.at("variable").get<std::string>());
  f.timestamp = meta.at("timestamp").get<std::int64_t>();
  if (meta.contains("norm") && !meta.at("norm").is_null()) {
    const json& n = meta.at("norm");
    f.norm = NormState(n.at("min").get<float>(), n.at("max").get<float>(),
                       n.at("log").get<bool>());
  }
  return f;
}

WeatherField load_weather_field(const std::filesystem::path& path) {
  FieldOrStack v = load_field(path);
  if (auto* f = std::get_if<WeatherField>(&v)) return std::move(*f);
  throw std::runtime_error("load: \"" + path.string() + "\" holds a satellite stack, not a field");
}

SatelliteStack load_satellite_stack(const std::filesystem::path& path) {
  FieldOrStack v = load_field(path);
  if (auto* s = std::get_if<SatelliteStack>(&v)) return std::move(*s);
  throw std::runtime_error("load: \"" + path.string() + "\" holds a weather field, not a stack");
}

}  // namespace synweather::swt1
