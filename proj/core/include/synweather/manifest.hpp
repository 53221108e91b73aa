// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "synweather/types.hpp"

namespace synweather {

enum class Split { Train, Valid, Test };

std::string split_name(Split s);
Split split_from_name(const std::string& s);

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  RegionId region = RegionId::CONUS;
  VariableId variable = VariableId::CR;
  std::int64_t timestamp = 0;
  Split split = Split::Train;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::string format_version = "1";

  std::vector<ManifestEntry> select(RegionId r, VariableId v, Split s) const;
  std::vector<ManifestEntry> select(Split s) const;
  std::size_t count(Split s) const;
};

/// Split assignment by distinct timestamps: the last `test_timestamps`
/// timestamps go to test, the `valid_timestamps` before them to valid,
/// everything earlier to train.
struct SplitRule {
  int test_timestamps = 1;
  int valid_timestamps = 0;
};

/// Scans `root` for .swt1 files and assigns every file to exactly one
/// split. Deterministic: entries are ordered by (timestamp, region,
/// variable, path). Throws on an empty directory.
Manifest build_manifest(const std::filesystem::path& root, const SplitRule& rule);

void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

/// Path of the co-registered input stack for a target entry
/// (naming convention: scene_XXXXX_<Variable>.swt1 -> scene_XXXXX_input.swt1).
std::string input_path_for(const ManifestEntry& target);

}  // namespace synweather
