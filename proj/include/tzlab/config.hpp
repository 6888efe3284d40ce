#pragma once

// Run configuration: one JSON document drives every CLI command. All
// sections are optional; unknown keys anywhere are rejected. The schema is
// described in docs/config.md.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tzlab/io.hpp"
#include "tzlab/tomo.hpp"
#include "tzlab/train.hpp"

namespace tzlab {

struct TrainSettings {
  TrainOptions options;                                   // callbacks unset
  sim::PhantomKind test_family = sim::PhantomKind::Procedural;
};

struct TomoSettings {
  tomo::VolumeOptions volume;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetSpec dataset;  // dataset.seed mirrors seed
  ModelConfig model = ModelConfig::toy();
  TrainSettings train;
  TomoSettings tomo;
  std::string output_dir = "run";
};

/// Strict parse; throws ConfigError naming the offending key.
RunConfig parse_run_config(const io::Json& doc);
io::Json to_json(const RunConfig& cfg);

/// Applies "a.b.c=value" to the document; value is parsed as JSON when it
/// parses, otherwise taken as a string.
void apply_override(io::Json& doc, const std::string& assignment);

/// Reads the file (an empty path means all defaults), applies overrides in
/// order, then parses.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace tzlab
