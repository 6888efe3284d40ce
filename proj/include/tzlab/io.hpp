#pragma once

// File formats.
//
// TZT1 layout, all integers little-endian:
//
//   "TZT1" | u32 header_len | header (UTF-8 JSON) | payload
//
// header = {"dtype": "f32"|"f64", "shape": [...], "order": "row-major",
//           "meta": {...}}; payload holds product(shape) IEEE values of
// dtype. A bundle is a TZT1 file whose flat payload concatenates several
// named tensors, indexed by meta.tensors = [{name, shape, offset}].

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tzlab/layers.hpp"
#include "tzlab/model.hpp"
#include "tzlab/sim.hpp"
#include "tzlab/tomo.hpp"

namespace tzlab::io {

using Json = nlohmann::json;
namespace fs = std::filesystem;

/// Writes `t` with its own dtype. An f32 tensor is rounded to float on the
/// way out, so load(save(x)) is bit-identical whenever x holds
/// float-representable values (always true for tensors that were loaded as
/// f32).
std::vector<std::uint8_t> encode_tzt1(const Tensor& t, const Json& meta = Json::object());

struct Tzt1Doc {
  Tensor tensor;
  Json meta;
};

/// Throws IoError on a malformed buffer.
Tzt1Doc decode_tzt1(const std::vector<std::uint8_t>& bytes);

void save_tzt1(const fs::path& path, const Tensor& t, const Json& meta = Json::object());
Tzt1Doc load_tzt1(const fs::path& path);

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Bundle {
  std::vector<NamedTensor> tensors;
  Json meta;

  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void save_bundle(const fs::path& path, const Bundle& bundle, DType dtype = DType::f64);
Bundle load_bundle(const fs::path& path);

/// 16-bit binary PGM (P5, maxval 65535, big-endian samples) of a [1,H,W] or
/// [H,W] image; sample = round(x * 65535). Values outside [0,1] throw
/// NumericError.
void export_pgm(const fs::path& path, const Tensor& image);
/// Reads an 8- or 16-bit P5 file back as [1,H,W] in [0,1].
Tensor import_pgm(const fs::path& path);

std::vector<std::uint8_t> read_file(const fs::path& path);
void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const fs::path& path, const std::string& text);

Json to_json(const ModelConfig& c);
/// Missing keys keep their defaults; unknown keys throw ConfigError.
ModelConfig model_config_from_json(const Json& j);

Json to_json(const sim::Material& m);
sim::Material material_from_json(const Json& j);

void save_phantom(const fs::path& path, const sim::Phantom& p, const Json& extra = Json::object());
sim::Phantom load_phantom(const fs::path& path);

/// One bundle per view; meta carries angle, bands, channel ranges and any
/// `extra` fields (object name, family).
void save_projection(const fs::path& path, const sim::SpectralProjection& p, const Json& extra = Json::object());
sim::SpectralProjection load_projection(const fs::path& path, Json* meta = nullptr);

struct Checkpoint {
  ParamStore params;
  ModelConfig config;
  OptimState optim;
  Json meta;
};

/// Parameters, batch-norm running statistics and Adam moments in one
/// bundle; the model config and optimizer step count go in the header.
void save_checkpoint(const fs::path& path, const ParamStore& params, const ModelConfig& cfg, const OptimState& optim,
                     const Json& extra = Json::object());
Checkpoint load_checkpoint(const fs::path& path);

void save_volume(const fs::path& path, const tomo::Volume& v, const Json& extra = Json::object());
tomo::Volume load_volume(const fs::path& path, Json* meta = nullptr);

}  // namespace tzlab::io
