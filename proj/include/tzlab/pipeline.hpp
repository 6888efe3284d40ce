#pragma once

// The command implementations behind tools/tzlab. Every command writes its
// artifacts under an output path and returns a JSON summary; file contents
// depend only on the config, the seed and the inputs.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tzlab/config.hpp"
#include "tzlab/io.hpp"

namespace tzlab::pipeline {

namespace fs = std::filesystem;
using io::Json;

/// One phantom file per object: <out>/<kind>-<j>.tzt1.
Json make_phantoms(const RunConfig& cfg, const fs::path& out);

/// Views of one phantom: <out>/view_NNN.tzt1 plus <out>/views.json.
Json simulate(const RunConfig& cfg, const fs::path& phantom, const fs::path& out);

/// <out>/views/<object>/view_NNN.tzt1 and <out>/manifest.json with the
/// leave-one-family-out split.
Json make_dataset_files(const RunConfig& cfg, const fs::path& out);

struct LoadedSet {
  std::vector<sim::SpectralProjection> views;
  std::vector<Json> meta;
};

/// Views of one split ("train", "val", "test" or "all") of a manifest.
LoadedSet load_manifest_split(const fs::path& manifest, const std::string& split);

/// Trains from a manifest; writes <out>/last.tzt1, <out>/best.tzt1 and
/// <out>/log.jsonl (one line per epoch).
Json train_model(const RunConfig& cfg, const fs::path& manifest, const fs::path& out);

/// A 2D view read back from disk, either a projection bundle or a restored
/// image.
struct ViewFile {
  fs::path path;
  fs::path rel;  // output name relative to the run, e.g. disk-0/view_003.tzt1
  Json meta;
  std::optional<sim::SpectralProjection> projection;
  std::optional<Tensor> image;  // [1,H,W]

  std::string object() const;
  double angle() const;
  /// "auto" picks the restored image, else time_max; "time_max",
  /// "clean_gt" and "restored" force a channel.
  Tensor channel(const std::string& which) const;
};

/// Files, directories (every *.tzt1 below, sorted) or manifests (all views).
std::vector<ViewFile> collect_views(const std::vector<fs::path>& inputs);

/// Restored image per input view, same relative layout under `out`; with
/// `pgm` also a 16-bit PGM next to each.
Json restore_views(const fs::path& checkpoint, const std::vector<fs::path>& inputs, const fs::path& out, bool pgm,
                   std::size_t batch_size = 8);

/// One volume per object: the chosen channel is inverted (1 - x, so the
/// object is bright) and every image row reconstructed as a slice.
Json reconstruct(const RunConfig& cfg, const std::vector<fs::path>& inputs, const fs::path& out,
                 const std::string& channel = "auto");

/// Per-view and per-object PSNR/SSIM of `pred` against `ref`, matched on
/// (object, angle). The aggregate is the plain mean over views.
Json evaluate_views(const std::vector<fs::path>& pred, const std::vector<fs::path>& ref,
                    const std::string& pred_channel = "auto", const std::string& ref_channel = "clean_gt");

/// Finite-difference checks of every differentiable op and the composed
/// blocks. `targets` picks from ops, safm, cam, conv_block, sarnet (empty
/// means all).
Json gradcheck_suite(const std::vector<std::string>& targets, std::uint64_t seed, double rel_tol = 1e-5);

}  // namespace tzlab::pipeline
