#pragma once

// Synthetic datasets, the training loop and held-out evaluation.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tzlab/model.hpp"
#include "tzlab/sim.hpp"

namespace tzlab {

struct Sample {
  sim::SpectralProjection view;
  std::string object;  // e.g. "bars-3"
  sim::PhantomKind family = sim::PhantomKind::Disk;
};

struct DatasetSpec {
  std::vector<sim::PhantomKind> families{sim::PhantomKind::Disk, sim::PhantomKind::Bars,
                                         sim::PhantomKind::BlobComposite, sim::PhantomKind::Procedural};
  std::size_t objects_per_family = 1;
  std::size_t size = 32;   // view width
  std::size_t depth = 32;  // view height
  double voxel_pitch = 0.25;
  std::size_t angles = 30;  // measured views per object, each also mirrored
  double step_deg = 6.0;
  double radius_frac = 0.3;  // disk family
  std::vector<sim::Material> materials{sim::hips(), sim::filled_resin()};
  sim::BandTable bands = sim::BandTable::standard();
  sim::DegradeOptions degrade;
  std::uint64_t seed = 0;
};

/// Phantom of object j of spec.families[family_index].
sim::PhantomSpec object_phantom_spec(const DatasetSpec& spec, std::size_t family_index, std::size_t j);
/// "<kind>-<j>", e.g. "bars-3".
std::string object_name(sim::PhantomKind kind, std::size_t j);
/// Noise stream of the views of one object.
std::uint64_t view_seed(const sim::PhantomSpec& ps);

/// Every object of every family, views in ascending angle order. Object j
/// of family f is seeded from (seed, f, j), so growing objects_per_family
/// keeps the earlier objects unchanged.
std::vector<Sample> make_dataset(const DatasetSpec& spec);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Leave-one-family-out: every view of `test_family` goes to test. Of the
/// remaining objects, the last object of each family goes to validation when
/// the family has more than one object.
Split split_by_family(const std::vector<Sample>& samples, sim::PhantomKind test_family);

std::vector<const sim::SpectralProjection*> gather(const std::vector<Sample>& samples,
                                                   const std::vector<std::size_t>& idx);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps taken so far
  double loss = 0.0;     // mean training batch loss over the epoch
  double val_psnr = 0.0;
  double val_ssim = 0.0;
  double lr = 0.0;
};

struct TrainOptions {
  /// Total optimizer steps; 0 runs `epochs` full epochs.
  std::size_t steps = 0;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  double lr_decay = 0.1;
  std::size_t decay_every = 300;  // epochs
  AdamOptions adam;
  std::uint64_t seed = 0;
  /// Per-sample random augmentation (cropping to opts.crop).
  std::optional<sim::AugmentOptions> augment;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ParamStore params;       // after the last step
  ParamStore best_params;  // highest validation PSNR (the last epoch when there is no validation set)
  OptimState optim;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

/// Per-epoch shuffled mini-batches; the permutation of epoch e depends only
/// on (seed, e). Throws NumericError when the loss or a gradient stops
/// being finite.
TrainResult train(ParamStore init, const ModelConfig& cfg, const std::vector<const sim::SpectralProjection*>& train_set,
                  const std::vector<const sim::SpectralProjection*>& val_set, const TrainOptions& opts);

/// Gradients of one MSE step on `batch`, train-mode BN.
struct StepResult {
  double loss = 0.0;
  std::map<std::string, Tensor> grads;
};
StepResult loss_and_grad(ParamStore& params, const ModelConfig& cfg,
                         std::span<const sim::SpectralProjection* const> batch);

/// Mean MSE over fixed-order batches. Train mode uses batch statistics but
/// leaves the running estimates untouched.
double dataset_loss(ParamStore& params, const ModelConfig& cfg, const std::vector<const sim::SpectralProjection*>& data,
                    std::size_t batch_size, BnMode mode);

struct ViewScore {
  double psnr = 0.0;
  double ssim = 0.0;
  double input_psnr = 0.0;  // time-max against the silhouette
  double input_ssim = 0.0;
};

struct EvalSummary {
  std::vector<ViewScore> views;
  double psnr = 0.0;
  double ssim = 0.0;
  double input_psnr = 0.0;
  double input_ssim = 0.0;
};

/// Eval-mode restoration of every view, scored against its silhouette.
/// Means are plain per-view averages.
EvalSummary evaluate(ParamStore& params, const ModelConfig& cfg, const std::vector<const sim::SpectralProjection*>& data,
                     std::size_t batch_size = 8);

/// Restored views, [1,H,W] each, in input order.
std::vector<Tensor> restore(ParamStore& params, const ModelConfig& cfg,
                            const std::vector<const sim::SpectralProjection*>& data, std::size_t batch_size = 8);

}  // namespace tzlab
