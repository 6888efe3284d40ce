#include "tzlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "tzlab/error.hpp"
#include "tzlab/metrics.hpp"

namespace tzlab {

namespace {

std::map<std::string, Tensor> collect_grads(const Forward& f) {
  std::map<std::string, Tensor> g;
  for (const auto& [name, v] : f.bound()) {
    if (auto t = v.tape->grad(v)) g.emplace(name, std::move(*t));
  }
  return g;
}

template <class Fn>
void for_batches(std::size_t n, std::size_t batch, Fn&& fn) {
  if (batch == 0) throw ConfigError("batch_size must be positive");
  for (std::size_t i = 0; i < n; i += batch) fn(i, std::min(batch, n - i));
}

}  // namespace

sim::PhantomSpec object_phantom_spec(const DatasetSpec& spec, std::size_t family_index, std::size_t j) {
  if (family_index >= spec.families.size()) throw ConfigError("dataset: family index out of range");
  sim::PhantomSpec ps;
  ps.kind = spec.families[family_index];
  ps.size = spec.size;
  ps.depth = spec.depth;
  ps.voxel_pitch = spec.voxel_pitch;
  ps.materials = spec.materials;
  ps.radius_frac = spec.radius_frac;
  ps.seed = sim::derive_seed(spec.seed, family_index, j);
  return ps;
}

std::string object_name(sim::PhantomKind kind, std::size_t j) { return sim::to_string(kind) + "-" + std::to_string(j); }

std::uint64_t view_seed(const sim::PhantomSpec& ps) { return sim::derive_seed(ps.seed, 0x7e5); }

std::vector<Sample> make_dataset(const DatasetSpec& spec) {
  if (spec.families.empty() || spec.objects_per_family == 0) throw ConfigError("dataset: no objects requested");
  spec.bands.validate();
  std::vector<Sample> out;
  for (std::size_t fi = 0; fi < spec.families.size(); ++fi) {
    for (std::size_t j = 0; j < spec.objects_per_family; ++j) {
      const sim::PhantomSpec ps = object_phantom_spec(spec, fi, j);
      const sim::Phantom ph = sim::make_phantom(ps);
      const std::string object = object_name(ps.kind, j);
      for (auto& v : sim::simulate_views(ph, spec.angles, spec.step_deg, spec.bands, spec.degrade, view_seed(ps)))
        out.push_back({std::move(v), object, ps.kind});
    }
  }
  return out;
}

Split split_by_family(const std::vector<Sample>& samples, sim::PhantomKind test_family) {
  // objects per family in order of first appearance
  std::map<sim::PhantomKind, std::vector<std::string>> objects;
  for (const Sample& s : samples) {
    auto& objs = objects[s.family];
    if (std::find(objs.begin(), objs.end(), s.object) == objs.end()) objs.push_back(s.object);
  }
  Split sp;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.family == test_family) {
      sp.test.push_back(i);
      continue;
    }
    const auto& objs = objects[s.family];
    if (objs.size() > 1 && s.object == objs.back())
      sp.val.push_back(i);
    else
      sp.train.push_back(i);
  }
  return sp;
}

std::vector<const sim::SpectralProjection*> gather(const std::vector<Sample>& samples,
                                                   const std::vector<std::size_t>& idx) {
  std::vector<const sim::SpectralProjection*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&samples.at(i).view);
  return out;
}

StepResult loss_and_grad(ParamStore& params, const ModelConfig& cfg,
                         std::span<const sim::SpectralProjection* const> batch) {
  Tape tape;
  Forward f(tape, params, {BnMode::Train});
  Var loss = mse_loss(model_forward(f, cfg, make_input(batch)), tape.constant(make_target(batch)));
  StepResult r;
  r.loss = loss.value()[0];
  if (!std::isfinite(r.loss)) throw NumericError("training loss is not finite");
  tape.backward(loss);
  r.grads = collect_grads(f);
  return r;
}

double dataset_loss(ParamStore& params, const ModelConfig& cfg, const std::vector<const sim::SpectralProjection*>& data,
                    std::size_t batch_size, BnMode mode) {
  if (data.empty()) throw ShapeError("dataset_loss: empty dataset");
  double sum = 0.0;
  for_batches(data.size(), batch_size, [&](std::size_t start, std::size_t n) {
    std::span<const sim::SpectralProjection* const> b(data.data() + start, n);
    Tape tape;
    Forward f(tape, params, {mode, 0.1, 1e-5, false}, false);
    Var loss = mse_loss(model_forward(f, cfg, make_input(b)), tape.constant(make_target(b)));
    sum += loss.value()[0] * static_cast<double>(n);
  });
  return sum / static_cast<double>(data.size());
}

std::vector<Tensor> restore(ParamStore& params, const ModelConfig& cfg,
                            const std::vector<const sim::SpectralProjection*>& data, std::size_t batch_size) {
  std::vector<Tensor> out;
  for_batches(data.size(), batch_size, [&](std::size_t start, std::size_t n) {
    const Tensor y = predict(params, cfg, make_input(std::span(data.data() + start, n)));
    const std::size_t h = y.dim(2), w = y.dim(3);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor v({1, h, w});
      std::copy_n(y.data() + i * h * w, h * w, v.data());
      out.push_back(std::move(v));
    }
  });
  return out;
}

EvalSummary evaluate(ParamStore& params, const ModelConfig& cfg, const std::vector<const sim::SpectralProjection*>& data,
                     std::size_t batch_size) {
  if (data.empty()) throw ShapeError("evaluate: empty dataset");
  const std::vector<Tensor> restored = restore(params, cfg, data, batch_size);
  EvalSummary s;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const sim::SpectralProjection& v = *data[i];
    ViewScore sc{psnr(restored[i], v.clean_gt), ssim(restored[i], v.clean_gt), psnr(v.time_max, v.clean_gt),
                 ssim(v.time_max, v.clean_gt)};
    s.psnr += sc.psnr;
    s.ssim += sc.ssim;
    s.input_psnr += sc.input_psnr;
    s.input_ssim += sc.input_ssim;
    s.views.push_back(sc);
  }
  const double n = static_cast<double>(data.size());
  s.psnr /= n;
  s.ssim /= n;
  s.input_psnr /= n;
  s.input_ssim /= n;
  return s;
}

TrainResult train(ParamStore init, const ModelConfig& cfg, const std::vector<const sim::SpectralProjection*>& train_set,
                  const std::vector<const sim::SpectralProjection*>& val_set, const TrainOptions& opts) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  if (opts.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(opts.lr > 0.0)) throw ConfigError("train: lr must be positive");

  TrainResult res;
  res.params = std::move(init);
  const std::size_t per_epoch = (train_set.size() + opts.batch_size - 1) / opts.batch_size;
  const std::size_t total = opts.steps ? opts.steps : opts.epochs * per_epoch;
  double best = -std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_set.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; step < total; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(sim::derive_seed(opts.seed, 0x5u, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_schedule(epoch, opts.lr, opts.lr_decay, opts.decay_every);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size() && step < total; start += opts.batch_size) {
      const std::size_t n = std::min(opts.batch_size, order.size() - start);
      std::vector<sim::SpectralProjection> augmented;
      std::vector<const sim::SpectralProjection*> batch;
      if (opts.augment) {
        for (std::size_t i = 0; i < n; ++i)
          augmented.push_back(
              sim::augment(*train_set[order[start + i]], *opts.augment, sim::derive_seed(opts.seed, epoch, start + i)));
        for (const auto& a : augmented) batch.push_back(&a);
      } else {
        for (std::size_t i = 0; i < n; ++i) batch.push_back(train_set[order[start + i]]);
      }
      StepResult sr = loss_and_grad(res.params, cfg, batch);
      adam_step(res.params, sr.grads, res.optim, lr, opts.adam);
      if (!res.params.all_finite()) throw NumericError("train: parameters diverged at step " + std::to_string(step));
      loss_sum += sr.loss;
      ++batches;
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = step;
    rec.loss = loss_sum / static_cast<double>(batches);
    rec.lr = lr;
    if (!val_set.empty()) {
      const EvalSummary ev = evaluate(res.params, cfg, val_set, opts.batch_size);
      rec.val_psnr = ev.psnr;
      rec.val_ssim = ev.ssim;
    }
    res.history.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
    if (val_set.empty() || rec.val_psnr > best) {
      best = rec.val_psnr;
      res.best_params = res.params;
      res.best_epoch = epoch;
    }
  }
  return res;
}

}  // namespace tzlab
