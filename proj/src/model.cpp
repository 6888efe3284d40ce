#include "tzlab/model.hpp"

#include <cmath>

#include "tzlab/error.hpp"
#include "tzlab/fusion.hpp"

namespace tzlab {

namespace {

std::string enc(std::size_t s) { return "enc" + std::to_string(s); }
std::string dec(std::size_t s) { return "dec" + std::to_string(s); }

Tensor select_channels(const Tensor& x, const std::vector<std::size_t>& idx) {
  const std::size_t b = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out({b, idx.size(), x.dim(2), x.dim(3)});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t j = 0; j < idx.size(); ++j)
      std::copy_n(x.data() + (bi * c + idx[j]) * plane, plane, out.data() + (bi * idx.size() + j) * plane);
  return out;
}

Tensor concat_tensors(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca * plane, ca * plane, out.data() + i * (ca + cb) * plane);
    std::copy_n(b.data() + i * cb * plane, cb * plane, out.data() + (i * (ca + cb) + ca) * plane);
  }
  return out;
}

void check_input(const NetInput& in, const ModelConfig& cfg, bool need_bands) {
  cfg.validate();
  if (in.time_max.rank() != 4 || in.time_max.dim(1) != 1) {
    throw ShapeError("model input: time_max must be [B,1,H,W], got " + shape_to_string(in.time_max.shape()));
  }
  const std::size_t b = in.time_max.dim(0), h = in.time_max.dim(2), w = in.time_max.dim(3);
  const Shape bands{b, cfg.band_count, h, w};
  if (need_bands && (in.amplitude.shape() != bands || in.phase.shape() != bands)) {
    throw ShapeError("model input: spectral maps must be " + shape_to_string(bands));
  }
  const std::size_t m = cfg.size_multiple();
  if (h % m != 0 || w % m != 0) {
    throw ShapeError("model input: " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by " +
                     std::to_string(m) + " for " + std::to_string(cfg.scales) + " scales");
  }
}

// Shared encoder/decoder skeleton. `spectral` enables SAFM in the encoder
// and CAM in the decoder; otherwise skips are concatenated.
Var unet_skeleton(Forward& f, const ModelConfig& cfg, Var x, const std::vector<BandLevel>* spectral) {
  std::vector<Var> e;
  e.push_back(conv_block(f, x, enc(1)));
  for (std::size_t s = 2; s <= cfg.scales; ++s) {
    Var h = downsample2(e.back(), PoolKind::Max);
    if (spectral) {
      const BandLevel& lvl = (*spectral)[s - 2];
      h = safm_forward(f, f.tape().constant(lvl.amplitude), f.tape().constant(lvl.phase), h, enc(s) + ".safm",
                       cfg.eps_reg);
    }
    e.push_back(conv_block(f, h, enc(s)));
  }
  Var d = e.back();
  for (std::size_t s = cfg.scales - 1; s >= 1; --s) {
    Var xc = conv1x1(f, upsample2(d), dec(s) + ".reduce");
    Var merged = spectral ? cam_apply(f, xc, e[s - 1], dec(s) + ".cam") : concat_channels(xc, e[s - 1]);
    d = conv_block(f, merged, dec(s));
  }
  return sigmoid(conv1x1(f, d, "head"));
}

void init_skeleton(ParamStore& store, const ModelConfig& cfg, std::size_t in_channels, bool spectral, Rng& rng) {
  const std::size_t l = cfg.trunk_kernel;
  init_conv_block(store, enc(1), in_channels, cfg.channels(1), l, rng);
  for (std::size_t s = 2; s <= cfg.scales; ++s) {
    if (spectral) {
      SafmShape shape{cfg.bands_per_scale, cfg.c1, cfg.k, cfg.channels(s - 1), cfg.spectral_kernel};
      init_safm(store, enc(s) + ".safm", shape, rng);
    }
    init_conv_block(store, enc(s), cfg.channels(s - 1), cfg.channels(s), l, rng);
  }
  for (std::size_t s = cfg.scales - 1; s >= 1; --s) {
    const std::size_t c = cfg.channels(s);
    init_conv1x1(store, dec(s) + ".reduce", cfg.channels(s + 1), c, rng);
    if (spectral) init_cam(store, dec(s) + ".cam", c, cfg.cam_ratio, rng);
    init_conv_block(store, dec(s), spectral ? c : 2 * c, c, l, rng);
  }
  init_conv1x1(store, "head", cfg.channels(1), 1, rng);
}

}  // namespace

std::string to_string(Arch a) {
  switch (a) {
    case Arch::SARNet: return "sarnet";
    case Arch::UNetBase: return "unet-base";
    case Arch::UNetMS: return "unet-ms";
  }
  return "?";
}

Arch parse_arch(const std::string& s) {
  if (s == "sarnet") return Arch::SARNet;
  if (s == "unet-base") return Arch::UNetBase;
  if (s == "unet-ms") return Arch::UNetMS;
  throw ConfigError("unknown architecture '" + s + "' (expected sarnet, unet-base or unet-ms)");
}

std::size_t ModelConfig::channels(std::size_t scale) const {
  if (scale < 1 || scale > scales) throw ConfigError("scale " + std::to_string(scale) + " out of range");
  std::size_t c = base_channels;
  for (std::size_t s = 1; s < scale && c < 8 * base_channels; ++s) c *= 2;
  return std::min(c, 8 * base_channels);
}

std::vector<std::size_t> ModelConfig::band_group(std::size_t scale) const {
  if (scale < 2 || scale > scales) throw ConfigError("band group requested for scale " + std::to_string(scale));
  const std::size_t groups = scales - 1, g = scale - 2;
  const std::size_t span = band_count - bands_per_scale;
  const std::size_t start =
      groups == 1 ? 0 : static_cast<std::size_t>(std::lround(static_cast<double>(g * span) / static_cast<double>(groups - 1)));
  std::vector<std::size_t> idx(bands_per_scale);
  for (std::size_t i = 0; i < bands_per_scale; ++i) idx[i] = start + i;
  return idx;
}

void ModelConfig::validate() const {
  if (scales < 2 || scales > 8) throw ConfigError("model: scales must lie in [2,8]");
  if (base_channels == 0) throw ConfigError("model: base_channels must be positive");
  if (k == 0 || c1 == 0) throw ConfigError("model: k and c1 must be positive");
  if (bands_per_scale == 0 || bands_per_scale * (scales - 1) > band_count) {
    throw ConfigError("model: bands_per_scale x (scales - 1) must not exceed the band count");
  }
  if (trunk_kernel % 2 == 0 || spectral_kernel % 2 == 0) throw ConfigError("model: kernel sizes must be odd");
  if (trunk_kernel != 1 && trunk_kernel != 3) throw ConfigError("model: trunk_kernel must be 1 or 3");
  if (spectral_kernel != 1 && spectral_kernel != 3) throw ConfigError("model: spectral_kernel must be 1 or 3");
  if (cam_ratio == 0) throw ConfigError("model: cam_ratio must be positive");
  for (std::size_t s = 1; s < scales; ++s) {
    if ((2 * channels(s)) % cam_ratio != 0) throw ConfigError("model: cam_ratio must divide 2 x channels");
  }
  if (!(eps_reg >= 0.0)) throw ConfigError("model: eps_reg must be non-negative");
}

ModelConfig ModelConfig::toy(Arch arch) {
  ModelConfig c;
  c.arch = arch;
  c.scales = 3;
  c.base_channels = 8;
  c.bands_per_scale = 2;
  return c;
}

NetInput make_input(std::span<const sim::SpectralProjection* const> views) {
  if (views.empty()) throw ShapeError("make_input: empty batch");
  const std::size_t b = views.size(), h = views[0]->height(), w = views[0]->width(), nb = views[0]->bands.size();
  NetInput in{Tensor({b, 1, h, w}), Tensor({b, nb, h, w}), Tensor({b, nb, h, w})};
  for (std::size_t i = 0; i < b; ++i) {
    const sim::SpectralProjection& v = *views[i];
    v.validate();
    if (v.height() != h || v.width() != w || v.bands.size() != nb) throw ShapeError("make_input: views differ in shape");
    std::copy_n(v.time_max.data(), h * w, in.time_max.data() + i * h * w);
    std::copy_n(v.amplitude.data(), nb * h * w, in.amplitude.data() + i * nb * h * w);
    std::copy_n(v.phase.data(), nb * h * w, in.phase.data() + i * nb * h * w);
  }
  return in;
}

NetInput make_input(std::span<const sim::SpectralProjection> views) {
  std::vector<const sim::SpectralProjection*> ptrs;
  for (const auto& v : views) ptrs.push_back(&v);
  return make_input(std::span<const sim::SpectralProjection* const>(ptrs));
}

Tensor make_target(std::span<const sim::SpectralProjection* const> views) {
  if (views.empty()) throw ShapeError("make_target: empty batch");
  const std::size_t h = views[0]->height(), w = views[0]->width();
  Tensor t({views.size(), 1, h, w});
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i]->clean_gt.shape() != Shape{1, h, w}) throw ShapeError("make_target: views differ in shape");
    std::copy_n(views[i]->clean_gt.data(), h * w, t.data() + i * h * w);
  }
  return t;
}

Tensor area_downsample(const Tensor& x) {
  const ImageDims d = image_dims(x.shape(), "area_downsample");
  if (d.height % 2 || d.width % 2) throw ShapeError("area_downsample: odd extent " + shape_to_string(x.shape()));
  ImageDims od = d;
  od.height /= 2;
  od.width /= 2;
  Tensor out(image_shape(od, x.rank() == 4));
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc)
    for (std::size_t r = 0; r < od.height; ++r)
      for (std::size_t c = 0; c < od.width; ++c) {
        const double* p = x.data() + bc * d.plane() + 2 * r * d.width + 2 * c;
        out[bc * od.plane() + r * od.width + c] = 0.25 * (p[0] + p[1] + p[d.width] + p[d.width + 1]);
      }
  return out;
}

std::vector<BandLevel> band_pyramid(const NetInput& in, const ModelConfig& cfg) {
  check_input(in, cfg, true);
  std::vector<BandLevel> levels;
  for (std::size_t s = 2; s <= cfg.scales; ++s) {
    const auto idx = cfg.band_group(s);
    BandLevel lvl{select_channels(in.amplitude, idx), select_channels(in.phase, idx)};
    for (std::size_t i = 1; i < s; ++i) {
      lvl.amplitude = area_downsample(lvl.amplitude);
      lvl.phase = area_downsample(lvl.phase);
    }
    levels.push_back(std::move(lvl));
  }
  return levels;
}

ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore store;
  Rng rng(seed);
  switch (cfg.arch) {
    case Arch::SARNet: init_skeleton(store, cfg, 1, true, rng); break;
    case Arch::UNetBase: init_skeleton(store, cfg, 1, false, rng); break;
    case Arch::UNetMS: init_skeleton(store, cfg, 1 + cfg.band_count, false, rng); break;
  }
  return store;
}

Var sarnet_forward(Forward& f, const ModelConfig& cfg, const NetInput& in) {
  const std::vector<BandLevel> levels = band_pyramid(in, cfg);
  return unet_skeleton(f, cfg, f.tape().constant(in.time_max), &levels);
}

Var unet_baseline_forward(Forward& f, const ModelConfig& cfg, const NetInput& in) {
  check_input(in, cfg, false);
  return unet_skeleton(f, cfg, f.tape().constant(in.time_max), nullptr);
}

Var unet_ms_forward(Forward& f, const ModelConfig& cfg, const NetInput& in) {
  check_input(in, cfg, true);
  return unet_skeleton(f, cfg, f.tape().constant(concat_tensors(in.time_max, in.amplitude)), nullptr);
}

Var model_forward(Forward& f, const ModelConfig& cfg, const NetInput& in) {
  switch (cfg.arch) {
    case Arch::SARNet: return sarnet_forward(f, cfg, in);
    case Arch::UNetBase: return unet_baseline_forward(f, cfg, in);
    case Arch::UNetMS: return unet_ms_forward(f, cfg, in);
  }
  throw ConfigError("unknown architecture");
}

Tensor predict(ParamStore& params, const ModelConfig& cfg, const NetInput& in) {
  Tape tape;
  Forward f(tape, params, {BnMode::Eval}, false);
  return model_forward(f, cfg, in).value();
}

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, OptimState& st, double lr,
               const AdamOptions& o) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericError("adam: non-finite gradient for '" + name + "'");
    if (g.shape() != params.at(name).shape()) throw ShapeError("adam: gradient shape mismatch for '" + name + "'");
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(st.step));
  for (const std::string& name : params.names()) {
    Tensor& p = params.at(name);
    auto [mit, mnew] = st.m.try_emplace(name, p.shape(), 0.0);
    auto [vit, vnew] = st.v.try_emplace(name, p.shape(), 0.0);
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    auto git = grads.find(name);
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.eps);
    }
  }
}

double lr_schedule(std::size_t epoch, double initial, double decay, std::size_t every) {
  if (every == 0) throw ConfigError("lr_schedule: decay interval must be positive");
  return initial * std::pow(decay, static_cast<double>(epoch / every));
}

}  // namespace tzlab
