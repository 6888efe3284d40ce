#include "tzlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>

#include "tzlab/error.hpp"
#include "tzlab/fusion.hpp"
#include "tzlab/metrics.hpp"

namespace tzlab::pipeline {

namespace {

std::string view_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%03zu.tzt1", i);
  return buf;
}

Json metric(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  return v;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

Json read_json(const fs::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::exception& e) {
    throw IoError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const Json& j) { io::write_text(path, j.dump(2) + "\n"); }

std::string rel_name(const fs::path& p, const fs::path& base) { return p.lexically_relative(base).generic_string(); }

}  // namespace

Json make_phantoms(const RunConfig& cfg, const fs::path& out) {
  Json files = Json::array();
  for (std::size_t f = 0; f < cfg.dataset.families.size(); ++f) {
    for (std::size_t j = 0; j < cfg.dataset.objects_per_family; ++j) {
      const sim::PhantomSpec ps = object_phantom_spec(cfg.dataset, f, j);
      const std::string name = object_name(ps.kind, j);
      const fs::path path = out / (name + ".tzt1");
      io::save_phantom(path, sim::make_phantom(ps),
                       {{"object", name}, {"family", sim::to_string(ps.kind)}, {"seed", ps.seed}});
      files.push_back(rel_name(path, out));
    }
  }
  return {{"command", "phantom"}, {"phantoms", files}};
}

Json simulate(const RunConfig& cfg, const fs::path& phantom, const fs::path& out) {
  const sim::Phantom ph = io::load_phantom(phantom);
  const Json pmeta = io::load_tzt1(phantom).meta;
  const std::string object = pmeta.value("object", phantom.stem().string());
  const auto views = sim::simulate_views(ph, cfg.dataset.angles, cfg.dataset.step_deg, cfg.dataset.bands,
                                         cfg.dataset.degrade, sim::derive_seed(cfg.seed, 0x7e5));
  Json list = Json::array();
  for (std::size_t i = 0; i < views.size(); ++i) {
    const fs::path path = out / view_file_name(i);
    Json extra{{"object", object}};
    if (pmeta.contains("family")) extra["family"] = pmeta["family"];
    io::save_projection(path, views[i], extra);
    list.push_back({{"file", rel_name(path, out)}, {"angle", views[i].view_angle}});
  }
  const Json summary{{"command", "simulate"}, {"object", object}, {"views", list}};
  write_json(out / "views.json", summary);
  return summary;
}

Json make_dataset_files(const RunConfig& cfg, const fs::path& out) {
  const std::vector<Sample> samples = make_dataset(cfg.dataset);
  const Split split = split_by_family(samples, cfg.train.test_family);
  Json entries = Json::array();
  std::map<std::string, std::size_t> counter;
  for (const Sample& s : samples) {
    const fs::path path = out / "views" / s.object / view_file_name(counter[s.object]++);
    io::save_projection(path, s.view, {{"object", s.object}, {"family", sim::to_string(s.family)}});
    entries.push_back({{"file", rel_name(path, out)},
                       {"object", s.object},
                       {"family", sim::to_string(s.family)},
                       {"angle", s.view.view_angle}});
  }
  const Json manifest{{"command", "dataset"},
                      {"config", to_json(cfg)},
                      {"samples", entries},
                      {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}}};
  write_json(out / "manifest.json", manifest);
  return {{"command", "dataset"},
          {"manifest", "manifest.json"},
          {"views", samples.size()},
          {"train", split.train.size()},
          {"val", split.val.size()},
          {"test", split.test.size()}};
}

LoadedSet load_manifest_split(const fs::path& manifest, const std::string& split) {
  const Json m = read_json(manifest);
  if (!m.contains("samples") || !m.contains("split")) throw IoError(manifest.string() + ": not a dataset manifest");
  const Json& samples = m.at("samples");
  std::vector<std::size_t> idx;
  if (split == "all") {
    for (std::size_t i = 0; i < samples.size(); ++i) idx.push_back(i);
  } else if (m.at("split").contains(split)) {
    idx = m.at("split").at(split).get<std::vector<std::size_t>>();
  } else {
    throw ConfigError("unknown split '" + split + "' (train, val, test or all)");
  }
  LoadedSet set;
  const fs::path base = manifest.parent_path();
  for (std::size_t i : idx) {
    if (i >= samples.size()) throw IoError(manifest.string() + ": split index out of range");
    Json meta;
    set.views.push_back(io::load_projection(base / samples[i].at("file").get<std::string>(), &meta));
    set.meta.push_back(std::move(meta));
  }
  return set;
}

Json train_model(const RunConfig& cfg, const fs::path& manifest, const fs::path& out) {
  const LoadedSet tr = load_manifest_split(manifest, "train");
  const LoadedSet va = load_manifest_split(manifest, "val");
  if (tr.views.empty()) throw ConfigError("train: the manifest has no training views");
  for (const auto& v : tr.views) {
    if (v.bands.size() != cfg.model.band_count)
      throw ConfigError("train: views carry " + std::to_string(v.bands.size()) + " bands, model.band_count is " +
                        std::to_string(cfg.model.band_count));
  }
  std::vector<const sim::SpectralProjection*> train_set, val_set;
  for (const auto& v : tr.views) train_set.push_back(&v);
  for (const auto& v : va.views) val_set.push_back(&v);

  const fs::path log_path = out / "log.jsonl";
  io::write_text(log_path, "");
  std::string log;
  TrainOptions opts = cfg.train.options;
  opts.on_epoch = [&](const EpochRecord& r) {
    const Json line{{"epoch", r.epoch}, {"step", r.step},  {"loss", r.loss}, {"val_psnr", metric(r.val_psnr)},
                    {"val_ssim", r.val_ssim}, {"lr", r.lr}};
    log += line.dump() + "\n";
    io::write_text(log_path, log);
  };
  TrainResult res = train(init_model(cfg.model, sim::derive_seed(cfg.seed, 0x1417)), cfg.model, train_set, val_set,
                          opts);
  const EpochRecord& last = res.history.back();
  io::save_checkpoint(out / "last.tzt1", res.params, cfg.model, res.optim, {{"epoch", last.epoch}});
  io::save_checkpoint(out / "best.tzt1", res.best_params, cfg.model, res.optim, {{"epoch", res.best_epoch}});
  return {{"command", "train"},
          {"epochs", res.history.size()},
          {"steps", last.step},
          {"final_loss", last.loss},
          {"best_epoch", res.best_epoch},
          {"checkpoints", {"last.tzt1", "best.tzt1"}},
          {"log", "log.jsonl"}};
}

std::string ViewFile::object() const { return meta.value("object", std::string("view")); }

double ViewFile::angle() const {
  if (!meta.contains("view_angle")) throw IoError(path.string() + ": no view_angle in header");
  return meta.at("view_angle").get<double>();
}

Tensor ViewFile::channel(const std::string& which) const {
  if (which == "auto") return image ? *image : projection->time_max;
  if (which == "restored") {
    if (!image) throw ConfigError(path.string() + ": not a restored view");
    return *image;
  }
  if (which == "time_max" || which == "clean_gt") {
    if (!projection) throw ConfigError(path.string() + ": channel '" + which + "' needs a projection file");
    return which == "time_max" ? projection->time_max : projection->clean_gt;
  }
  throw ConfigError("unknown channel '" + which + "' (auto, time_max, clean_gt, restored)");
}

std::vector<ViewFile> collect_views(const std::vector<fs::path>& inputs) {
  std::vector<std::pair<fs::path, fs::path>> files;  // path, relative name
  for (const fs::path& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".tzt1") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      for (auto& p : found) files.emplace_back(p, p.lexically_relative(in));
    } else if (in.extension() == ".json") {
      const Json m = read_json(in);
      if (!m.contains("samples")) throw IoError(in.string() + ": not a dataset manifest");
      for (const auto& s : m.at("samples")) {
        const fs::path rel = s.at("file").get<std::string>();
        files.emplace_back(in.parent_path() / rel, rel);
      }
    } else if (fs::exists(in)) {
      files.emplace_back(in, in.filename());
    } else {
      throw IoError(in.string() + ": no such file or directory");
    }
  }
  std::vector<ViewFile> out;
  for (const auto& [path, rel] : files) {
    io::Tzt1Doc doc = io::load_tzt1(path);
    ViewFile v;
    v.path = path;
    v.rel = rel;
    const std::string kind = doc.meta.value("kind", "");
    if (kind == "projection") {
      v.projection = io::load_projection(path, &v.meta);
    } else if (kind == "restored") {
      v.meta = doc.meta;
      v.image = std::move(doc.tensor);
    } else {
      continue;  // phantoms, checkpoints and volumes living alongside
    }
    out.push_back(std::move(v));
  }
  if (out.empty()) throw IoError("no projection or restored views among the inputs");
  return out;
}

Json restore_views(const fs::path& checkpoint, const std::vector<fs::path>& inputs, const fs::path& out, bool pgm,
                   std::size_t batch_size) {
  io::Checkpoint ck = io::load_checkpoint(checkpoint);
  const std::vector<ViewFile> views = collect_views(inputs);
  std::vector<const sim::SpectralProjection*> data;
  for (const auto& v : views) {
    if (!v.projection) throw ConfigError(v.path.string() + ": restore needs projection files");
    data.push_back(&*v.projection);
  }
  const std::vector<Tensor> restored = restore(ck.params, ck.config, data, batch_size);
  Json files = Json::array();
  for (std::size_t i = 0; i < views.size(); ++i) {
    Tensor img = restored[i];
    img.set_dtype(DType::f32);
    fs::path rel = views[i].rel;
    rel.replace_extension(".tzt1");
    Json meta{{"kind", "restored"},
              {"object", views[i].object()},
              {"view_angle", views[i].angle()},
              {"source", views[i].rel.generic_string()},
              {"model", to_string(ck.config.arch)}};
    if (views[i].meta.contains("family")) meta["family"] = views[i].meta["family"];
    io::save_tzt1(out / rel, img, meta);
    if (pgm) {
      fs::path p = out / rel;
      p.replace_extension(".pgm");
      io::export_pgm(p, clamp01(img));
    }
    files.push_back(rel.generic_string());
  }
  return {{"command", "restore"}, {"views", files}};
}

Json reconstruct(const RunConfig& cfg, const std::vector<fs::path>& inputs, const fs::path& out,
                 const std::string& channel) {
  const std::vector<ViewFile> views = collect_views(inputs);
  std::map<std::string, std::vector<const ViewFile*>> by_object;
  for (const auto& v : views) by_object[v.object()].push_back(&v);
  Json volumes = Json::array();
  for (auto& [object, list] : by_object) {
    std::sort(list.begin(), list.end(), [](const ViewFile* a, const ViewFile* b) { return a->angle() < b->angle(); });
    std::vector<Tensor> imgs;
    std::vector<double> angles;
    for (const ViewFile* v : list) {
      Tensor t = v->channel(channel);
      for (double& x : t.values()) x = 1.0 - x;
      t.set_dtype(DType::f64);
      imgs.push_back(std::move(t));
      angles.push_back(v->angle());
    }
    for (std::size_t i = 1; i < angles.size(); ++i) {
      if (angles[i] == angles[i - 1]) throw ConfigError("reconstruct: object '" + object + "' has two views at one angle");
    }
    const tomo::Volume vol = tomo::reconstruct_volume(imgs, angles, cfg.tomo.volume);
    const fs::path path = out / (object + ".tzt1");
    io::save_volume(path, vol,
                    {{"object", object},
                     {"views", angles.size()},
                     {"method", cfg.tomo.volume.method == tomo::ReconMethod::Fbp ? "fbp" : "sart"}});
    volumes.push_back(rel_name(path, out));
  }
  return {{"command", "reconstruct"}, {"volumes", volumes}};
}

Json evaluate_views(const std::vector<fs::path>& pred, const std::vector<fs::path>& ref,
                    const std::string& pred_channel, const std::string& ref_channel) {
  const std::vector<ViewFile> p = collect_views(pred), r = collect_views(ref);
  std::map<std::pair<std::string, double>, const ViewFile*> refs;
  for (const auto& v : r) refs[{v.object(), v.angle()}] = &v;

  struct Row {
    std::vector<double> psnr, ssim;
  };
  std::map<std::string, Row> objects;
  std::vector<double> all_psnr, all_ssim;
  Json per_view = Json::array();
  for (const auto& v : p) {
    const auto it = refs.find({v.object(), v.angle()});
    if (it == refs.end())
      throw ConfigError("eval: no reference view for object '" + v.object() + "' at " + std::to_string(v.angle()) +
                        " degrees");
    const Tensor a = v.channel(pred_channel), b = it->second->channel(ref_channel);
    const double ps = psnr(a, b), ss = ssim(a, b);
    objects[v.object()].psnr.push_back(ps);
    objects[v.object()].ssim.push_back(ss);
    all_psnr.push_back(ps);
    all_ssim.push_back(ss);
    per_view.push_back({{"object", v.object()}, {"angle", v.angle()}, {"psnr", metric(ps)}, {"ssim", ss}});
  }
  Json rows = Json::array();
  for (const auto& [name, row] : objects) {
    rows.push_back(
        {{"object", name}, {"views", row.psnr.size()}, {"psnr", metric(mean(row.psnr))}, {"ssim", mean(row.ssim)}});
  }
  return {{"command", "eval"},
          {"pred_channel", pred_channel},
          {"ref_channel", ref_channel},
          {"objects", rows},
          {"views", per_view},
          {"aggregate", {{"views", all_psnr.size()}, {"psnr", metric(mean(all_psnr))}, {"ssim", mean(all_ssim)}}}};
}

namespace {

Tensor rand_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.values()) v = d(rng);
  return t;
}

// Bounded away from zero so relu kinks are not probed.
Tensor kink_free(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.values()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

struct Check {
  std::string name;
  GradCheckReport report;
};

void run_ops(std::vector<Check>& out, std::uint64_t seed, const GradCheckOptions& opts) {
  std::mt19937_64 rng(seed);
  auto check = [&](const char* name, const GradCheckFn& fn, const std::vector<GradCheckInput>& in) {
    out.push_back({name, grad_check(fn, in, opts)});
  };
  check("conv2d", [](Tape&, std::span<const Var> v) { return conv2d(v[0], v[1], v[2]); },
        {{"x", rand_tensor({2, 2, 4, 5}, rng)}, {"w", rand_tensor({3, 2, 3, 3}, rng)}, {"b", rand_tensor({3}, rng)}});
  check("conv2d_stride2", [](Tape&, std::span<const Var> v) { return conv2d(v[0], v[1], {2, Padding::Same}); },
        {{"x", rand_tensor({1, 5, 6}, rng)}, {"w", rand_tensor({2, 1, 3, 3}, rng)}});
  check("batch_norm_train",
        [](Tape&, std::span<const Var> v) {
          auto st = BatchNormState::identity(2);
          return batch_norm(v[0], v[1], v[2], st, {BnMode::Train, 0.1, 1e-5, false});
        },
        {{"x", rand_tensor({2, 2, 3, 3}, rng)}, {"gamma", rand_tensor({2}, rng, 0.5, 1.5)}, {"beta", rand_tensor({2}, rng)}});
  check("batch_norm_eval",
        [](Tape&, std::span<const Var> v) {
          BatchNormState st{Tensor({2}, 0.3), Tensor({2}, 1.7)};
          return batch_norm(v[0], v[1], v[2], st, {BnMode::Eval, 0.1, 1e-5, false});
        },
        {{"x", rand_tensor({2, 3, 3}, rng)}, {"gamma", rand_tensor({2}, rng)}, {"beta", rand_tensor({2}, rng)}});
  check("relu", [](Tape&, std::span<const Var> v) { return relu(v[0]); }, {{"x", kink_free({2, 3, 3}, rng)}});
  check("sigmoid", [](Tape&, std::span<const Var> v) { return sigmoid(v[0]); }, {{"x", rand_tensor({2, 3, 3}, rng, -4, 4)}});
  check("max_pool", [](Tape&, std::span<const Var> v) { return downsample2(v[0], PoolKind::Max); },
        {{"x", rand_tensor({2, 4, 6}, rng)}});
  check("area_pool", [](Tape&, std::span<const Var> v) { return downsample2(v[0], PoolKind::Area); },
        {{"x", rand_tensor({1, 2, 4, 4}, rng)}});
  check("upsample2", [](Tape&, std::span<const Var> v) { return upsample2(v[0]); }, {{"x", rand_tensor({2, 3, 4}, rng)}});
  check("concat_slice", [](Tape&, std::span<const Var> v) { return slice_channels(concat_channels(v[0], v[1]), 1, 3); },
        {{"a", rand_tensor({2, 3, 3}, rng)}, {"b", rand_tensor({2, 3, 3}, rng)}});
  check("avg_pool_channel_scale",
        [](Tape&, std::span<const Var> v) { return channel_scale(v[0], global_avg_pool(v[1])); },
        {{"x", rand_tensor({2, 3, 3, 2}, rng)}, {"y", rand_tensor({2, 3, 2, 2}, rng)}});
  check("add", [](Tape&, std::span<const Var> v) { return add(v[0], v[1]); },
        {{"a", rand_tensor({2, 3}, rng)}, {"b", rand_tensor({2, 3}, rng)}});
  check("matmul_transpose", [](Tape&, std::span<const Var> v) { return matmul(transpose(v[0]), v[1]); },
        {{"a", rand_tensor({2, 4, 3}, rng)}, {"b", rand_tensor({2, 4, 5}, rng)}});
  check("spd_solve_ridge",
        [](Tape&, std::span<const Var> v) { return spd_solve(add_trace_ridge(matmul(transpose(v[0]), v[0]), 0.1), v[1]); },
        {{"v", rand_tensor({6, 3}, rng)}, {"r", rand_tensor({3, 4}, rng)}});
  check("softmax_rows", [](Tape&, std::span<const Var> v) { return softmax_rows(v[0]); },
        {{"x", rand_tensor({2, 3, 5}, rng, -3, 3)}});
  check("mse_loss", [](Tape&, std::span<const Var> v) { return mse_loss(v[0], v[1]); },
        {{"a", rand_tensor({1, 4, 4}, rng)}, {"b", rand_tensor({1, 4, 4}, rng)}});
  check("reshape", [](Tape&, std::span<const Var> v) { return sigmoid(reshape(v[0], {3, 4})); },
        {{"x", rand_tensor({2, 6}, rng)}});
  check("orth_project", [](Tape&, std::span<const Var> v) { return orth_project(v[0]); },
        {{"v", rand_tensor({2, 12, 3}, rng)}});
  check("attention_weights", [](Tape&, std::span<const Var> v) { return attention_weights(v[0]); },
        {{"v", rand_tensor({10, 3}, rng)}});
  check("cam_pool", [](Tape&, std::span<const Var> v) { return cam_pool(v[0]); }, {{"x", rand_tensor({2, 3, 4, 4}, rng)}});
}

// Runs a block with its parameters bound as extra grad-check inputs after
// the data inputs.
Check run_block(const char* name, ParamStore& store, std::vector<GradCheckInput> inputs,
                const std::function<Var(Forward&, std::span<const Var>)>& body, BatchNormOptions bn,
                const GradCheckOptions& opts) {
  const std::size_t skip = inputs.size();
  const auto params = param_inputs(store);
  inputs.insert(inputs.end(), params.begin(), params.end());
  auto fn = [&](Tape& tape, std::span<const Var> v) {
    Forward f(tape, store, bn);
    bind_params(f, params, v, skip);
    return body(f, v);
  };
  return {name, grad_check(fn, inputs, opts)};
}

}  // namespace

Json gradcheck_suite(const std::vector<std::string>& targets, std::uint64_t seed, double rel_tol) {
  static const std::vector<std::string> kAll{"ops", "safm", "cam", "conv_block", "sarnet"};
  std::vector<std::string> chosen = targets.empty() ? kAll : targets;
  for (const auto& t : chosen) {
    if (std::find(kAll.begin(), kAll.end(), t) == kAll.end())
      throw ConfigError("gradcheck: unknown target '" + t + "' (ops, safm, cam, conv_block, sarnet)");
  }
  auto wanted = [&](const char* t) { return std::find(chosen.begin(), chosen.end(), t) != chosen.end(); };
  GradCheckOptions opts;
  opts.rel_tol = rel_tol;
  opts.seed = seed;
  const BatchNormOptions train_bn{BnMode::Train, 0.1, 1e-5, false};
  std::vector<Check> checks;
  std::mt19937_64 data(sim::derive_seed(seed, 0x9c));
  Rng init(sim::derive_seed(seed, 0x9d));

  if (wanted("ops")) run_ops(checks, sim::derive_seed(seed, 0x9e), opts);
  if (wanted("safm")) {
    ParamStore store;
    init_safm(store, "safm", {3, 4, 4, 3}, init);
    GradCheckOptions o = opts;
    o.max_probes_per_input = 24;
    checks.push_back(run_block("safm_8x8", store,
                               {{"xa", rand_tensor({2, 3, 8, 8}, data)},
                                {"xp", rand_tensor({2, 3, 8, 8}, data)},
                                {"xf", rand_tensor({2, 3, 8, 8}, data)}},
                               [](Forward& f, std::span<const Var> v) { return safm_forward(f, v[0], v[1], v[2], "safm"); },
                               train_bn, o));
  }
  if (wanted("cam")) {
    ParamStore store;
    init_cam(store, "cam", 4, 4, init);
    checks.push_back(run_block("cam", store,
                               {{"xc", rand_tensor({2, 4, 5, 5}, data)}, {"xs", rand_tensor({2, 4, 5, 5}, data)}},
                               [](Forward& f, std::span<const Var> v) { return cam_apply(f, v[0], v[1], "cam"); },
                               train_bn, opts));
  }
  if (wanted("conv_block")) {
    ParamStore store;
    init_conv_block(store, "block", 2, 3, 3, init);
    checks.push_back(run_block("conv_block", store, {{"x", rand_tensor({2, 2, 6, 6}, data)}},
                               [](Forward& f, std::span<const Var> v) { return conv_block(f, v[0], "block"); },
                               train_bn, opts));
  }
  if (wanted("sarnet")) {
    const ModelConfig c = ModelConfig::toy(Arch::SARNet);
    ParamStore store = init_model(c, sim::derive_seed(seed, 0x9f));
    const NetInput in{rand_tensor({2, 1, 32, 32}, data, 0.0, 1.0), rand_tensor({2, c.band_count, 32, 32}, data, 0.0, 1.0),
                      rand_tensor({2, c.band_count, 32, 32}, data, 0.0, 1.0)};
    GradCheckOptions o = opts;
    o.max_probes_per_input = 3;
    checks.push_back(run_block("sarnet_toy_32x32", store, {},
                               [&](Forward& f, std::span<const Var>) { return model_forward(f, c, in); }, train_bn, o));
  }

  bool passed = true;
  Json rows = Json::array();
  for (const auto& [name, r] : checks) {
    passed = passed && r.passed;
    rows.push_back({{"name", name},
                    {"passed", r.passed},
                    {"max_rel_error", r.max_rel_error},
                    {"probes", r.probes},
                    {"skipped_nonsmooth", r.skipped_nonsmooth}});
  }
  return {{"command", "gradcheck"}, {"rel_tol", rel_tol}, {"seed", seed}, {"passed", passed}, {"checks", rows}};
}

}  // namespace tzlab::pipeline
