#include "tzlab/config.hpp"

#include <algorithm>
#include <cmath>

#include "tzlab/error.hpp"

namespace tzlab {

using io::Json;

namespace {

// Tracks the dotted path for error messages and rejects unknown keys.
class Section {
 public:
  Section(const Json& j, std::string path, std::vector<std::string> keys) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + "expected an object");
    for (const auto& [k, v] : j.items()) {
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("unknown key '" + path_ + k + "'");
    }
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const Json& raw(const char* key) const { return j_.at(key); }
  std::string child(const char* key) const { return path_ + key + "."; }

  template <class T>
  void get(const char* key, T& out) const {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("'" + path_ + key + "' must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0 && !v.is_number_unsigned()))
        throw ConfigError("'" + path_ + key + "' must be a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("'" + path_ + key + "' must be a number");
    } else {
      if (!v.is_string()) throw ConfigError("'" + path_ + key + "' must be a string");
    }
    out = v.get<T>();
  }

  void positive(const char* key, double v) const {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("'" + path_ + key + "' must be positive and finite");
  }

 private:
  std::string where() const { return path_.empty() ? "config: " : "'" + path_.substr(0, path_.size() - 1) + "': "; }
  const Json& j_;
  std::string path_;
};

double parse_snr(const Json& v) {
  if (v.is_string() && v.get<std::string>() == "inf") return sim::kNoNoise;
  if (!v.is_number()) throw ConfigError("'degrade.snr_db' must be a number or \"inf\"");
  const double s = v.get<double>();
  if (!(s > 0.0)) throw ConfigError("'degrade.snr_db' must be positive");
  return s;
}

tomo::RampWindow parse_window(const std::string& s) {
  if (s == "none") return tomo::RampWindow::None;
  if (s == "hann") return tomo::RampWindow::Hann;
  throw ConfigError("'tomo.window' must be none or hann");
}

tomo::ReconMethod parse_method(const std::string& s) {
  if (s == "fbp") return tomo::ReconMethod::Fbp;
  if (s == "sart") return tomo::ReconMethod::Sart;
  throw ConfigError("'tomo.method' must be fbp or sart");
}

void parse_phantom(const Section& s, DatasetSpec& d) {
  if (s.has("families")) {
    const Json& f = s.raw("families");
    if (!f.is_array() || f.empty()) throw ConfigError("'phantom.families' must be a non-empty array");
    d.families.clear();
    for (const auto& e : f) {
      if (!e.is_string()) throw ConfigError("'phantom.families' entries must be strings");
      d.families.push_back(sim::parse_phantom_kind(e.get<std::string>()));
    }
  }
  s.get("objects_per_family", d.objects_per_family);
  s.get("size", d.size);
  s.get("depth", d.depth);
  s.get("voxel_pitch", d.voxel_pitch);
  s.get("radius_frac", d.radius_frac);
  if (s.has("materials")) {
    const Json& m = s.raw("materials");
    if (!m.is_array()) throw ConfigError("'phantom.materials' must be an array");
    d.materials.clear();
    for (const auto& e : m) d.materials.push_back(io::material_from_json(e));
  }
  if (d.objects_per_family == 0) throw ConfigError("'phantom.objects_per_family' must be positive");
  if (d.size < 8 || d.depth < 8) throw ConfigError("'phantom.size' and 'phantom.depth' must be at least 8");
  s.positive("voxel_pitch", d.voxel_pitch);
  if (!(d.radius_frac > 0.0 && d.radius_frac <= 0.5)) throw ConfigError("'phantom.radius_frac' must lie in (0, 0.5]");
}

void parse_degrade(const Section& s, sim::DegradeOptions& o) {
  s.get("psf_k", o.psf_k);
  if (!(o.psf_k >= 0.0)) throw ConfigError("'degrade.psf_k' must be non-negative");
  if (s.has("snr_db")) o.snr_db = parse_snr(s.raw("snr_db"));
  if (s.has("water_lines")) {
    const Json& w = s.raw("water_lines");
    if (!w.is_array()) throw ConfigError("'degrade.water_lines' must be an array of [frequency, transmission]");
    o.water_lines.clear();
    for (const auto& e : w) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
        throw ConfigError("'degrade.water_lines' entries must be [frequency, transmission]");
      const double t = e[1].get<double>();
      if (!(t > 0.0 && t <= 1.0)) throw ConfigError("'degrade.water_lines' transmission must lie in (0, 1]");
      o.water_lines.emplace_back(e[0].get<double>(), t);
    }
  }
}

void parse_train(const Section& s, TrainSettings& t) {
  TrainOptions& o = t.options;
  s.get("steps", o.steps);
  s.get("epochs", o.epochs);
  s.get("batch_size", o.batch_size);
  s.get("lr", o.lr);
  s.get("lr_decay", o.lr_decay);
  s.get("decay_every", o.decay_every);
  s.get("beta1", o.adam.beta1);
  s.get("beta2", o.adam.beta2);
  s.get("eps", o.adam.eps);
  std::string fam = sim::to_string(t.test_family);
  s.get("test_family", fam);
  t.test_family = sim::parse_phantom_kind(fam);
  if (s.has("augment")) {
    const Section a(s.raw("augment"), s.child("augment"),
                    {"crop", "scale_lo", "scale_hi", "allow_flip", "brightness", "contrast"});
    sim::AugmentOptions ao;
    a.get("crop", ao.crop);
    a.get("scale_lo", ao.scale_lo);
    a.get("scale_hi", ao.scale_hi);
    a.get("allow_flip", ao.allow_flip);
    a.get("brightness", ao.brightness);
    a.get("contrast", ao.contrast);
    if (ao.crop == 0 || !(ao.scale_lo > 0.0 && ao.scale_lo <= ao.scale_hi))
      throw ConfigError("'train.augment' needs crop > 0 and 0 < scale_lo <= scale_hi");
    o.augment = ao;
  }
  if (o.batch_size == 0) throw ConfigError("'train.batch_size' must be positive");
  if (o.steps == 0 && o.epochs == 0) throw ConfigError("'train.steps' or 'train.epochs' must be positive");
  s.positive("lr", o.lr);
  s.positive("lr_decay", o.lr_decay);
  if (o.decay_every == 0) throw ConfigError("'train.decay_every' must be positive");
  if (!(o.adam.beta1 >= 0.0 && o.adam.beta1 < 1.0 && o.adam.beta2 >= 0.0 && o.adam.beta2 < 1.0))
    throw ConfigError("'train.beta1' and 'train.beta2' must lie in [0, 1)");
  s.positive("eps", o.adam.eps);
}

}  // namespace

RunConfig parse_run_config(const Json& doc) {
  const Section root(doc, "", {"seed", "phantom", "bands", "degrade", "acquisition", "model", "train", "tomo", "output"});
  RunConfig c;
  root.get("seed", c.seed);
  if (root.has("phantom"))
    parse_phantom(Section(root.raw("phantom"), "phantom.",
                          {"families", "objects_per_family", "size", "depth", "voxel_pitch", "radius_frac", "materials"}),
                  c.dataset);
  if (root.has("bands")) {
    const Json& b = root.raw("bands");
    if (!b.is_array()) throw ConfigError("'bands' must be an array of frequencies in THz");
    c.dataset.bands.frequencies.clear();
    for (const auto& f : b) {
      if (!f.is_number()) throw ConfigError("'bands' entries must be numbers");
      c.dataset.bands.frequencies.push_back(f.get<double>());
    }
  }
  c.dataset.bands.validate();
  if (root.has("degrade"))
    parse_degrade(Section(root.raw("degrade"), "degrade.", {"psf_k", "snr_db", "water_lines"}), c.dataset.degrade);
  if (root.has("acquisition")) {
    const Section a(root.raw("acquisition"), "acquisition.", {"angles", "step_deg"});
    a.get("angles", c.dataset.angles);
    a.get("step_deg", c.dataset.step_deg);
    if (c.dataset.angles == 0) throw ConfigError("'acquisition.angles' must be positive");
    a.positive("step_deg", c.dataset.step_deg);
    if (static_cast<double>(c.dataset.angles) * c.dataset.step_deg > 180.0 + 1e-9)
      throw ConfigError("'acquisition' must stay within a half turn (angles x step_deg <= 180)");
  }
  if (root.has("model")) {
    Json m = root.raw("model");
    if (m.is_object() && !m.contains("preset")) m["preset"] = "toy";  // the run default
    c.model = io::model_config_from_json(m);
  }
  if (c.model.band_count != c.dataset.bands.frequencies.size())
    throw ConfigError("'model.band_count' (" + std::to_string(c.model.band_count) + ") differs from the " +
                      std::to_string(c.dataset.bands.frequencies.size()) + " configured bands");
  c.model.validate();
  if (root.has("train"))
    parse_train(Section(root.raw("train"), "train.",
                        {"steps", "epochs", "batch_size", "lr", "lr_decay", "decay_every", "beta1", "beta2", "eps",
                         "test_family", "augment"}),
                c.train);
  if (root.has("tomo")) {
    const Section t(root.raw("tomo"), "tomo.", {"method", "window", "sart_iters", "sart_relax"});
    std::string method = "fbp", window = "none";
    t.get("method", method);
    t.get("window", window);
    c.tomo.volume.method = parse_method(method);
    c.tomo.volume.window = parse_window(window);
    t.get("sart_iters", c.tomo.volume.sart.iters);
    t.get("sart_relax", c.tomo.volume.sart.relax);
    if (c.tomo.volume.sart.iters == 0) throw ConfigError("'tomo.sart_iters' must be positive");
    if (!(c.tomo.volume.sart.relax > 0.0 && c.tomo.volume.sart.relax <= 1.0))
      throw ConfigError("'tomo.sart_relax' must lie in (0, 1]");
  }
  if (root.has("output")) {
    const Section o(root.raw("output"), "output.", {"dir"});
    o.get("dir", c.output_dir);
  }
  c.dataset.seed = c.seed;
  c.train.options.seed = c.seed;
  c.tomo.volume.pixel_pitch = c.dataset.voxel_pitch;
  return c;
}

Json to_json(const RunConfig& c) {
  const DatasetSpec& d = c.dataset;
  Json families = Json::array();
  for (auto f : d.families) families.push_back(sim::to_string(f));
  Json materials = Json::array();
  for (const auto& m : d.materials) materials.push_back(io::to_json(m));
  Json water = Json::array();
  for (const auto& [f, t] : d.degrade.water_lines) water.push_back({f, t});
  const TrainOptions& o = c.train.options;
  Json train = {{"steps", o.steps},
                {"epochs", o.epochs},
                {"batch_size", o.batch_size},
                {"lr", o.lr},
                {"lr_decay", o.lr_decay},
                {"decay_every", o.decay_every},
                {"beta1", o.adam.beta1},
                {"beta2", o.adam.beta2},
                {"eps", o.adam.eps},
                {"test_family", sim::to_string(c.train.test_family)}};
  if (o.augment) {
    const auto& a = *o.augment;
    train["augment"] = {{"crop", a.crop},           {"scale_lo", a.scale_lo},     {"scale_hi", a.scale_hi},
                        {"allow_flip", a.allow_flip}, {"brightness", a.brightness}, {"contrast", a.contrast}};
  }
  const auto& v = c.tomo.volume;
  return {{"seed", c.seed},
          {"phantom",
           {{"families", families},
            {"objects_per_family", d.objects_per_family},
            {"size", d.size},
            {"depth", d.depth},
            {"voxel_pitch", d.voxel_pitch},
            {"radius_frac", d.radius_frac},
            {"materials", materials}}},
          {"bands", d.bands.frequencies},
          {"degrade",
           {{"psf_k", d.degrade.psf_k},
            {"snr_db", std::isfinite(d.degrade.snr_db) ? Json(d.degrade.snr_db) : Json("inf")},
            {"water_lines", water}}},
          {"acquisition", {{"angles", d.angles}, {"step_deg", d.step_deg}}},
          {"model", io::to_json(c.model)},
          {"train", train},
          {"tomo",
           {{"method", v.method == tomo::ReconMethod::Fbp ? "fbp" : "sart"},
            {"window", v.window == tomo::RampWindow::None ? "none" : "hann"},
            {"sart_iters", v.sart.iters},
            {"sart_relax", v.sart.relax}}},
          {"output", {{"dir", c.output_dir}}}};
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::exception&) {
    value = text;
  }
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override '" + key + "' descends into a non-object");
      *node = Json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  Json doc = Json::object();
  if (!path.empty()) {
    const auto bytes = io::read_file(path);
    try {
      doc = Json::parse(bytes.begin(), bytes.end());
    } catch (const Json::exception& e) {
      throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_run_config(doc);
}

}  // namespace tzlab
