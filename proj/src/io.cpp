#include "tzlab/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tzlab/error.hpp"

namespace tzlab::io {

namespace {

static_assert(std::endian::native == std::endian::little, "TZT1 I/O assumes a little-endian host");

constexpr char kMagic[4] = {'T', 'Z', 'T', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw IoError("TZT1: unsupported dtype '" + s + "'");
}

Shape shape_from_json(const Json& j, const char* what) {
  if (!j.is_array()) throw IoError(std::string(what) + ": shape must be an array");
  Shape s;
  for (const auto& e : j) {
    if (!e.is_number_unsigned()) throw IoError(std::string(what) + ": bad extent in shape");
    s.push_back(e.get<std::size_t>());
  }
  return s;
}

Json range_json(const sim::ChannelRange& r) { return Json::array({r.lo, r.hi}); }

sim::ChannelRange range_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw IoError("projection: channel range must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

// Reads `key` into `out` when present, rejecting values of the wrong kind.
template <class T>
void take(const Json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(std::string("model: key '") + key + "' has the wrong type");
  }
}

}  // namespace

std::vector<std::uint8_t> encode_tzt1(const Tensor& t, const Json& meta) {
  Json header = {{"dtype", dtype_name(t.dtype())}, {"shape", t.shape()}, {"order", "row-major"}, {"meta", meta}};
  const std::string h = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out.insert(out.end(), h.begin(), h.end());
  const std::size_t start = out.size();
  if (t.dtype() == DType::f64) {
    out.resize(start + t.size() * 8);
    std::memcpy(out.data() + start, t.data(), t.size() * 8);
  } else {
    out.resize(start + t.size() * 4);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const float f = static_cast<float>(t[i]);
      std::memcpy(out.data() + start + 4 * i, &f, 4);
    }
  }
  return out;
}

Tzt1Doc decode_tzt1(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("TZT1: bad magic");
  const std::size_t hlen = get_u32(bytes.data() + 4);
  if (bytes.size() < 8 + hlen) throw IoError("TZT1: truncated header");
  Json header;
  try {
    header = Json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const Json::exception& e) {
    throw IoError(std::string("TZT1: header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("dtype") || !header.contains("shape")) {
    throw IoError("TZT1: header lacks dtype or shape");
  }
  if (header.value("order", "row-major") != "row-major") throw IoError("TZT1: only row-major order is supported");
  const DType dtype = parse_dtype(header["dtype"].get<std::string>());
  const Shape shape = shape_from_json(header["shape"], "TZT1");
  const std::size_t n = shape_numel(shape), width = dtype == DType::f32 ? 4 : 8;
  if (bytes.size() - 8 - hlen != n * width) {
    throw IoError("TZT1: payload holds " + std::to_string(bytes.size() - 8 - hlen) + " bytes, expected " +
                  std::to_string(n * width));
  }
  Tzt1Doc doc{Tensor(shape), header.value("meta", Json::object())};
  const std::uint8_t* p = bytes.data() + 8 + hlen;
  if (dtype == DType::f64) {
    std::memcpy(doc.tensor.data(), p, n * 8);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, p + 4 * i, 4);
      doc.tensor[i] = f;
    }
  }
  doc.tensor.set_dtype(dtype);
  return doc;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return bytes;
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void save_tzt1(const fs::path& path, const Tensor& t, const Json& meta) { write_file(path, encode_tzt1(t, meta)); }

Tzt1Doc load_tzt1(const fs::path& path) {
  try {
    return decode_tzt1(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

const Tensor& Bundle::at(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw IoError("bundle has no tensor '" + name + "'");
}

bool Bundle::contains(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

void save_bundle(const fs::path& path, const Bundle& b, DType dtype) {
  std::size_t total = 0;
  Json index = Json::array();
  for (const auto& t : b.tensors) {
    index.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"offset", total}});
    total += t.value.size();
  }
  Tensor flat(Shape{std::max<std::size_t>(total, 1)});
  std::size_t off = 0;
  for (const auto& t : b.tensors) {
    std::copy_n(t.value.data(), t.value.size(), flat.data() + off);
    off += t.value.size();
  }
  flat.set_dtype(dtype);
  Json meta = b.meta.is_null() ? Json::object() : b.meta;
  meta["tensors"] = index;
  save_tzt1(path, flat, meta);
}

Bundle load_bundle(const fs::path& path) {
  Tzt1Doc doc = load_tzt1(path);
  if (!doc.meta.contains("tensors") || !doc.meta["tensors"].is_array()) {
    throw IoError(path.string() + ": not a tensor bundle");
  }
  Bundle b;
  for (const auto& e : doc.meta["tensors"]) {
    const Shape shape = shape_from_json(e.at("shape"), "bundle");
    const std::size_t off = e.at("offset").get<std::size_t>(), n = shape_numel(shape);
    if (off + n > doc.tensor.size()) throw IoError(path.string() + ": bundle entry overruns the payload");
    Tensor t(shape);
    std::copy_n(doc.tensor.data() + off, n, t.data());
    t.set_dtype(doc.tensor.dtype());
    b.tensors.push_back({e.at("name").get<std::string>(), std::move(t)});
  }
  doc.meta.erase("tensors");
  b.meta = std::move(doc.meta);
  return b;
}

void export_pgm(const fs::path& path, const Tensor& image) {
  std::size_t h, w;
  if (image.rank() == 2) {
    h = image.dim(0), w = image.dim(1);
  } else if (image.rank() == 3 && image.dim(0) == 1) {
    h = image.dim(1), w = image.dim(2);
  } else {
    throw ShapeError("export_pgm: expected [1,H,W] or [H,W], got " + shape_to_string(image.shape()));
  }
  const std::string head = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n65535\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.reserve(out.size() + 2 * h * w);
  for (double v : image.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw NumericError("export_pgm: value " + std::to_string(v) + " outside [0,1]");
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    out.push_back(static_cast<std::uint8_t>(q >> 8));
    out.push_back(static_cast<std::uint8_t>(q & 0xff));
  }
  write_file(path, out);
}

Tensor import_pgm(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") throw IoError(path.string() + ": not a binary PGM");
  std::size_t w, h, maxval;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PGM header");
  }
  ++pos;  // single whitespace before the raster
  if (maxval == 0 || maxval > 65535) throw IoError(path.string() + ": bad PGM maxval");
  const std::size_t width = maxval > 255 ? 2 : 1;
  if (bytes.size() < pos + width * w * h) throw IoError(path.string() + ": truncated PGM raster");
  Tensor img({1, h, w});
  for (std::size_t i = 0; i < w * h; ++i) {
    const std::size_t v = width == 2 ? (bytes[pos + 2 * i] << 8 | bytes[pos + 2 * i + 1]) : bytes[pos + i];
    img[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

Json to_json(const ModelConfig& c) {
  return {{"arch", to_string(c.arch)},
          {"scales", c.scales},
          {"base_channels", c.base_channels},
          {"k", c.k},
          {"c1", c.c1},
          {"cam_ratio", c.cam_ratio},
          {"bands_per_scale", c.bands_per_scale},
          {"band_count", c.band_count},
          {"trunk_kernel", c.trunk_kernel},
          {"spectral_kernel", c.spectral_kernel},
          {"eps_reg", c.eps_reg}};
}

ModelConfig model_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("model: expected an object");
  static const std::vector<std::string> keys{"arch",      "scales",          "base_channels", "k",
                                             "c1",        "cam_ratio",       "bands_per_scale", "band_count",
                                             "trunk_kernel", "spectral_kernel", "eps_reg",       "preset"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("model: unknown key '" + k + "'");
  }
  ModelConfig c;
  std::string preset = "full";
  take(j, "preset", preset);
  if (preset == "toy") {
    c = ModelConfig::toy();
  } else if (preset != "full") {
    throw ConfigError("model: unknown preset '" + preset + "' (expected full or toy)");
  }
  std::string arch = to_string(c.arch);
  take(j, "arch", arch);
  c.arch = parse_arch(arch);
  take(j, "scales", c.scales);
  take(j, "base_channels", c.base_channels);
  take(j, "k", c.k);
  take(j, "c1", c.c1);
  take(j, "cam_ratio", c.cam_ratio);
  take(j, "bands_per_scale", c.bands_per_scale);
  take(j, "band_count", c.band_count);
  take(j, "trunk_kernel", c.trunk_kernel);
  take(j, "spectral_kernel", c.spectral_kernel);
  take(j, "eps_reg", c.eps_reg);
  c.validate();
  return c;
}

Json to_json(const sim::Material& m) { return {{"name", m.name}, {"n", m.n}, {"alpha", m.alpha}}; }

sim::Material material_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("material: expected an object");
  for (const auto& [k, v] : j.items()) {
    if (k != "name" && k != "n" && k != "alpha") throw ConfigError("material: unknown key '" + k + "'");
  }
  sim::Material m;
  try {
    m.name = j.value("name", std::string("material"));
    m.n = j.value("n", 1.0);
    m.alpha = j.value("alpha", 0.0);
  } catch (const Json::exception&) {
    throw ConfigError("material: wrong value type");
  }
  m.validate();
  return m;
}

void save_phantom(const fs::path& path, const sim::Phantom& p, const Json& extra) {
  p.validate();
  Tensor grid({p.depth, p.size, p.size});
  for (std::size_t i = 0; i < p.labels.size(); ++i) grid[i] = p.labels[i];
  grid.set_dtype(DType::f32);
  Json meta = extra;
  meta["kind"] = "phantom";
  meta["voxel_pitch"] = p.voxel_pitch;
  meta["materials"] = Json::array();
  for (const auto& m : p.materials) meta["materials"].push_back(to_json(m));
  save_tzt1(path, grid, meta);
}

sim::Phantom load_phantom(const fs::path& path) {
  const Tzt1Doc doc = load_tzt1(path);
  if (doc.meta.value("kind", "") != "phantom") throw IoError(path.string() + ": not a phantom file");
  const Tensor& g = doc.tensor;
  if (g.rank() != 3 || g.dim(1) != g.dim(2)) throw IoError(path.string() + ": phantom grid must be [Z,N,N]");
  sim::Phantom p;
  p.depth = g.dim(0);
  p.size = g.dim(1);
  p.voxel_pitch = doc.meta.at("voxel_pitch").get<double>();
  for (const auto& m : doc.meta.at("materials")) p.materials.push_back(material_from_json(m));
  p.labels.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] < 0 || g[i] > 255 || g[i] != std::floor(g[i])) throw IoError(path.string() + ": bad label value");
    p.labels[i] = static_cast<std::uint8_t>(g[i]);
  }
  p.validate();
  return p;
}

void save_projection(const fs::path& path, const sim::SpectralProjection& p, const Json& extra) {
  p.validate();
  Bundle b;
  b.tensors = {{"time_max", p.time_max}, {"amplitude", p.amplitude}, {"phase", p.phase}, {"clean_gt", p.clean_gt}};
  b.meta = extra;
  b.meta["kind"] = "projection";
  b.meta["view_angle"] = p.view_angle;
  b.meta["bands"] = p.bands;
  b.meta["ranges"] = {{"time_max", range_json(p.time_max_range)},
                      {"amplitude", range_json(p.amplitude_range)},
                      {"phase", range_json(p.phase_range)}};
  save_bundle(path, b, DType::f32);
}

sim::SpectralProjection load_projection(const fs::path& path, Json* meta) {
  Bundle b = load_bundle(path);
  if (b.meta.value("kind", "") != "projection") throw IoError(path.string() + ": not a projection file");
  sim::SpectralProjection p;
  p.time_max = b.at("time_max");
  p.amplitude = b.at("amplitude");
  p.phase = b.at("phase");
  p.clean_gt = b.at("clean_gt");
  p.view_angle = b.meta.at("view_angle").get<double>();
  p.bands = b.meta.at("bands").get<std::vector<double>>();
  const Json& r = b.meta.at("ranges");
  p.time_max_range = range_from_json(r.at("time_max"));
  p.amplitude_range = range_from_json(r.at("amplitude"));
  p.phase_range = range_from_json(r.at("phase"));
  p.validate();
  if (meta) *meta = b.meta;
  return p;
}

void save_checkpoint(const fs::path& path, const ParamStore& params, const ModelConfig& cfg, const OptimState& optim,
                     const Json& extra) {
  Bundle b;
  for (const auto& n : params.names()) b.tensors.push_back({"param/" + n, params.at(n)});
  for (const auto& n : params.bn_names()) {
    b.tensors.push_back({"bn_mean/" + n, params.bn_state(n).running_mean});
    b.tensors.push_back({"bn_var/" + n, params.bn_state(n).running_var});
  }
  for (const auto& [n, m] : optim.m) b.tensors.push_back({"adam_m/" + n, m});
  for (const auto& [n, v] : optim.v) b.tensors.push_back({"adam_v/" + n, v});
  b.meta = extra;
  b.meta["kind"] = "checkpoint";
  b.meta["model"] = to_json(cfg);
  b.meta["optimizer"] = {{"step", optim.step}};
  save_bundle(path, b, DType::f64);
}

Checkpoint load_checkpoint(const fs::path& path) {
  Bundle b = load_bundle(path);
  if (b.meta.value("kind", "") != "checkpoint") throw IoError(path.string() + ": not a checkpoint");
  Checkpoint ck;
  ck.config = model_config_from_json(b.meta.at("model"));
  ck.params = init_model(ck.config, 0);
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    const Tensor& t = b.at(name);
    if (t.shape() != shape) throw IoError(path.string() + ": '" + name + "' has shape " + shape_to_string(t.shape()));
    return t;
  };
  for (const auto& n : ck.params.names()) {
    Tensor& dst = ck.params.at(n);
    dst = fetch("param/" + n, dst.shape());
    dst.set_dtype(DType::f64);
  }
  for (const auto& n : ck.params.bn_names()) {
    BatchNormState& s = ck.params.bn_state(n);
    s.running_mean = fetch("bn_mean/" + n, s.running_mean.shape());
    s.running_var = fetch("bn_var/" + n, s.running_var.shape());
  }
  for (const auto& t : b.tensors) {
    if (t.name.rfind("adam_m/", 0) == 0) ck.optim.m[t.name.substr(7)] = t.value;
    if (t.name.rfind("adam_v/", 0) == 0) ck.optim.v[t.name.substr(7)] = t.value;
  }
  ck.optim.step = b.meta.at("optimizer").at("step").get<std::size_t>();
  b.meta.erase("model");
  b.meta.erase("optimizer");
  ck.meta = std::move(b.meta);
  if (!ck.params.all_finite()) throw NumericError(path.string() + ": checkpoint holds non-finite values");
  return ck;
}

void save_volume(const fs::path& path, const tomo::Volume& v, const Json& extra) {
  Json meta = extra;
  meta["kind"] = "volume";
  meta["voxel_pitch"] = v.voxel_pitch;
  save_tzt1(path, v.grid, meta);
}

tomo::Volume load_volume(const fs::path& path, Json* meta) {
  Tzt1Doc doc = load_tzt1(path);
  if (doc.meta.value("kind", "") != "volume") throw IoError(path.string() + ": not a volume file");
  if (doc.tensor.rank() != 3) throw IoError(path.string() + ": volume must be [Z,H,W]");
  tomo::Volume v{std::move(doc.tensor), doc.meta.at("voxel_pitch").get<double>()};
  if (meta) *meta = doc.meta;
  return v;
}

}  // namespace tzlab::io
