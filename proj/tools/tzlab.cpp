// tzlab: command-line front end. Every command prints a JSON summary on
// stdout; failures print {"error": {...}} on stderr and exit with 2
// (config), 3 (numeric) or 4 (I/O).

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tzlab/error.hpp"
#include "tzlab/pipeline.hpp"

namespace {

using tzlab::io::Json;
namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool seed_required) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)");
  cmd->add_option("--set", c.overrides, "Override a config value, e.g. --set train.lr=1e-3")->take_all();
  auto* s = cmd->add_option("--seed", c.seed, "Master seed");
  if (seed_required) s->required();
}

tzlab::RunConfig load(const Common& c, const std::vector<std::string>& extra = {}) {
  std::vector<std::string> ov = c.overrides;
  ov.insert(ov.end(), extra.begin(), extra.end());
  if (c.seed) ov.push_back("seed=" + std::to_string(*c.seed));
  return tzlab::load_run_config(c.config, ov);
}

fs::path out_dir(const fs::path& given, const tzlab::RunConfig& cfg, const char* sub) {
  return given.empty() ? fs::path(cfg.output_dir) / sub : given;
}

int fail(const std::string& kind, int code, const std::string& message) {
  std::cerr << Json{{"error", {{"kind", kind}, {"code", code}, {"message", message}}}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"THz tomography lab: simulate, restore and reconstruct"};
  app.require_subcommand(1);

  Common c;
  fs::path out, phantom, checkpoint, manifest;
  std::vector<fs::path> inputs, refs;
  std::optional<std::size_t> angles;
  std::optional<double> step;
  std::string channel = "auto", pred_channel = "auto", ref_channel = "clean_gt", method;
  std::vector<std::string> targets;
  double rel_tol = 1e-5;
  bool pgm = false;

  auto* ph = app.add_subcommand("phantom", "Write one phantom per configured object");
  add_common(ph, c, true);
  ph->add_option("--out", out, "Output directory (default: <output.dir>/phantoms)");

  auto* sm = app.add_subcommand("simulate", "Simulate the views of one phantom");
  add_common(sm, c, true);
  sm->add_option("--phantom", phantom, "Phantom file")->required()->check(CLI::ExistingFile);
  sm->add_option("--angles", angles, "Measured views (each is also mirrored)");
  sm->add_option("--step", step, "Angular step in degrees");
  sm->add_option("--out", out, "Output directory (default: <output.dir>/views)");

  auto* ds = app.add_subcommand("dataset", "Simulate every object and write a split manifest");
  add_common(ds, c, true);
  ds->add_option("--out", out, "Output directory (default: <output.dir>/dataset)");

  auto* tr = app.add_subcommand("train", "Train a restoration network from a manifest");
  add_common(tr, c, true);
  tr->add_option("--manifest", manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Output directory (default: <output.dir>/model)");

  auto* rs = app.add_subcommand("restore", "Restore projection views with a checkpoint");
  add_common(rs, c, false);
  rs->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  rs->add_option("--input", inputs, "Projection files, directories or manifests")->required();
  rs->add_option("--out", out, "Output directory (default: <output.dir>/restored)");
  rs->add_flag("--pgm", pgm, "Also write 16-bit PGM images");

  auto* rc = app.add_subcommand("reconstruct", "Reconstruct one volume per object");
  add_common(rc, c, false);
  rc->add_option("--input", inputs, "View files, directories or manifests")->required();
  rc->add_option("--channel", channel, "auto, time_max, clean_gt or restored");
  rc->add_option("--method", method, "fbp or sart (overrides tomo.method)");
  rc->add_option("--out", out, "Output directory (default: <output.dir>/volumes)");

  auto* ev = app.add_subcommand("eval", "PSNR/SSIM table of predictions against references");
  add_common(ev, c, false);
  ev->add_option("--pred", inputs, "Predicted views")->required();
  ev->add_option("--ref", refs, "Reference projections")->required();
  ev->add_option("--pred-channel", pred_channel, "auto, time_max, clean_gt or restored");
  ev->add_option("--ref-channel", ref_channel, "auto, time_max, clean_gt or restored");
  ev->add_option("--out", out, "Write the table here as well as to stdout");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient report");
  add_common(gc, c, false);
  gc->add_option("--target", targets, "ops, safm, cam, conv_block, sarnet (default: all)");
  gc->add_option("--tol", rel_tol, "Relative tolerance");
  gc->add_option("--out", out, "Write the report here as well as to stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("config", 2, e.what());
  }

  try {
    Json summary;
    int code = 0;
    if (*ph) {
      const auto cfg = load(c);
      summary = tzlab::pipeline::make_phantoms(cfg, out_dir(out, cfg, "phantoms"));
    } else if (*sm) {
      std::vector<std::string> ov;
      if (angles) ov.push_back("acquisition.angles=" + std::to_string(*angles));
      if (step) ov.push_back("acquisition.step_deg=" + Json(*step).dump());
      const auto cfg = load(c, ov);
      summary = tzlab::pipeline::simulate(cfg, phantom, out_dir(out, cfg, "views"));
    } else if (*ds) {
      const auto cfg = load(c);
      summary = tzlab::pipeline::make_dataset_files(cfg, out_dir(out, cfg, "dataset"));
    } else if (*tr) {
      const auto cfg = load(c);
      summary = tzlab::pipeline::train_model(cfg, manifest, out_dir(out, cfg, "model"));
    } else if (*rs) {
      const auto cfg = load(c);
      summary = tzlab::pipeline::restore_views(checkpoint, inputs, out_dir(out, cfg, "restored"), pgm,
                                               cfg.train.options.batch_size);
    } else if (*rc) {
      std::vector<std::string> ov;
      if (!method.empty()) ov.push_back("tomo.method=" + method);
      const auto cfg = load(c, ov);
      summary = tzlab::pipeline::reconstruct(cfg, inputs, out_dir(out, cfg, "volumes"), channel);
    } else if (*ev) {
      summary = tzlab::pipeline::evaluate_views(inputs, refs, pred_channel, ref_channel);
      if (!out.empty()) tzlab::io::write_text(out, summary.dump(2) + "\n");
    } else if (*gc) {
      summary = tzlab::pipeline::gradcheck_suite(targets, load(c).seed, rel_tol);
      if (!out.empty()) tzlab::io::write_text(out, summary.dump(2) + "\n");
      if (!summary.at("passed").get<bool>()) code = static_cast<int>(tzlab::ErrorKind::Numeric);
    }
    std::cout << summary.dump(2) << "\n";
    return code;
  } catch (const tzlab::Error& e) {
    return fail(tzlab::to_string(e.kind()), static_cast<int>(e.kind()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io", 4, e.what());
  } catch (const std::exception& e) {
    return fail("internal", 1, e.what());
  }
}
