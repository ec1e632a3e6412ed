// despeckler command-line front end. Talks to the library only through the
// C API in despeckler/despeckler.h.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "despeckler/despeckler.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

int exit_code(dsp_status s) {
  switch (s) {
    case DSP_OK:
      return kExitOk;
    case DSP_ERR_ARGUMENT:
      return kExitUsage;
    case DSP_ERR_NUMERIC:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

// Thrown to unwind out of a command with a status already reported.
struct Failure {
  int code;
};

void check(dsp_status s) {
  if (s == DSP_OK) return;
  std::cerr << "despeckler: error: " << dsp_last_error() << '\n';
  throw Failure{exit_code(s)};
}

[[noreturn]] void usage_error(const std::string& msg) {
  std::cerr << "despeckler: error: " << msg << '\n';
  throw Failure{kExitUsage};
}

bool supported(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".pgm" || ext == ".f32";
}

// Expands directories (sorted, non-recursive). Files in a directory with an
// unsupported extension are reported, never dropped silently.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    const fs::path p(a);
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        if (supported(f)) {
          out.push_back(f);
        } else {
          std::cerr << "despeckler: skipping " << f.string() << ": unsupported file type\n";
        }
      }
    } else {
      out.push_back(p);
    }
  }
  return out;
}

struct Image {
  dsp_image* h = nullptr;
  Image() = default;
  explicit Image(const fs::path& p) { check(dsp_image_load(p.string().c_str(), &h)); }
  Image(const Image&) = delete;
  Image& operator=(const Image&) = delete;
  ~Image() { dsp_image_free(h); }
};

struct Model {
  dsp_model* h = nullptr;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  explicit Model(const std::string& ckpt) { check(dsp_model_load(ckpt.c_str(), &h)); }
  ~Model() { dsp_model_free(h); }
};

struct Report {
  dsp_report* h = nullptr;
  Report() = default;
  Report(const Report&) = delete;
  Report& operator=(const Report&) = delete;
  ~Report() { dsp_report_free(h); }
};

// ---- simulate ---------------------------------------------------------------

struct SimulateArgs {
  std::string corpus, out;
  double looks = 1.0;
  std::size_t patch = 256;
  std::string split = "450,50";
  std::uint64_t seed = 0;
};

int run_simulate(const SimulateArgs& a) {
  std::size_t train = 0, val = 0;
  {
    const auto comma = a.split.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      std::size_t used = 0;
      train = std::stoul(a.split.substr(0, comma), &used);
      if (used != comma) throw std::invalid_argument("trailing");
      const std::string v = a.split.substr(comma + 1);
      val = std::stoul(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      usage_error("--split expects TRAIN,VAL (e.g. 450,50), got '" + a.split + "'");
    }
  }
  std::size_t n_train = 0, n_val = 0;
  check(dsp_build_dataset(a.corpus.c_str(), a.out.c_str(), a.patch, a.looks, a.seed, train, val,
                          &n_train, &n_val));
  std::cout << "manifest: " << (fs::path(a.out) / "manifest.txt").string() << '\n'
            << "pairs: train=" << n_train << " val=" << n_val << '\n';
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config, preset = "full", manifest, out, resume;
  std::optional<double> lr, lambda1, lambda2, dropout;
  std::optional<std::size_t> epochs, batch_size, ckpt_every, val_every;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

void on_epoch(const dsp_epoch_info* e, void*) {
  std::printf("epoch %zu  loss %.6g", e->epoch, e->train_loss);
  if (e->has_validation) std::printf("  val PSNR %.3f dB  SSIM %.4f", e->val_psnr, e->val_ssim);
  std::printf("  %.1fs\n", e->wall_time_s);
  std::fflush(stdout);
}

int run_train(const TrainArgs& a) {
  dsp_train_config* cfg = nullptr;
  check(dsp_train_config_create(a.preset.c_str(), &cfg));
  struct Free {
    dsp_train_config* c;
    ~Free() { dsp_train_config_free(c); }
  } guard{cfg};

  if (!a.config.empty()) check(dsp_train_config_load_file(cfg, a.config.c_str()));
  auto set = [&](const char* key, const std::string& value) {
    check(dsp_train_config_set(cfg, key, value.c_str()));
  };
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  if (!a.manifest.empty()) set("manifest", a.manifest);
  if (!a.out.empty()) set("out_dir", a.out);
  if (a.lr) set("learning_rate", num(*a.lr));
  if (a.lambda1) set("lambda1", num(*a.lambda1));
  if (a.lambda2) set("lambda2", num(*a.lambda2));
  if (a.dropout) set("dropout", num(*a.dropout));
  if (a.epochs) set("epochs", std::to_string(*a.epochs));
  if (a.batch_size) set("batch_size", std::to_string(*a.batch_size));
  if (a.ckpt_every) set("checkpoint_every", std::to_string(*a.ckpt_every));
  if (a.val_every) set("validate_every", std::to_string(*a.val_every));
  if (a.seed) set("seed", std::to_string(*a.seed));
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) usage_error("--set expects key=value, got '" + kv + "'");
    check(dsp_train_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  check(dsp_train_config_validate(cfg));

  dsp_fit_result r{};
  check(dsp_fit(cfg, a.resume.empty() ? nullptr : a.resume.c_str(), on_epoch, nullptr, &r));
  std::printf("done: %zu epochs, %llu steps, final val PSNR %.3f dB (input %.3f dB), best %.3f dB\n",
              r.epochs_completed, static_cast<unsigned long long>(r.steps), r.final_val_psnr,
              r.baseline_val_psnr, r.best_val_psnr);
  return kExitOk;
}

// ---- despeckle --------------------------------------------------------------

struct DespeckleArgs {
  std::string checkpoint, out, pad = "none";
  std::vector<std::string> inputs;
};

int run_despeckle(const DespeckleArgs& a) {
  Model model(a.checkpoint);
  const auto files = expand_inputs(a.inputs);
  if (files.empty()) usage_error("no input images found");
  fs::create_directories(a.out);
  int worst = kExitOk;
  std::size_t done = 0;
  for (const auto& f : files) {
    try {
      Image in(f);
      Image out;
      check(dsp_model_despeckle(model.h, in.h, a.pad == "reflect", &out.h));
      const fs::path stem = fs::path(a.out) / f.stem();
      check(dsp_image_save_tensor(out.h, (stem.string() + ".f32").c_str()));
      check(dsp_image_save_png(out.h, (stem.string() + ".png").c_str()));
      std::cout << f.string() << " -> " << stem.string() << ".f32 (" << dsp_image_height(out.h)
                << "x" << dsp_image_width(out.h) << ")\n";
      ++done;
    } catch (const Failure& e) {
      std::cerr << "despeckler: failed on " << f.string() << '\n';
      worst = std::max(worst, e.code);
    }
  }
  std::cout << done << " of " << files.size() << " images despeckled\n";
  return worst;
}

// ---- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
  std::string mode, manifest, checkpoint, split = "val", regions, out;
  std::vector<std::string> inputs, references;
  double peak = 1.0;
};

// A single reference directory is matched by file name; otherwise the
// reference list pairs with the input list by position.
std::vector<std::string> resolve_references(const std::vector<fs::path>& inputs,
                                            const std::vector<std::string>& refs) {
  std::vector<std::string> out;
  if (refs.size() == 1 && fs::is_directory(refs[0])) {
    for (const auto& in : inputs) out.push_back((fs::path(refs[0]) / in.filename()).string());
    return out;
  }
  const auto files = expand_inputs(refs);
  if (files.size() != inputs.size()) {
    usage_error("got " + std::to_string(inputs.size()) + " inputs but " +
                std::to_string(files.size()) + " references");
  }
  for (const auto& f : files) out.push_back(f.string());
  return out;
}

int run_evaluate(const EvaluateArgs& a) {
  Report rep;
  if (a.mode == "paired") {
    if (!a.regions.empty()) usage_error("--regions belongs to --mode regions");
    const bool from_manifest = !a.manifest.empty();
    if (from_manifest) {
      if (a.checkpoint.empty()) usage_error("--manifest needs --checkpoint");
      if (!a.inputs.empty() || !a.references.empty()) {
        usage_error("use either --manifest or --inputs/--references, not both");
      }
      check(dsp_evaluate_manifest(a.manifest.c_str(), a.split.c_str(), a.checkpoint.c_str(),
                                  a.peak, &rep.h));
    } else {
      if (a.inputs.empty() || a.references.empty()) {
        usage_error("paired mode needs --manifest and --checkpoint, or --inputs and --references");
      }
      const auto inputs = expand_inputs(a.inputs);
      const auto refs = resolve_references(inputs, a.references);
      std::vector<std::string> in_str;
      for (const auto& p : inputs) in_str.push_back(p.string());
      std::vector<const char*> in_c, ref_c;
      for (const auto& s : in_str) in_c.push_back(s.c_str());
      for (const auto& s : refs) ref_c.push_back(s.c_str());
      check(dsp_evaluate_files(in_c.data(), ref_c.data(), in_c.size(), a.peak, &rep.h));
    }
  } else {
    if (a.regions.empty()) usage_error("--mode regions needs --regions");
    if (a.inputs.empty()) usage_error("--mode regions needs --inputs");
    if (!a.references.empty() || !a.manifest.empty()) {
      usage_error("--references and --manifest belong to --mode paired");
    }
    const auto inputs = expand_inputs(a.inputs);
    std::vector<std::string> in_str;
    for (const auto& p : inputs) in_str.push_back(p.string());
    std::vector<const char*> in_c;
    for (const auto& s : in_str) in_c.push_back(s.c_str());
    check(dsp_evaluate_regions(in_c.data(), in_c.size(), a.regions.c_str(), &rep.h));
  }

  std::cout << dsp_report_table(rep.h);
  double v = 0.0;
  if (a.mode == "paired") {
    double s = 0.0;
    dsp_report_value(rep.h, "mean_psnr", &v);
    dsp_report_value(rep.h, "mean_ssim", &s);
    std::printf("mean PSNR %.4f dB  mean SSIM %.4f", v, s);
    double bp = 0.0;
    if (dsp_report_value(rep.h, "mean_baseline_psnr", &bp) == DSP_OK) {
      std::printf("  (input PSNR %.4f dB)", bp);
    }
    std::printf("  over %zu images\n", dsp_report_rows(rep.h));
  } else {
    double c = 0.0;
    dsp_report_value(rep.h, "mean_enl", &v);
    dsp_report_value(rep.h, "mean_cx", &c);
    std::printf("mean ENL %.4f  mean Cx %.4f  over %zu regions\n", v, c, dsp_report_rows(rep.h));
  }
  if (!a.out.empty()) {
    check(dsp_report_write(rep.h, a.out.c_str()));
    std::cout << "report: " << (fs::path(a.out) / "report.txt").string() << ", "
              << (fs::path(a.out) / "report.kv").string() << '\n';
  }
  return kExitOk;
}

// ---- info -------------------------------------------------------------------

int run_info(const std::string& checkpoint) {
  std::cout << "despeckler " << dsp_version() << '\n';
  if (!checkpoint.empty()) {
    Model m(checkpoint);
    std::cout << checkpoint << ":\n"
              << dsp_model_describe(m.h) << "parameters: " << dsp_model_param_count(m.h)
              << "\ninput multiple: " << dsp_model_downsample_factor(m.h) << '\n';
    return kExitOk;
  }
  for (const char* preset : {"full", "desk"}) {
    dsp_model* m = nullptr;
    check(dsp_model_create(preset, 0, &m));
    std::cout << "\npreset " << preset << ":\n"
              << dsp_model_describe(m) << "parameters: " << dsp_model_param_count(m)
              << "\ninput multiple: " << dsp_model_downsample_factor(m) << '\n';
    dsp_model_free(m);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAR image despeckling with a hierarchical transformer encoder"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dsp_version()));

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Build a clean/speckled pair dataset from a corpus");
  simulate->add_option("--corpus", sim.corpus, "Directory of clean images (PNG/PGM)")->required();
  simulate->add_option("--out", sim.out, "Output dataset directory")->required();
  simulate->add_option("--looks", sim.looks, "Number of looks L (>= 1)")->capture_default_str();
  simulate->add_option("--patch", sim.patch, "Centre-crop size")->capture_default_str();
  simulate->add_option("--split", sim.split, "TRAIN,VAL pair counts")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Speckle seed")->capture_default_str();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model; writes checkpoints and metrics.tsv");
  train->add_option("--config", tr.config, "key=value config file applied over the preset");
  train->add_option("--preset", tr.preset, "Base configuration")
      ->check(CLI::IsMember({"full", "desk"}))
      ->capture_default_str();
  train->add_option("--manifest", tr.manifest, "Dataset manifest.txt");
  train->add_option("--out", tr.out, "Run directory");
  train->add_option("--lr", tr.lr, "Learning rate");
  train->add_option("--epochs", tr.epochs, "Epochs");
  train->add_option("--batch-size", tr.batch_size, "Pairs per optimizer step");
  train->add_option("--lambda1", tr.lambda1, "Weight of the L2 term");
  train->add_option("--lambda2", tr.lambda2, "Weight of the TV term");
  train->add_option("--dropout", tr.dropout, "MLP dropout rate");
  train->add_option("--seed", tr.seed, "Initialisation, shuffling and dropout seed");
  train->add_option("--ckpt-every", tr.ckpt_every, "Epochs between latest.ckpt writes");
  train->add_option("--val-every", tr.val_every, "Epochs between validation passes");
  train->add_option("--set", tr.sets, "Override any config key (key=value), repeatable");
  train->add_option("--resume", tr.resume, "Continue from a latest.ckpt");

  DespeckleArgs ds;
  auto* despeckle = app.add_subcommand("despeckle", "Despeckle images with a trained checkpoint");
  despeckle->add_option("--checkpoint", ds.checkpoint, "Model checkpoint")->required();
  despeckle->add_option("--input", ds.inputs, "Image files or directories")->required();
  despeckle->add_option("--out", ds.out, "Output directory")->required();
  despeckle->add_option("--pad", ds.pad, "Handling of sizes the model cannot take directly")
      ->check(CLI::IsMember({"none", "reflect"}))
      ->capture_default_str();

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Compute PSNR/SSIM or ENL/Cx reports");
  evaluate->add_option("--mode", ev.mode, "paired (needs references) or regions (no reference)")
      ->required()
      ->check(CLI::IsMember({"paired", "regions"}));
  evaluate->add_option("--manifest", ev.manifest, "Paired mode: dataset manifest");
  evaluate->add_option("--checkpoint", ev.checkpoint, "Paired mode with --manifest: model");
  evaluate->add_option("--split", ev.split, "Manifest split")->capture_default_str();
  evaluate->add_option("--inputs", ev.inputs, "Images (files or directories) to score");
  evaluate->add_option("--references", ev.references,
                       "Paired mode: clean references (files in input order, or one directory)");
  evaluate->add_option("--regions", ev.regions, "Regions mode: label,x0,y0,w,h per line");
  evaluate->add_option("--out", ev.out, "Directory for report.txt and report.kv");
  evaluate->add_option("--peak", ev.peak, "PSNR/SSIM peak value (255 for 8-bit data)")
      ->capture_default_str();

  std::string info_ckpt;
  auto* info = app.add_subcommand("info", "Show version and model presets");
  info->add_option("--checkpoint", info_ckpt, "Describe a checkpoint instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*train) return run_train(tr);
    if (*despeckle) return run_despeckle(ds);
    if (*evaluate) return run_evaluate(ev);
    if (*info) return run_info(info_ckpt);
  } catch (const Failure& f) {
    return f.code;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "despeckler: error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
