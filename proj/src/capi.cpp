#include "despeckler/despeckler.h"

#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <new>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "image_io.hpp"
#include "metrics.hpp"
#include "net.hpp"
#include "speckle.hpp"
#include "threads.hpp"
#include "train.hpp"

namespace fs = std::filesystem;
using namespace despeckler;

struct dsp_image {
  Image img;
};

struct dsp_model {
  DespeckleNet<float> net;
  std::string description;
};

struct dsp_train_config {
  TrainConfig cfg;
  std::string text;
};

struct dsp_report {
  EvalReport report;
  std::string table;
  std::string key_values;
};

namespace {

thread_local std::string g_last_error;

dsp_status fail(dsp_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs fn, translating exceptions to status codes. Shape problems surface
// to users as bad input data.
template <typename F>
dsp_status guarded(F&& fn) {
  try {
    fn();
    return DSP_OK;
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::Argument:
        return fail(DSP_ERR_ARGUMENT, e.what());
      case ErrorKind::Shape:
      case ErrorKind::Data:
        return fail(DSP_ERR_DATA, e.what());
      case ErrorKind::Numeric:
        return fail(DSP_ERR_NUMERIC, e.what());
    }
    return fail(DSP_ERR_INTERNAL, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(DSP_ERR_DATA, e.what());
  } catch (const std::bad_alloc&) {
    return fail(DSP_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(DSP_ERR_INTERNAL, e.what());
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw_argument(std::string(what) + " must not be NULL");
}

Region region_of(std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  Region r;
  r.x0 = x0;
  r.y0 = y0;
  r.width = w;
  r.height = h;
  return r;
}

dsp_report* make_report(EvalReport rep) {
  auto* r = new dsp_report{std::move(rep), {}, {}};
  r->table = r->report.table();
  r->key_values = r->report.key_values();
  return r;
}

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

extern "C" {

const char* dsp_version(void) { return "0.1.0"; }

const char* dsp_last_error(void) { return g_last_error.c_str(); }

void dsp_set_threads(size_t n) { set_thread_limit(n); }

dsp_status dsp_sample_speckle(size_t height, size_t width, double looks, uint64_t seed,
                              float* out) {
  return guarded([&] {
    require(out, "out");
    const Image n = sample_speckle(height, width, SpeckleParams{looks, seed});
    std::copy(n.pixels.begin(), n.pixels.end(), out);
  });
}

dsp_status dsp_speckle_pdf(double n, double looks, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = speckle_pdf(n, looks);
  });
}

dsp_status dsp_build_dataset(const char* corpus_dir, const char* out_dir, size_t patch,
                             double looks, uint64_t seed, size_t train_count, size_t val_count,
                             size_t* n_train, size_t* n_val) {
  return guarded([&] {
    require(corpus_dir, "corpus_dir");
    require(out_dir, "out_dir");
    DatasetOptions opts;
    opts.patch_size = patch;
    opts.looks = looks;
    opts.seed = seed;
    opts.train_count = train_count;
    opts.val_count = val_count;
    const Manifest m = build_dataset(corpus_dir, out_dir, opts);
    if (n_train) *n_train = m.count("train");
    if (n_val) *n_val = m.count("val");
  });
}

dsp_status dsp_image_load(const char* path, dsp_image** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new dsp_image{read_image(path)};
  });
}

dsp_status dsp_image_create(size_t height, size_t width, const float* pixels, dsp_image** out) {
  return guarded([&] {
    require(out, "out");
    if (height == 0 || width == 0) throw_argument("image dimensions must be positive");
    Image img(height, width);
    if (pixels != nullptr) std::copy(pixels, pixels + height * width, img.pixels.begin());
    *out = new dsp_image{std::move(img)};
  });
}

size_t dsp_image_height(const dsp_image* img) { return img ? img->img.height : 0; }
size_t dsp_image_width(const dsp_image* img) { return img ? img->img.width : 0; }
const float* dsp_image_data(const dsp_image* img) { return img ? img->img.pixels.data() : nullptr; }

dsp_status dsp_image_save_tensor(const dsp_image* img, const char* path) {
  return guarded([&] {
    require(img, "img");
    require(path, "path");
    write_tensor_file(path, img->img);
  });
}

dsp_status dsp_image_save_png(const dsp_image* img, const char* path) {
  return guarded([&] {
    require(img, "img");
    require(path, "path");
    write_png8(path, img->img);
  });
}

void dsp_image_free(dsp_image* img) { delete img; }

dsp_status dsp_model_create(const char* preset, uint64_t seed, dsp_model** out) {
  return guarded([&] {
    require(preset, "preset");
    require(out, "out");
    *out = new dsp_model{DespeckleNet<float>(ModelConfig::preset(preset), seed), {}};
  });
}

dsp_status dsp_model_load(const char* checkpoint, dsp_model** out) {
  return guarded([&] {
    require(checkpoint, "checkpoint");
    require(out, "out");
    *out = new dsp_model{load_checkpoint<float>(checkpoint), {}};
  });
}

dsp_status dsp_model_save(const dsp_model* model, const char* checkpoint) {
  return guarded([&] {
    require(model, "model");
    require(checkpoint, "checkpoint");
    save_checkpoint(model->net, checkpoint);
  });
}

size_t dsp_model_param_count(const dsp_model* model) {
  return model ? model->net.parameters().scalar_count() : 0;
}

size_t dsp_model_downsample_factor(const dsp_model* model) {
  return model ? model->net.config().downsample_factor() : 0;
}

const char* dsp_model_describe(dsp_model* model) {
  if (model == nullptr) return "";
  model->description = model->net.config().describe();
  return model->description.c_str();
}

dsp_status dsp_model_despeckle(const dsp_model* model, const dsp_image* input, int pad_reflect,
                               dsp_image** out) {
  return guarded([&] {
    require(model, "model");
    require(input, "input");
    require(out, "out");
    const Image& src = input->img;
    const std::size_t f = model->net.config().downsample_factor();
    const std::size_t h = round_up(src.height, f), w = round_up(src.width, f);
    if (!pad_reflect && (h != src.height || w != src.width)) {
      throw_shape("input is " + std::to_string(src.height) + "x" + std::to_string(src.width) +
                  " but the model needs multiples of " + std::to_string(f) +
                  " (use reflect padding to process it anyway)");
    }
    const Image padded = (h == src.height && w == src.width) ? src : reflect_pad(src, h, w);
    Image result = tensor_to_image(model->net.predict(image_to_tensor<float>(padded)));
    if (h != src.height || w != src.width) result = crop(result, 0, 0, src.height, src.width);
    *out = new dsp_image{std::move(result)};
  });
}

void dsp_model_free(dsp_model* model) { delete model; }

dsp_status dsp_train_config_create(const char* preset, dsp_train_config** out) {
  return guarded([&] {
    require(preset, "preset");
    require(out, "out");
    *out = new dsp_train_config{TrainConfig::preset(preset), {}};
  });
}

dsp_status dsp_train_config_load_file(dsp_train_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "cfg");
    require(path, "path");
    std::ifstream in(path);
    if (!in) throw_data(std::string("cannot read config file ") + path);
    const std::string text((std::istreambuf_iterator<char>(in)), {});
    const auto errors = cfg->cfg.apply_text(text);
    if (!errors.empty()) {
      std::string msg = std::string("errors in config file ") + path + ":";
      for (const auto& e : errors) msg += "\n  " + e;
      throw_argument(msg);
    }
  });
}

dsp_status dsp_train_config_set(dsp_train_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg, "cfg");
    require(key, "key");
    require(value, "value");
    cfg->cfg.set(key, value);
  });
}

dsp_status dsp_train_config_validate(const dsp_train_config* cfg) {
  return guarded([&] {
    require(cfg, "cfg");
    const auto errors = cfg->cfg.validate();
    if (!errors.empty()) {
      std::string msg = "invalid training configuration:";
      for (const auto& e : errors) msg += "\n  " + e;
      throw_argument(msg);
    }
  });
}

const char* dsp_train_config_text(dsp_train_config* cfg) {
  if (cfg == nullptr) return "";
  cfg->text = cfg->cfg.to_text();
  return cfg->text.c_str();
}

void dsp_train_config_free(dsp_train_config* cfg) { delete cfg; }

dsp_status dsp_fit(const dsp_train_config* cfg, const char* resume, dsp_progress_fn progress,
                   void* user, dsp_fit_result* result) {
  return guarded([&] {
    require(cfg, "cfg");
    if (auto errors = cfg->cfg.validate(); !errors.empty()) {
      std::string msg = "invalid training configuration:";
      for (const auto& e : errors) msg += "\n  " + e;
      throw_argument(msg);
    }
    DespeckleNet<float> model(cfg->cfg.model_config(), cfg->cfg.seed);
    std::optional<fs::path> from;
    if (resume != nullptr) from = fs::path(resume);
    std::function<void(const EpochRecord&)> cb;
    if (progress != nullptr) {
      cb = [&](const EpochRecord& r) {
        dsp_epoch_info info{r.epoch, r.train_loss, r.val_psnr.has_value() ? 1 : 0,
                            r.val_psnr.value_or(NAN), r.val_ssim.value_or(NAN), r.wall_time_s};
        progress(&info, user);
      };
    }
    const FitReport rep = fit(model, cfg->cfg, from, cb);
    if (result != nullptr) {
      *result = dsp_fit_result{rep.epochs_completed,  rep.steps,          rep.final_train_loss,
                               rep.final_val_psnr,    rep.final_val_ssim, rep.best_val_psnr,
                               rep.baseline_val_psnr, rep.baseline_val_ssim};
    }
  });
}

dsp_status dsp_psnr(const dsp_image* estimate, const dsp_image* reference, double peak,
                    double* out) {
  return guarded([&] {
    require(estimate, "estimate");
    require(reference, "reference");
    require(out, "out");
    *out = psnr(estimate->img, reference->img, peak);
  });
}

dsp_status dsp_ssim(const dsp_image* a, const dsp_image* b, double peak, double* out) {
  return guarded([&] {
    require(a, "a");
    require(b, "b");
    require(out, "out");
    *out = ssim(a->img, b->img, peak);
  });
}

dsp_status dsp_enl(const dsp_image* img, size_t x0, size_t y0, size_t width, size_t height,
                   double* out) {
  return guarded([&] {
    require(img, "img");
    require(out, "out");
    *out = enl(img->img, region_of(x0, y0, width, height));
  });
}

dsp_status dsp_cx(const dsp_image* img, size_t x0, size_t y0, size_t width, size_t height,
                  double* out) {
  return guarded([&] {
    require(img, "img");
    require(out, "out");
    *out = cx(img->img, region_of(x0, y0, width, height));
  });
}

dsp_status dsp_evaluate_manifest(const char* manifest, const char* split, const char* checkpoint,
                                 double peak, dsp_report** out) {
  return guarded([&] {
    require(manifest, "manifest");
    require(split, "split");
    require(checkpoint, "checkpoint");
    require(out, "out");
    const Manifest m = read_manifest(manifest);
    const auto entries = m.split(split);
    if (entries.empty()) throw_data(std::string("manifest has no '") + split + "' pairs");
    const DespeckleNet<float> net = load_checkpoint<float>(checkpoint);
    std::vector<PairedInput> inputs;
    for (const auto& e : entries) {
      ImagePair p = load_pair(m, e);
      Image est = tensor_to_image(net.predict(image_to_tensor<float>(p.speckled)));
      inputs.push_back(PairedInput{e.id, std::move(est), std::move(p.clean), std::move(p.speckled)});
    }
    *out = make_report(evaluate_paired(inputs, peak));
  });
}

dsp_status dsp_evaluate_files(const char* const* estimates, const char* const* references,
                              size_t count, double peak, dsp_report** out) {
  return guarded([&] {
    require(estimates, "estimates");
    require(references, "references");
    require(out, "out");
    if (count == 0) throw_argument("no images to evaluate");
    std::vector<PairedInput> inputs;
    for (std::size_t i = 0; i < count; ++i) {
      require(estimates[i], "estimate path");
      if (references[i] == nullptr || !fs::exists(references[i])) {
        throw_data(std::string("missing reference for ") + estimates[i] +
                   (references[i] ? std::string(": ") + references[i] + " not found" : ""));
      }
      inputs.push_back(PairedInput{fs::path(estimates[i]).filename().string(),
                                   read_image(estimates[i]), read_image(references[i]),
                                   std::nullopt});
    }
    *out = make_report(evaluate_paired(inputs, peak));
  });
}

dsp_status dsp_evaluate_regions(const char* const* images, size_t count, const char* region_file,
                                dsp_report** out) {
  return guarded([&] {
    require(images, "images");
    require(region_file, "region_file");
    require(out, "out");
    if (count == 0) throw_argument("no images to evaluate");
    std::vector<std::pair<std::string, Image>> loaded;
    for (std::size_t i = 0; i < count; ++i) {
      require(images[i], "image path");
      loaded.emplace_back(fs::path(images[i]).filename().string(), read_image(images[i]));
    }
    *out = make_report(evaluate_regions(loaded, read_regions(region_file)));
  });
}

size_t dsp_report_rows(const dsp_report* report) {
  if (report == nullptr) return 0;
  return report->report.paired.size() + report->report.regions.size();
}

dsp_status dsp_report_value(const dsp_report* report, const char* key, double* out) {
  return guarded([&] {
    require(report, "report");
    require(key, "key");
    require(out, "out");
    const EvalReport& r = report->report;
    const std::string k = key;
    std::optional<double> v;
    if (k == "mean_psnr" && !r.paired.empty()) v = r.mean_psnr();
    else if (k == "mean_ssim" && !r.paired.empty()) v = r.mean_ssim();
    else if (k == "mean_baseline_psnr") v = r.mean_baseline_psnr();
    else if (k == "mean_baseline_ssim") v = r.mean_baseline_ssim();
    else if (k == "mean_enl" && !r.regions.empty()) v = r.mean_enl();
    else if (k == "mean_cx" && !r.regions.empty()) v = r.mean_cx();
    if (!v) throw_argument("report has no value '" + k + "'");
    *out = *v;
  });
}

const char* dsp_report_table(const dsp_report* report) {
  return report ? report->table.c_str() : "";
}

const char* dsp_report_key_values(const dsp_report* report) {
  return report ? report->key_values.c_str() : "";
}

dsp_status dsp_report_write(const dsp_report* report, const char* dir) {
  return guarded([&] {
    require(report, "report");
    require(dir, "dir");
    fs::create_directories(dir);
    std::ofstream t(fs::path(dir) / "report.txt");
    std::ofstream kv(fs::path(dir) / "report.kv");
    if (!t || !kv) throw_data(std::string("cannot write report files into ") + dir);
    t << report->table;
    kv << report->key_values;
  });
}

void dsp_report_free(dsp_report* report) { delete report; }

}  // extern "C"
