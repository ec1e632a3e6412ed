#include "train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "image_io.hpp"
#include "metrics.hpp"
#include "ops.hpp"
#include "rng.hpp"

namespace despeckler {

namespace fs = std::filesystem;

// --- TrainConfig -----------------------------------------------------------

TrainConfig TrainConfig::full() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 30;
  c.batch_size = 2;
  c.model = "desk";
  return c;
}

TrainConfig TrainConfig::preset(const std::string& name) {
  if (name == "full") return full();
  if (name == "desk") return desk();
  throw_argument("unknown training preset '" + name + "' (expected 'full' or 'desk')");
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = {
      "learning_rate", "epochs",   "batch_size", "lambda1", "lambda2",        "seed",
      "checkpoint_every", "validate_every", "beta1", "beta2", "adam_eps",     "manifest",
      "out_dir",       "model",    "dropout",    "normalize_loss", "log_wall_time"};
  return k;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw_argument(key + ": expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw_argument(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw_argument(key + ": expected true/false, got '" + v + "'");
}

std::string num(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace

void TrainConfig::set(const std::string& key_in, const std::string& value_in) {
  const std::string key = trim(key_in);
  const std::string value = trim(value_in);
  if (key == "learning_rate" || key == "lr") {
    learning_rate = parse_double(key, value);
  } else if (key == "epochs") {
    epochs = parse_uint(key, value);
  } else if (key == "batch_size") {
    batch_size = parse_uint(key, value);
  } else if (key == "lambda1") {
    weights.l2 = parse_double(key, value);
  } else if (key == "lambda2") {
    weights.tv = parse_double(key, value);
  } else if (key == "seed") {
    seed = parse_uint(key, value);
  } else if (key == "checkpoint_every") {
    checkpoint_every = parse_uint(key, value);
  } else if (key == "validate_every") {
    validate_every = parse_uint(key, value);
  } else if (key == "beta1") {
    beta1 = parse_double(key, value);
  } else if (key == "beta2") {
    beta2 = parse_double(key, value);
  } else if (key == "adam_eps") {
    adam_eps = parse_double(key, value);
  } else if (key == "manifest") {
    manifest = value;
  } else if (key == "out_dir") {
    out_dir = value;
  } else if (key == "model") {
    model = value;
  } else if (key == "dropout") {
    dropout = parse_double(key, value);
  } else if (key == "normalize_loss") {
    normalize_loss = parse_bool(key, value);
  } else if (key == "log_wall_time") {
    log_wall_time = parse_bool(key, value);
  } else {
    throw_argument("unknown training config key '" + key + "'");
  }
}

std::vector<std::string> TrainConfig::apply_text(const std::string& text) {
  std::vector<std::string> errors;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      errors.push_back("line " + std::to_string(lineno) + ": expected key=value");
      continue;
    }
    try {
      set(t.substr(0, eq), t.substr(eq + 1));
    } catch (const Error& e) {
      errors.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return errors;
}

std::vector<std::string> TrainConfig::validate() const {
  std::vector<std::string> errors;
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) errors.push_back("learning_rate must be > 0");
  if (epochs < 1) errors.push_back("epochs must be >= 1");
  if (batch_size < 1) errors.push_back("batch_size must be >= 1");
  if (!(weights.l2 >= 0.0)) errors.push_back("lambda1 must be >= 0");
  if (!(weights.tv >= 0.0)) errors.push_back("lambda2 must be >= 0");
  if (checkpoint_every < 1) errors.push_back("checkpoint_every must be >= 1");
  if (validate_every < 1) errors.push_back("validate_every must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) errors.push_back("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) errors.push_back("beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) errors.push_back("adam_eps must be > 0");
  if (manifest.empty()) errors.push_back("manifest is required");
  if (out_dir.empty()) errors.push_back("out_dir is required");
  if (model != "full" && model != "desk") errors.push_back("model must be 'full' or 'desk'");
  if (!(dropout >= 0.0 && dropout < 1.0)) errors.push_back("dropout must be in [0, 1)");
  return errors;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "learning_rate=" << num(learning_rate) << '\n'
     << "epochs=" << epochs << '\n'
     << "batch_size=" << batch_size << '\n'
     << "lambda1=" << num(weights.l2) << '\n'
     << "lambda2=" << num(weights.tv) << '\n'
     << "seed=" << seed << '\n'
     << "checkpoint_every=" << checkpoint_every << '\n'
     << "validate_every=" << validate_every << '\n'
     << "beta1=" << num(beta1) << '\n'
     << "beta2=" << num(beta2) << '\n'
     << "adam_eps=" << num(adam_eps) << '\n'
     << "manifest=" << manifest << '\n'
     << "out_dir=" << out_dir << '\n'
     << "model=" << model << '\n'
     << "dropout=" << num(dropout) << '\n'
     << "normalize_loss=" << (normalize_loss ? "true" : "false") << '\n'
     << "log_wall_time=" << (log_wall_time ? "true" : "false") << '\n';
  return os.str();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m = ModelConfig::preset(model);
  for (auto& s : m.stages) s.dropout = dropout;
  return m;
}

// --- optimizer -------------------------------------------------------------

template <typename T>
void adam_step(std::vector<Parameter<T>>& params, TrainState<T>& state, const AdamOptions& o) {
  if (state.first_moment.size() != params.size()) {
    state.first_moment.assign(params.size(), {});
    state.second_moment.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first_moment[i].assign(params[i].tensor.numel(), T(0));
      state.second_moment[i].assign(params[i].tensor.numel(), T(0));
    }
  }
  const std::uint64_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  const T step_size = static_cast<T>(o.learning_rate / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T eps = static_cast<T>(o.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params[i].tensor;
    if (!p.has_grad()) continue;
    auto g = p.grad();
    for (T v : g) {
      if (!std::isfinite(v)) throw_numeric("non-finite gradient in parameter " + params[i].name);
    }
    auto w = p.mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != w.size() || v.size() != w.size()) {
      throw_argument("optimizer moments do not match parameter " + params[i].name);
    }
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      w[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_c2 + eps);
    }
  }
  state.step = t;
}

// --- training step ---------------------------------------------------------

template <typename T>
double train_step(DespeckleNet<T>& model, std::span<const ImagePair* const> batch,
                  const TrainConfig& cfg, TrainState<T>& state) {
  if (batch.empty()) throw_argument("train_step: empty batch");
  const std::size_t h = batch.front()->clean.height, w = batch.front()->clean.width;
  for (const ImagePair* p : batch) {
    if (p->clean.height != h || p->clean.width != w || p->speckled.height != h ||
        p->speckled.width != w) {
      throw_shape("train_step: batch images must share one size");
    }
  }
  model.set_training(true);
  const T inv_batch = T(1) / static_cast<T>(batch.size());
  double total = 0.0;
  std::vector<double> per_image;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    model.set_dropout_stream(cfg.seed, state.step * 1024 + b);
    Tensor<T> input = image_to_tensor<T>(batch[b]->speckled);
    Tensor<T> target = image_to_tensor<T>(batch[b]->clean);
    Tensor<T> loss = total_loss(model.forward(input), target, cfg.weights, cfg.normalize_loss);
    const double value = static_cast<double>(loss.item());
    per_image.push_back(value);
    if (!std::isfinite(value)) {
      model.zero_grad();
      std::ostringstream os;
      os << "non-finite loss at step " << state.step << " (epoch " << state.epoch + 1
         << "); per-image losses:";
      for (double l : per_image) os << ' ' << l;
      double max_abs = 0.0;
      std::string where;
      for (const auto& p : model.parameters().all()) {
        for (T v : p.tensor.data()) {
          if (!std::isfinite(v) || std::abs(static_cast<double>(v)) > max_abs) {
            max_abs = std::isfinite(v) ? std::abs(static_cast<double>(v)) : INFINITY;
            where = p.name;
          }
        }
      }
      os << "; largest |parameter| " << max_abs << " in " << where;
      throw_numeric(os.str());
    }
    scale(loss, inv_batch).backward();
    total += value;
  }
  adam_step(model.parameters().all(), state,
            AdamOptions{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps});
  model.zero_grad();
  return total / static_cast<double>(batch.size());
}

// --- fit -------------------------------------------------------------------

template <typename T>
ValidationResult validate_model(const DespeckleNet<T>& model, const std::vector<ImagePair>& pairs) {
  ValidationResult r;
  if (pairs.empty()) return r;
  for (const auto& p : pairs) {
    const Image out = tensor_to_image(model.predict(image_to_tensor<T>(p.speckled)));
    r.psnr += psnr(out, p.clean);
    r.ssim += ssim(out, p.clean);
  }
  r.psnr /= static_cast<double>(pairs.size());
  r.ssim /= static_cast<double>(pairs.size());
  return r;
}

namespace {

const char* kLogHeader = "epoch\ttrain_loss\tval_psnr\tval_ssim\twall_time_s";

std::vector<std::string> resume_mismatches(const TrainConfig& now, const TrainConfig& then) {
  std::vector<std::string> diffs;
  auto check = [&](bool same, const char* key) {
    if (!same) diffs.push_back(key);
  };
  check(now.learning_rate == then.learning_rate, "learning_rate");
  check(now.batch_size == then.batch_size, "batch_size");
  check(now.weights.l2 == then.weights.l2, "lambda1");
  check(now.weights.tv == then.weights.tv, "lambda2");
  check(now.seed == then.seed, "seed");
  check(now.beta1 == then.beta1, "beta1");
  check(now.beta2 == then.beta2, "beta2");
  check(now.adam_eps == then.adam_eps, "adam_eps");
  check(now.model == then.model, "model");
  check(now.dropout == then.dropout, "dropout");
  check(now.normalize_loss == then.normalize_loss, "normalize_loss");
  check(now.validate_every == then.validate_every, "validate_every");
  return diffs;
}

std::string format_value(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

std::string log_line(const EpochRecord& r, bool wall_time) {
  std::ostringstream os;
  os << r.epoch << '\t' << format_value(r.train_loss) << '\t'
     << (r.val_psnr ? format_value(*r.val_psnr) : "-") << '\t'
     << (r.val_ssim ? format_value(*r.val_ssim) : "-") << '\t';
  if (wall_time) {
    os << std::fixed << std::setprecision(3) << r.wall_time_s;
  } else {
    os << '-';
  }
  return os.str();
}

// Stored in latest.ckpt. The output directory is left out so that identical
// runs written to different places produce identical checkpoints.
std::string checkpoint_config_text(const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.out_dir.clear();
  return c.to_text();
}

std::vector<ImagePair> load_split(const Manifest& m, const std::string& split) {
  std::vector<ImagePair> pairs;
  for (const auto& e : m.split(split)) pairs.push_back(load_pair(m, e));
  return pairs;
}

}  // namespace

template <typename T>
FitReport fit(DespeckleNet<T>& model, const TrainConfig& cfg,
              const std::optional<fs::path>& resume,
              const std::function<void(const EpochRecord&)>& on_epoch) {
  if (auto errors = cfg.validate(); !errors.empty()) {
    std::string msg = "invalid training configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw_argument(msg);
  }
  if (!(model.config() == cfg.model_config())) {
    throw_argument("model architecture does not match the '" + cfg.model + "' preset of the config");
  }
  const Manifest manifest = read_manifest(cfg.manifest);
  const std::vector<ImagePair> train = load_split(manifest, "train");
  const std::vector<ImagePair> val = load_split(manifest, "val");
  if (train.empty()) throw_data("manifest " + cfg.manifest + " has no train pairs");
  if (val.empty()) throw_data("manifest " + cfg.manifest + " has no val pairs");

  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  {
    std::ofstream rc(out / "resolved_config.txt");
    rc << "# resolved training configuration\n" << cfg.to_text();
  }

  TrainState<T> state;
  state.config_text = checkpoint_config_text(cfg);
  std::vector<std::string> kept_log;
  if (resume) {
    load_checkpoint_into(model, *resume, &state);
    TrainConfig then;
    then.apply_text(state.config_text);
    if (auto diffs = resume_mismatches(cfg, then); !diffs.empty()) {
      std::string msg = "cannot resume from " + resume->string() + ": config differs in";
      for (const auto& d : diffs) msg += ' ' + d;
      throw_argument(msg);
    }
    state.config_text = checkpoint_config_text(cfg);
    std::ifstream old(out / "metrics.tsv");
    std::string line;
    while (std::getline(old, line)) {
      if (line.empty() || line.rfind("epoch", 0) == 0) continue;
      if (std::stoull(line.substr(0, line.find('\t'))) <= state.epoch) kept_log.push_back(line);
    }
  }

  FitReport report;
  report.log_path = out / "metrics.tsv";
  report.latest_checkpoint = out / "latest.ckpt";
  report.best_checkpoint = out / "best.ckpt";
  {
    double bp = 0.0, bs = 0.0;
    for (const auto& p : val) {
      bp += psnr(p.speckled, p.clean);
      bs += ssim(p.speckled, p.clean);
    }
    report.baseline_val_psnr = bp / static_cast<double>(val.size());
    report.baseline_val_ssim = bs / static_cast<double>(val.size());
  }

  std::ofstream log(report.log_path, std::ios::trunc);
  if (!log) throw_data("cannot write " + report.log_path.string());
  log << kLogHeader << '\n';
  for (const auto& l : kept_log) log << l << '\n';
  log.flush();

  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(train.size());
  std::vector<const ImagePair*> batch;
  for (std::size_t epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Philox shuffle_rng(cfg.seed, 0x5348554646000000ULL + epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) {
        batch.push_back(&train[order[k]]);
      }
      loss_sum += train_step(model, std::span<const ImagePair* const>(batch), cfg, state);
      ++batches;
    }
    model.set_training(false);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    if (epoch % cfg.validate_every == 0 || epoch == cfg.epochs) {
      const ValidationResult v = validate_model(model, val);
      rec.val_psnr = v.psnr;
      rec.val_ssim = v.ssim;
      report.final_val_psnr = v.psnr;
      report.final_val_ssim = v.ssim;
      if (v.psnr > state.best_val_psnr) {
        state.best_val_psnr = v.psnr;
        save_checkpoint(model, report.best_checkpoint);
      }
    }
    state.epoch = epoch;
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << log_line(rec, cfg.log_wall_time) << '\n';
    log.flush();
    if (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs) {
      save_checkpoint(model, report.latest_checkpoint, &state);
    }
    report.final_train_loss = rec.train_loss;
    if (on_epoch) on_epoch(rec);
  }
  report.epochs_completed = state.epoch;
  report.steps = state.step;
  report.best_val_psnr = state.best_val_psnr;
  return report;
}

template void adam_step<float>(std::vector<Parameter<float>>&, TrainState<float>&, const AdamOptions&);
template void adam_step<double>(std::vector<Parameter<double>>&, TrainState<double>&,
                                const AdamOptions&);
template double train_step<float>(DespeckleNet<float>&, std::span<const ImagePair* const>,
                                  const TrainConfig&, TrainState<float>&);
template double train_step<double>(DespeckleNet<double>&, std::span<const ImagePair* const>,
                                   const TrainConfig&, TrainState<double>&);
template ValidationResult validate_model<float>(const DespeckleNet<float>&, const std::vector<ImagePair>&);
template ValidationResult validate_model<double>(const DespeckleNet<double>&,
                                                 const std::vector<ImagePair>&);
template FitReport fit<float>(DespeckleNet<float>&, const TrainConfig&, const std::optional<fs::path>&,
                              const std::function<void(const EpochRecord&)>&);
template FitReport fit<double>(DespeckleNet<double>&, const TrainConfig&,
                               const std::optional<fs::path>&,
                               const std::function<void(const EpochRecord&)>&);

}  // namespace despeckler
