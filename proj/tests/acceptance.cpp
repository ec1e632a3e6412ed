// Acceptance suite: one PASS/FAIL line per criterion, each within its
// runtime budget. Exit status is non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "grad_check.hpp"
#include "loss.hpp"
#include "metrics.hpp"
#include "net.hpp"
#include "ops.hpp"
#include "oracles.hpp"
#include "speckle.hpp"
#include "support.hpp"
#include "train.hpp"

using namespace despeckler;
using testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

oracle::Vec vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

template <typename T>
void randomize(ParameterStore<T>& store, std::uint64_t seed, double scale = 0.3) {
  std::uint64_t s = seed;
  for (auto& p : store.all()) {
    auto src = random_tensor<double>(p.tensor.shape(), s++, -scale, scale);
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src.data()[i]);
  }
}

GradCheckReport check_store(ParameterStore<double>& store, const std::function<Tensor<double>()>& f,
                            std::size_t max_coords = 0) {
  std::vector<Tensor<double>> ts;
  std::vector<std::string> names;
  for (auto& p : store.all()) {
    ts.push_back(p.tensor);
    names.push_back(p.name);
  }
  return grad_check_params(f, ts, names, 1e-5, max_coords, 11);
}

// Random linear readout; small weights keep central-difference roundoff well
// under the 1e-8 floor for gradients that are exactly zero.
Tensor<double> wsum(const Tensor<double>& y, std::uint64_t seed) {
  return sum(mul(y, random_tensor<double>(y.shape(), seed, -1e-3, 1e-3)));
}

// ---------------------------------------------------------------------------

Outcome speckle_statistics() {
  const std::size_t n = 1000000;
  auto moments = [&](double L, std::uint64_t seed) {
    const Image s = sample_speckle(1000, 1000, SpeckleParams{L, seed});
    double mean = 0, var = 0;
    for (float v : s.pixels) mean += v;
    mean /= n;
    for (float v : s.pixels) var += (v - mean) * (v - mean);
    return std::pair{mean, var / n};
  };
  const auto [m1, v1] = moments(1.0, 1);
  const auto [m4, v4] = moments(4.0, 2);
  Image s = sample_speckle(1000, 1000, SpeckleParams{1.0, 3});
  std::vector<double> v(s.pixels.begin(), s.pixels.end());
  std::sort(v.begin(), v.end());
  double ks = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = 1.0 - std::exp(-v[i]);
    ks = std::max({ks, std::abs(f - double(i) / n), std::abs(f - double(i + 1) / n)});
  }
  Outcome o;
  o.pass = std::abs(m1 - 1) <= 0.01 && std::abs(v1 - 1) <= 0.02 && std::abs(v4 - 0.25) <= 0.02 * 0.25 &&
           ks < 0.01;
  o.detail = "L=1 mean " + fmt("%.4f", m1) + " var " + fmt("%.4f", v1) + "; L=4 var " +
             fmt("%.4f", v4) + "; KS " + fmt("%.5f", ks);
  return o;
}

Outcome gradient_fidelity() {
  double worst = 0;
  std::string where;
  std::size_t coords = 0;
  auto note = [&](const char* what, const GradCheckReport& r) {
    coords += r.coordinates_checked;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = std::string(what) + " " + r.worst;
    }
  };
  {
    auto x = random_tensor<double>({2, 7, 7}, 1);
    auto w = random_tensor<double>({4, 2, 3, 3}, 2), b = random_tensor<double>({4}, 3);
    note("conv2d", grad_check([&](const auto& t) { return wsum(conv2d(t, w, b, {2, 1, 1}), 4); }, x));
    note("conv2d/w", grad_check([&](const auto& t) { return wsum(conv2d(x, t, b, {1, 1, 2}), 5); },
                                random_tensor<double>({4, 1, 3, 3}, 6)));
    auto tok = random_tensor<double>({5, 6}, 7);
    auto lw = random_tensor<double>({3, 6}, 8), lb = random_tensor<double>({3}, 9);
    note("linear", grad_check([&](const auto& t) { return wsum(linear(t, lw, lb), 10); }, tok));
    auto g = random_tensor<double>({6}, 11), off = random_tensor<double>({6}, 12);
    note("layer_norm", grad_check([&](const auto& t) { return wsum(layer_norm(t, g, off), 13); }, tok));
    note("gelu", grad_check([&](const auto& t) { return wsum(gelu(t), 14); }, tok));
    note("softmax", grad_check([&](const auto& t) { return wsum(softmax(t, 1), 15); }, tok));
    auto tgt = random_tensor<double>({1, 6, 6}, 16);
    note("l2_loss", grad_check([&](const auto& t) { return scale(l2_loss(t, tgt), 1e-3); }, random_tensor<double>({1, 6, 6}, 17)));
    note("tv_loss", grad_check([&](const auto& t) { return scale(tv_loss(t), 1e-3); }, random_tensor<double>({1, 6, 6}, 18)));
  }
  {
    ParameterStore<double> s(1);
    OverlapPatchEmbed<double> ope(s, "ope", 1, StageConfig::make(7, 4, 1), 1);
    randomize(s, 2, 1.0);
    auto x = random_tensor<double>({1, 8, 8}, 3);
    note("patch_embed", check_store(s, [&] { return wsum(ope(x).tokens, 4); }));
  }
  for (auto [heads, r] : {std::pair{1, 1}, {2, 2}}) {
    ParameterStore<double> s(5);
    EfficientAttention<double> attn(s, "attn", 4, heads, r);
    randomize(s, 6, 1.0);
    auto x = random_tensor<double>({16, 4}, 7);
    note("attention", check_store(s, [&] { return wsum(attn(x, 4, 4), 8); }));
  }
  {
    ParameterStore<double> s(9);
    TransformerBlock<double> b(s, "block", StageConfig::make(3, 4, 2));
    randomize(s, 10, 1.0);
    auto x = random_tensor<double>({16, 4}, 11);
    note("transformer_block", check_store(s, [&] { return wsum(b(x, 4, 4), 12); }));
  }
  {
    ParameterStore<double> s(13);
    ResidualBlock<double> rb(s, "rb", 2);
    randomize(s, 14, 1.0);
    auto x = random_tensor<double>({2, 5, 5}, 15);
    note("residual_block", check_store(s, [&] { return wsum(rb(x), 16); }));
  }
  {
    ModelConfig cfg;
    cfg.stages = {StageConfig::make(3, 4, 1), StageConfig::make(3, 8, 2)};
    cfg.decoder_dim = 4;
    ParameterStore<double> s(17);
    ConvProjectionDecoder<double> dec(s, cfg);
    randomize(s, 18, 1.0);
    FeaturePyramid<double> pyr{{random_tensor<double>({4, 4, 4}, 19), random_tensor<double>({8, 2, 2}, 20)}};
    note("decoder", check_store(s, [&] { return wsum(dec(pyr), 21); }));
  }
  {
    // Full desk model on a 32x32 input at its default initialisation: a
    // seeded subset of coordinates in every parameter tensor, through the
    // training objective (scaled like the readouts above).
    DespeckleNet<double> net(ModelConfig::desk(), 5);
    const Image clean = testing::synthetic_scene(32, 32, 9);
    const ImagePair pair = apply_speckle(clean, SpeckleParams{1.0, 4});
    const auto y = image_to_tensor<double>(pair.speckled), x = image_to_tensor<double>(clean);
    note("desk_model", check_store(net.parameters(), [&] {
      return scale(total_loss(net.forward(y), x, LossWeights{}, true), 1e-3);
    }, 6));
  }
  Outcome o;
  o.pass = worst < 1e-4;
  o.detail = std::to_string(coords) + " coordinates, max rel error " + fmt("%.2e", worst) + " at " + where;
  return o;
}

Outcome oracle_equivalence() {
  const int seeds = 50;
  double conv_err = 0, attn_err = 0, tv_err = 0, rb_err = 0;
  std::mt19937_64 rng(1);
  for (int seed = 0; seed < seeds; ++seed) {
    const std::size_t groups = 1 + rng() % 2, cin = groups * (1 + rng() % 3), cout = groups * (1 + rng() % 3);
    const std::size_t k = 1 + 2 * (rng() % 4), stride = 1 + rng() % 2, pad = rng() % (k / 2 + 1);
    const std::size_t h = k + rng() % 6, w = k + rng() % 6;
    auto in = random_tensor<double>({cin, h, w}, seed);
    auto wt = random_tensor<double>({cout, cin / groups, k, k}, seed + 100);
    auto b = random_tensor<double>({cout}, seed + 200);
    const auto bv = vec(b);
    const auto ref = oracle::conv2d(vec(in), vec(wt), &bv, {cin, h, w, cout, k, stride, pad, groups});
    const auto y = conv2d(in, wt, b, Conv2dOptions{stride, pad, groups});
    for (std::size_t i = 0; i < ref.size(); ++i) conv_err = std::max(conv_err, std::abs(y.data()[i] - ref[i]));

    const std::size_t heads = 1 + rng() % 2, e = 4 * heads, gh = 2 + rng() % 3, gw = 2 + rng() % 3;
    ParameterStore<double> s(seed);
    EfficientAttention<double> attn(s, "a", e, heads, 1);
    randomize(s, seed + 300);
    auto tok = random_tensor<double>({gh * gw, e}, seed + 400);
    const oracle::AttentionWeights aw{vec(attn.q_proj.weight), vec(attn.q_proj.bias), vec(attn.k_proj.weight),
                                      vec(attn.k_proj.bias),   vec(attn.v_proj.weight), vec(attn.v_proj.bias),
                                      vec(attn.out_proj.weight), vec(attn.out_proj.bias), {}, {}, {}, {}};
    const auto aref = oracle::attention(vec(tok), gh, gw, e, heads, 1, aw);
    const auto ay = attn(tok, gh, gw);
    for (std::size_t i = 0; i < aref.size(); ++i) attn_err = std::max(attn_err, std::abs(ay.data()[i] - aref[i]));

    const std::size_t th = 2 + rng() % 8, tw = 2 + rng() % 8;
    auto img = random_tensor<double>({1, th, tw}, seed + 500);
    tv_err = std::max(tv_err, std::abs(tv_loss(img).item() - oracle::tv(vec(img), th, tw)));

    const std::size_t c = 1 + rng() % 3, rh = 3 + rng() % 4, rw = 3 + rng() % 4;
    ParameterStore<double> rs(seed);
    ResidualBlock<double> rb(rs, "rb", c);
    randomize(rs, seed + 600);
    auto m = random_tensor<double>({c, rh, rw}, seed + 700);
    const auto rref = oracle::residual_block(vec(m), c, rh, rw, vec(rb.conv1.weight), vec(rb.conv1.bias),
                                             vec(rb.conv2.weight), vec(rb.conv2.bias));
    const auto ry = rb(m);
    for (std::size_t i = 0; i < rref.size(); ++i) rb_err = std::max(rb_err, std::abs(ry.data()[i] - rref[i]));
  }
  Outcome o;
  o.pass = std::max({conv_err, attn_err, tv_err, rb_err}) < 1e-6;
  o.detail = std::to_string(seeds) + " seeds each; max abs error conv " + fmt("%.1e", conv_err) + ", attention " +
             fmt("%.1e", attn_err) + ", tv " + fmt("%.1e", tv_err) + ", residual " + fmt("%.1e", rb_err);
  return o;
}

Outcome shape_contract() {
  DespeckleNet<float> net(ModelConfig::full(), 0);
  NoGradGuard guard;
  const auto x = cast<float>(random_tensor<double>({1, 256, 256}, 1, 0, 1));
  const FeaturePyramid<float> pyr = net.encode(x);
  const std::size_t sizes[] = {128, 64, 32, 16, 8}, widths[] = {32, 64, 128, 320, 512},
                    heads[] = {1, 1, 2, 4, 8};
  bool ok = pyr.maps.size() == 5;
  std::ostringstream d;
  for (std::size_t i = 0; ok && i < 5; ++i) {
    ok &= pyr.maps[i].shape() == Shape{widths[i], sizes[i], sizes[i]};
    ok &= net.stages()[i].block.attn.heads() == heads[i];
    d << (i ? " " : "") << shape_str(pyr.maps[i].shape()) << "/h" << net.stages()[i].block.attn.heads();
  }
  const auto y = net.decode(pyr);
  ok &= y.shape() == Shape{1, 256, 256};
  d << " -> " << shape_str(y.shape());
  return {ok, d.str()};
}

Outcome residual_identities() {
  DespeckleNet<double> net(ModelConfig::desk(), 2);
  randomize(net.parameters(), 3);
  auto& block = net.stages()[1].block;
  const auto input = random_tensor<double>({64, 32}, 4);
  const auto ln = block.norm1(input);

  // Attention residual: zero attention output -> X equals I.
  for (auto* t : {&block.attn.out_proj.weight, &block.attn.out_proj.bias})
    for (double& v : t->mutable_data()) v = 0.0;
  const auto x_only = add(block.attn(ln, 8, 8), input);
  const bool attn_ok = vec(x_only) == vec(input);
  // MLP residual: zero MLP output -> block output equals X.
  for (auto* t : {&block.mlp.weight, &block.mlp.bias})
    for (double& v : t->mutable_data()) v = 0.0;
  const bool mlp_ok = vec(block(input, 8, 8)) == vec(input);
  // Residual block: zero second conv -> RB(I) equals I.
  auto& rb = net.decoder().scales[1].rb;
  for (auto* t : {&rb.conv2.weight, &rb.conv2.bias})
    for (double& v : t->mutable_data()) v = 0.0;
  const auto m = random_tensor<double>({32, 4, 4}, 5);
  const bool rb_ok = vec(rb(m)) == vec(m);
  return {attn_ok && mlp_ok && rb_ok, std::string("attention skip ") + (attn_ok ? "exact" : "differs") +
                                          ", mlp skip " + (mlp_ok ? "exact" : "differs") +
                                          ", residual block skip " + (rb_ok ? "exact" : "differs")};
}

Outcome overfit_smoke() {
  const Image clean = testing::synthetic_scene(64, 64, 5);
  const ImagePair pair = apply_speckle(clean, SpeckleParams{1.0, 3});
  DespeckleNet<float> net(ModelConfig::desk(), 0);
  const TrainConfig cfg = TrainConfig::desk();
  TrainState<float> st;
  const ImagePair* batch[1] = {&pair};
  double initial = 0;
  for (int s = 0; s < 200; ++s) {
    const double l = train_step(net, std::span<const ImagePair* const>(batch, 1), cfg, st);
    if (s == 0) initial = l;
  }
  double final_loss = 0;
  {
    NoGradGuard g;
    final_loss = total_loss(net.forward(image_to_tensor<float>(pair.speckled)), image_to_tensor<float>(clean),
                            cfg.weights).item();
  }
  const Image est = tensor_to_image(net.predict(image_to_tensor<float>(pair.speckled)));
  const double gain = psnr(est, clean) - psnr(pair.speckled, clean);
  return {final_loss < 0.1 * initial && gain >= 3.0,
          "loss " + fmt("%.4g", initial) + " -> " + fmt("%.4g", final_loss) + " (" +
              fmt("%.2f%%", 100 * final_loss / initial) + "), PSNR gain " + fmt("%.2f dB", gain)};
}

Outcome desk_generalization() {
  testing::TempDir dir("accept-gen");
  testing::write_corpus(dir / "corpus", 20, 80, 80, 100);
  DatasetOptions o;
  o.patch_size = 64;
  o.train_count = 16;
  o.val_count = 4;
  o.seed = 1;
  build_dataset(dir / "corpus", dir / "data", o);
  TrainConfig cfg = TrainConfig::desk();
  cfg.manifest = (dir / "data" / "manifest.txt").string();
  cfg.out_dir = (dir / "run").string();
  DespeckleNet<float> net(cfg.model_config(), cfg.seed);
  const FitReport r = fit(net, cfg);
  const double gain = r.final_val_psnr - r.baseline_val_psnr;

  // Homogeneous synthetic scene: constant reflectivity under single-look speckle.
  const ImagePair flat = apply_speckle(Image(64, 64, 0.5f), SpeckleParams{1.0, 77});
  const Image est = tensor_to_image(net.predict(image_to_tensor<float>(flat.speckled)));
  Region region;
  region.label = "flat";
  region.x0 = region.y0 = 16;
  region.width = region.height = 32;
  const double enl_in = enl(flat.speckled, region), enl_out = enl(est, region);
  return {gain >= 2.0 && enl_out >= 3.0 * enl_in,
          std::to_string(r.epochs_completed) + " epochs; val PSNR " + fmt("%.2f", r.final_val_psnr) + " vs input " +
              fmt("%.2f", r.baseline_val_psnr) + " (" + fmt("%+.2f dB", gain) + "); ENL " + fmt("%.2f", enl_in) +
              " -> " + fmt("%.2f", enl_out) + " (" + fmt("%.1fx", enl_out / enl_in) + ")"};
}

Outcome metric_identities() {
  const Image x = testing::synthetic_scene(48, 48, 2);
  const double self = ssim(x, x);
  double worst_identity = 0;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const Image img = sample_speckle(20, 20, SpeckleParams{1.0 + i % 4, std::uint64_t(i)});
    Region r;
    r.x0 = rng() % 10;
    r.y0 = rng() % 10;
    r.width = 2 + rng() % 9;
    r.height = 2 + rng() % 9;
    worst_identity = std::max(worst_identity, std::abs(enl(img, r) * std::pow(cx(img, r), 2) - 1.0));
  }
  std::string enls;
  bool enl_ok = true;
  for (double L : {1.0, 2.0, 4.0}) {
    const Image n = sample_speckle(100, 100, SpeckleParams{L, 2024});
    Region r;
    r.width = r.height = 100;
    const double e = enl(n, r);
    enl_ok &= std::abs(e - L) <= 0.05 * L;
    enls += " L=" + fmt("%.0f", L) + ":" + fmt("%.3f", e);
  }
  return {std::abs(self - 1.0) < 1e-12 && worst_identity < 1e-10 && enl_ok,
          "ssim(x,x)-1 = " + fmt("%.1e", self - 1.0) + "; max |enl*cx^2-1| " + fmt("%.1e", worst_identity) +
              "; ENL" + enls};
}

Outcome full_scale_statement() {
  // The full-scale preset exists with its published hyperparameters, and the
  // README records that the published scores are not reproduced here.
  const TrainConfig p = TrainConfig::full();
  const ModelConfig m = ModelConfig::full();
  const bool preset_ok = p.learning_rate == 2e-4 && p.epochs == 400 && p.batch_size == 8 && m.stages.size() == 5;
  std::ifstream in(std::string(DESPECKLER_SOURCE_DIR) + "/README.md");
  const std::string readme((std::istreambuf_iterator<char>(in)), {});
  const bool documented = readme.find("24.56") != std::string::npos && readme.find("0.718") != std::string::npos &&
                          readme.find("not reproducible") != std::string::npos;
  return {preset_ok && documented, std::string("full preset ") + (preset_ok ? "present" : "MISSING") +
                                       "; README statement " + (documented ? "present" : "MISSING") +
                                       " (published scores are not desk-verifiable)"};
}

Outcome determinism() {
  testing::TempDir dir("accept-det");
  testing::write_corpus(dir / "corpus", 10, 40, 40, 50);
  DatasetOptions o;
  o.patch_size = 32;
  o.train_count = 8;
  o.val_count = 2;
  build_dataset(dir / "corpus", dir / "data", o);
  auto run = [&](const std::string& name, bool wall) {
    TrainConfig cfg = TrainConfig::desk();
    cfg.manifest = (dir / "data" / "manifest.txt").string();
    cfg.out_dir = (dir / name).string();
    cfg.epochs = 3;
    cfg.dropout = 0.1;  // exercises the seeded dropout masks too
    cfg.log_wall_time = wall;
    DespeckleNet<float> net(cfg.model_config(), cfg.seed);
    fit(net, cfg);
  };
  run("a", false);
  run("b", false);
  run("c", true);
  run("d", true);
  auto same = [&](const std::string& x, const std::string& y, const std::string& f) {
    return testing::file_bytes(dir / x / f) == testing::file_bytes(dir / y / f);
  };
  // With the wall-clock column on, everything except that column matches.
  auto strip_wall = [&](const std::string& run_name) {
    std::ifstream in(dir / run_name / "metrics.tsv");
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind('\t')) + '\n';
    return out;
  };
  const bool logs = same("a", "b", "metrics.tsv"), latest = same("a", "b", "latest.ckpt"),
             best = same("a", "b", "best.ckpt");
  const bool timed = strip_wall("c") == strip_wall("d") && strip_wall("a") == strip_wall("c") &&
                     same("c", "d", "latest.ckpt") && same("c", "d", "best.ckpt");
  return {logs && latest && best && timed,
          std::string("metrics.tsv ") + (logs ? "identical" : "DIFFERS") + ", latest.ckpt " +
              (latest ? "identical" : "DIFFERS") + ", best.ckpt " + (best ? "identical" : "DIFFERS") +
              ", timed-log runs " + (timed ? "identical apart from wall time" : "DIFFERS")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0: no stated budget
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "speckle statistics", 5, speckle_statistics},
      {2, "gradient fidelity", 120, gradient_fidelity},
      {3, "oracle equivalence", 60, oracle_equivalence},
      {4, "architecture shape contract", 0, shape_contract},
      {5, "residual identities", 0, residual_identities},
      {6, "overfit smoke test", 180, overfit_smoke},
      {7, "desk-scale generalization", 900, desk_generalization},
      {8, "metric identities", 0, metric_identities},
      {9, "full-scale statement", 0, full_scale_statement},
      {10, "determinism", 0, determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.budget_s == 0 || secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("criterion %2d: %s  %-28s %s [%.1fs%s]\n", c.id, pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                secs, c.budget_s > 0 ? (fmt(" / %.0fs budget", c.budget_s) + (in_time ? "" : " EXCEEDED")).c_str() : "");
    std::fflush(stdout);
  }
  std::printf("%d of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
