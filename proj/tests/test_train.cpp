#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "train.hpp"
#include "support.hpp"

using namespace despeckler;

namespace {

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Small desk dataset shared by the tests in this file.
struct TinyData {
  testing::TempDir dir{"train"};
  std::filesystem::path manifest;
  TinyData() {
    testing::write_corpus(dir / "corpus", 6, 40, 40, 3);
    DatasetOptions o;
    o.patch_size = 32;
    o.train_count = 4;
    o.val_count = 2;
    o.seed = 8;
    build_dataset(dir / "corpus", dir / "data", o);
    manifest = dir / "data" / "manifest.txt";
  }
  TrainConfig config(const std::string& out) const {
    TrainConfig c = TrainConfig::desk();
    c.manifest = manifest.string();
    c.out_dir = (dir / out).string();
    c.epochs = 2;
    c.batch_size = 2;
    c.log_wall_time = false;
    return c;
  }
};

}  // namespace

TEST_SUITE("train") {

TEST_CASE("presets carry the documented hyperparameters") {
  const TrainConfig p = TrainConfig::full();
  CHECK(p.learning_rate == 2e-4);
  CHECK(p.epochs == 400);
  CHECK(p.batch_size == 8);
  CHECK(p.model == "full");
  CHECK(p.weights.l2 == 1.0);
  CHECK(p.weights.tv == 5e-5);
  const TrainConfig d = TrainConfig::desk();
  CHECK(d.model == "desk");
  CHECK(d.epochs == 30);
  CHECK(d.model_config() == ModelConfig::desk());
  CHECK_THROWS_AS(TrainConfig::preset("fast"), Error);
}

TEST_CASE("config text parsing, overrides and round trip") {
  TrainConfig c = TrainConfig::desk();
  const auto errors = c.apply_text("# comment\nlearning_rate = 0.0005\nepochs=3\nbogus=1\nbatch_size=x\nnot a pair\n");
  CHECK(c.learning_rate == 5e-4);
  CHECK(c.epochs == 3);
  REQUIRE(errors.size() == 3);
  CHECK(errors[0].find("line 4") != std::string::npos);
  CHECK(errors[0].find("bogus") != std::string::npos);
  CHECK_THROWS_AS(c.set("normalize_loss", "maybe"), Error);
  c.set("lambda2", "0.001");
  c.set("manifest", "m.txt");
  TrainConfig back;
  CHECK(back.apply_text(c.to_text()).empty());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.weights.tv == 0.001);
  for (const auto& k : TrainConfig::keys()) CHECK(c.to_text().find(k + "=") != std::string::npos);
}

TEST_CASE("validation reports every problem at once") {
  TrainConfig c;
  c.learning_rate = -1;
  c.epochs = 0;
  c.batch_size = 0;
  c.beta1 = 1.0;
  c.model = "tiny";
  const auto errors = c.validate();  // manifest is also missing
  CHECK(errors.size() == 6);
}

TEST_CASE("Adam matches a hand-rolled update") {
  ParameterStore<double> store(0);
  Tensor<double> w = store.create("w", {2}, Init::Zeros);
  w.mutable_data()[0] = 1.0;
  w.mutable_data()[1] = -2.0;
  TrainState<double> st;
  const AdamOptions o{0.1, 0.9, 0.999, 1e-8};
  double ref[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 3; ++t) {
    const double g[2] = {2 * ref[0], 0.5 * t};  // any gradient sequence
    w.grad_accumulator()[0] = g[0];
    w.grad_accumulator()[1] = g[1];
    adam_step(store.all(), st, o);
    w.zero_grad();
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(w.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
  CHECK(st.step == 3);
  w.grad_accumulator()[1] = NAN;
  try {
    adam_step(store.all(), st, o);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
    CHECK(std::string(e.what()).find("w") != std::string::npos);
  }
}

TEST_CASE("train_step lowers the loss and leaves gradients cleared") {
  const Image clean = testing::synthetic_scene(32, 32, 4);
  const ImagePair pair = apply_speckle(clean, SpeckleParams{1.0, 1});
  DespeckleNet<float> net(ModelConfig::desk(), 0);
  TrainState<float> st;
  const ImagePair* batch[1] = {&pair};
  const TrainConfig cfg = TrainConfig::desk();
  const double first = train_step(net, std::span<const ImagePair* const>(batch, 1), cfg, st);
  double last = first;
  for (int i = 0; i < 10; ++i) last = train_step(net, std::span<const ImagePair* const>(batch, 1), cfg, st);
  CHECK(last < first);
  CHECK(st.step == 11);
  for (const auto& p : net.parameters().all()) {
    for (float g : p.tensor.grad()) REQUIRE(g == 0.0f);
  }
  ImagePair other = pair;
  other.clean = testing::synthetic_scene(16, 16, 1);
  other.speckled = other.clean;
  const ImagePair* mixed[2] = {&pair, &other};
  CHECK_THROWS_AS(train_step(net, std::span<const ImagePair* const>(mixed, 2), cfg, st), Error);
}

TEST_CASE("fit writes logs and checkpoints; resume continues the same trajectory") {
  TinyData data;
  const TrainConfig full = data.config("full");
  DespeckleNet<float> a(full.model_config(), full.seed);
  const FitReport ra = fit(a, full);
  CHECK(ra.epochs_completed == 2);
  CHECK(ra.steps == 4);
  CHECK(std::filesystem::exists(ra.best_checkpoint));
  CHECK(std::filesystem::exists(data.dir / "full" / "resolved_config.txt"));
  const std::string log = read_text(ra.log_path);
  CHECK(log.rfind("epoch\ttrain_loss\tval_psnr\tval_ssim\twall_time_s\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 3);

  TrainConfig half = data.config("split");
  half.epochs = 1;
  DespeckleNet<float> b(half.model_config(), half.seed);
  fit(b, half);
  TrainConfig rest = data.config("split");
  DespeckleNet<float> c(rest.model_config(), 12345);  // weights come from the checkpoint
  const FitReport rc = fit(c, rest, std::filesystem::path(data.dir / "split" / "latest.ckpt"));
  CHECK(rc.epochs_completed == 2);
  CHECK(rc.steps == 4);
  CHECK(testing::file_bytes(data.dir / "full" / "latest.ckpt") ==
        testing::file_bytes(data.dir / "split" / "latest.ckpt"));
  CHECK(read_text(data.dir / "full" / "metrics.tsv") == read_text(data.dir / "split" / "metrics.tsv"));

  TrainConfig changed = data.config("split");
  changed.learning_rate = 1e-2;
  DespeckleNet<float> d(changed.model_config(), 0);
  try {
    fit(d, changed, std::filesystem::path(data.dir / "split" / "latest.ckpt"));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
  }

  TrainConfig full_cfg = data.config("mismatch");
  full_cfg.model = "full";
  DespeckleNet<float> e(ModelConfig::desk(), 0);
  CHECK_THROWS_AS(fit(e, full_cfg), Error);
}

}  // TEST_SUITE
