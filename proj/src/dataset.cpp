#include "dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "error.hpp"
#include "rng.hpp"
#include "threads.hpp"

namespace despeckler {

namespace fs = std::filesystem;

std::string ManifestEntry::split() const {
  const auto dash = id.find('-');
  return dash == std::string::npos ? std::string() : id.substr(0, dash);
}

std::vector<ManifestEntry> Manifest::split(const std::string& name) const {
  std::vector<ManifestEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
               [&](const ManifestEntry& e) { return e.split() == name; });
  return out;
}

std::size_t Manifest::count(const std::string& name) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split() == name; }));
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open manifest " + path.string());
  Manifest m;
  m.directory = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    ManifestEntry e;
    std::string clean, speckled;
    if (!std::getline(fields, e.id, '\t') || !std::getline(fields, clean, '\t') ||
        !std::getline(fields, speckled, '\t') || !(fields >> e.seed) || !(fields >> e.looks)) {
      throw_data(path.string() + ":" + std::to_string(lineno) + ": malformed manifest line");
    }
    e.clean = clean;
    e.speckled = speckled;
    m.entries.push_back(std::move(e));
  }
  return m;
}

ImagePair load_pair(const Manifest& manifest, const ManifestEntry& entry) {
  ImagePair pair;
  pair.clean = read_image(manifest.directory / entry.clean);
  pair.speckled = read_image(manifest.directory / entry.speckled);
  pair.params = SpeckleParams{entry.looks, entry.seed};
  if (pair.clean.height != pair.speckled.height || pair.clean.width != pair.speckled.width) {
    throw_data("pair " + entry.id + ": clean and speckled sizes differ");
  }
  return pair;
}

Manifest build_dataset(const fs::path& corpus_dir, const fs::path& out_dir,
                       const DatasetOptions& opts) {
  SpeckleParams{opts.looks, opts.seed}.validate();
  if (opts.patch_size == 0) throw_argument("patch size must be >= 1");
  const std::size_t wanted = opts.train_count + opts.val_count;
  if (wanted == 0) throw_argument("split must request at least one pair");
  if (!fs::is_directory(corpus_dir)) throw_data("corpus directory not found: " + corpus_dir.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(corpus_dir)) {
    if (entry.is_regular_file() && is_supported_image(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<Image> patches;
  std::size_t readable = 0;
  for (const auto& file : files) {
    if (patches.size() == wanted) break;
    try {
      Image img = read_image(file);
      ++readable;
      if (img.height < opts.patch_size || img.width < opts.patch_size) {
        warn("skipping " + file.string() + ": smaller than patch size " +
             std::to_string(opts.patch_size));
        continue;
      }
      patches.push_back(center_crop(img, opts.patch_size));
    } catch (const Error& e) {
      warn("skipping unreadable image " + file.string() + ": " + e.what());
    }
  }
  if (readable == 0) throw_data("no readable images in " + corpus_dir.string());
  if (patches.size() < wanted) {
    throw_data("corpus " + corpus_dir.string() + " provides " + std::to_string(patches.size()) +
               " usable images but the split requests " + std::to_string(wanted));
  }

  fs::create_directories(out_dir / "clean");
  fs::create_directories(out_dir / "speckled");
  fs::create_directories(out_dir / "preview");

  Manifest manifest;
  manifest.directory = out_dir;
  manifest.entries.resize(wanted);
  parallel_for(wanted, [&](std::size_t i) {
    const bool train = i < opts.train_count;
    const std::size_t local = train ? i : i - opts.train_count;
    std::ostringstream id;
    id << (train ? "train-" : "val-") << std::setw(4) << std::setfill('0') << local;
    ManifestEntry e;
    e.id = id.str();
    e.seed = mix_seed(opts.seed, i);
    e.looks = opts.looks;
    e.clean = fs::path("clean") / (e.id + ".f32");
    e.speckled = fs::path("speckled") / (e.id + ".f32");
    const ImagePair pair = apply_speckle(patches[i], SpeckleParams{e.looks, e.seed});
    write_tensor_file(out_dir / e.clean, pair.clean);
    write_tensor_file(out_dir / e.speckled, pair.speckled);
    write_png8(out_dir / "preview" / (e.id + "_clean.png"), pair.clean);
    write_png8(out_dir / "preview" / (e.id + "_speckled.png"), pair.speckled);
    manifest.entries[i] = std::move(e);
  });

  std::ofstream os(out_dir / "manifest.txt");
  if (!os) throw_data("cannot write manifest in " + out_dir.string());
  os << "# despeckler manifest v1 patch=" << opts.patch_size << " looks=" << opts.looks
     << " seed=" << opts.seed << " train=" << opts.train_count << " val=" << opts.val_count
     << " clip=none\n";
  os << "# id\tclean\tspeckled\tseed\tlooks\n";
  os << std::setprecision(17);
  for (const auto& e : manifest.entries) {
    os << e.id << '\t' << e.clean.generic_string() << '\t' << e.speckled.generic_string() << '\t'
       << e.seed << '\t' << e.looks << '\n';
  }
  if (!os) throw_data("failed writing manifest in " + out_dir.string());
  return manifest;
}

}  // namespace despeckler
