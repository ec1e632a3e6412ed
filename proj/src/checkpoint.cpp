#include "checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string_view>

#include "error.hpp"

namespace despeckler {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kMagic = "DSPKCKPT";
constexpr std::uint32_t kVersion = 1;

template <typename T>
constexpr std::uint32_t dtype_code() {
  return sizeof(T) == 4 ? 1u : 2u;
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename V>
  void put(V v) {
    bytes(&v, sizeof(V));
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  template <typename T>
  void record(const std::string& name, const Shape& shape, const std::vector<T>& data) {
    str(name);
    put<std::uint32_t>(dtype_code<T>());
    put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put<std::uint64_t>(d);
    bytes(data.data(), data.size() * sizeof(T));
  }
  void flush(const fs::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw_data("cannot write checkpoint " + path.string());
    os.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!os) throw_data("failed writing checkpoint " + path.string());
  }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const fs::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_data("cannot open checkpoint " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(in), {});
  }
  void bytes(void* p, std::size_t n) {
    if (pos_ + n > buf_.size()) corrupt("unexpected end of file");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename V>
  V get() {
    V v;
    bytes(&v, sizeof(V));
    return v;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    if (n > buf_.size() - pos_) corrupt("string length out of range");
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  struct Record {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };
  Record record() {
    Record r;
    r.name = str();
    const auto dtype = get<std::uint32_t>();
    if (dtype != 1 && dtype != 2) corrupt("unknown dtype code in record '" + r.name + "'");
    const auto rank = get<std::uint32_t>();
    if (rank == 0 || rank > 8) corrupt("invalid rank in record '" + r.name + "'");
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      r.shape.push_back(static_cast<std::size_t>(get<std::uint64_t>()));
      n *= r.shape.back();
    }
    const std::size_t width = dtype == 1 ? 4 : 8;
    if (n > (buf_.size() - pos_) / width) corrupt("record '" + r.name + "' is truncated");
    r.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      r.values[i] = dtype == 1 ? static_cast<double>(get<float>()) : get<double>();
    }
    return r;
  }
  [[noreturn]] void corrupt(const std::string& why) const {
    throw_data("corrupt checkpoint " + path_.string() + ": " + why);
  }

 private:
  fs::path path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const ModelConfig& cfg) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.in_channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.decoder_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.stages.size()));
  for (const auto& s : cfg.stages) {
    for (std::size_t v : {s.kernel, s.embed_dim, s.stride, s.padding, s.heads, s.reduction,
                          s.mlp_dim}) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
    }
    w.put<double>(s.dropout);
  }
}

ModelConfig read_header(Reader& r) {
  char magic[8];
  r.bytes(magic, 8);
  if (std::string_view(magic, 8) != kMagic) r.corrupt("bad magic bytes");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) r.corrupt("unsupported format version " + std::to_string(version));
  ModelConfig cfg;
  cfg.in_channels = r.get<std::uint32_t>();
  cfg.decoder_dim = r.get<std::uint32_t>();
  const auto n_stages = r.get<std::uint32_t>();
  if (n_stages == 0 || n_stages > 16) r.corrupt("implausible stage count");
  for (std::uint32_t i = 0; i < n_stages; ++i) {
    StageConfig s;
    s.kernel = r.get<std::uint32_t>();
    s.embed_dim = r.get<std::uint32_t>();
    s.stride = r.get<std::uint32_t>();
    s.padding = r.get<std::uint32_t>();
    s.heads = r.get<std::uint32_t>();
    s.reduction = r.get<std::uint32_t>();
    s.mlp_dim = r.get<std::uint32_t>();
    s.dropout = r.get<double>();
    cfg.stages.push_back(s);
  }
  return cfg;
}

std::string config_mismatch(const ModelConfig& stored, const ModelConfig& expected) {
  if (stored.stages.size() != expected.stages.size()) {
    return "checkpoint has " + std::to_string(stored.stages.size()) +
           " encoder stages but the model has " + std::to_string(expected.stages.size());
  }
  if (stored.decoder_dim != expected.decoder_dim) {
    return "checkpoint decoder width " + std::to_string(stored.decoder_dim) +
           " differs from the model's " + std::to_string(expected.decoder_dim);
  }
  for (std::size_t i = 0; i < stored.stages.size(); ++i) {
    if (!(stored.stages[i] == expected.stages[i])) {
      return "stage " + std::to_string(i + 1) + " configuration differs";
    }
  }
  if (stored.in_channels != expected.in_channels) return "input channel count differs";
  return {};
}

template <typename T>
std::vector<T> to_vector(std::span<const T> s) {
  return std::vector<T>(s.begin(), s.end());
}

}  // namespace

template <typename T>
void save_checkpoint(const DespeckleNet<T>& model, const fs::path& path,
                     const TrainState<T>* state) {
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.put<std::uint32_t>(kVersion);
  write_config(w, model.config());
  const auto& params = model.parameters().all();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) w.record(p.name, p.tensor.shape(), to_vector(p.tensor.data()));
  w.put<std::uint32_t>(state != nullptr ? 1u : 0u);
  if (state != nullptr) {
    if (state->first_moment.size() != params.size() ||
        state->second_moment.size() != params.size()) {
      throw_argument("train state moments do not match the model's parameter list");
    }
    w.put<std::uint64_t>(state->epoch);
    w.put<std::uint64_t>(state->step);
    w.put<double>(state->best_val_psnr);
    w.str(state->config_text);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(2 * params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      w.record("adam.m/" + params[i].name, params[i].tensor.shape(), state->first_moment[i]);
      w.record("adam.v/" + params[i].name, params[i].tensor.shape(), state->second_moment[i]);
    }
  }
  // Write-then-rename so a crash never leaves a half-written checkpoint.
  const fs::path tmp = path.string() + ".tmp";
  w.flush(tmp);
  fs::rename(tmp, path);
}

ModelConfig read_checkpoint_config(const fs::path& path) {
  Reader r(path);
  return read_header(r);
}

template <typename T>
void load_checkpoint_into(DespeckleNet<T>& model, const fs::path& path, TrainState<T>* state) {
  Reader r(path);
  const ModelConfig stored = read_header(r);
  if (const std::string why = config_mismatch(stored, model.config()); !why.empty()) {
    throw_data("checkpoint " + path.string() + " does not match the model architecture: " + why);
  }
  const auto n = r.get<std::uint32_t>();
  std::map<std::string, Reader::Record> records;
  for (std::uint32_t i = 0; i < n; ++i) {
    Reader::Record rec = r.record();
    std::string name = rec.name;
    records.emplace(std::move(name), std::move(rec));
  }
  auto& params = model.parameters().all();
  for (auto& p : params) {
    auto it = records.find(p.name);
    if (it == records.end()) throw_data("checkpoint " + path.string() + " is missing parameter " + p.name);
    if (it->second.shape != p.tensor.shape()) {
      throw_data("checkpoint parameter " + p.name + " has shape " + shape_str(it->second.shape) +
                 ", model expects " + shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second.values[i]);
    records.erase(it);
  }
  if (!records.empty()) {
    throw_data("checkpoint " + path.string() + " has unknown parameter " + records.begin()->first);
  }

  const auto has_state = r.get<std::uint32_t>();
  if (state == nullptr) return;
  if (has_state == 0) throw_data("checkpoint " + path.string() + " carries no training state");
  state->epoch = r.get<std::uint64_t>();
  state->step = r.get<std::uint64_t>();
  state->best_val_psnr = r.get<double>();
  state->config_text = r.str();
  const auto n_moments = r.get<std::uint32_t>();
  if (n_moments != 2 * params.size()) r.corrupt("moment record count mismatch");
  state->first_moment.assign(params.size(), {});
  state->second_moment.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (int which = 0; which < 2; ++which) {
      Reader::Record rec = r.record();
      const std::string expected = (which == 0 ? "adam.m/" : "adam.v/") + params[i].name;
      if (rec.name != expected || rec.shape != params[i].tensor.shape()) {
        r.corrupt("unexpected moment record '" + rec.name + "'");
      }
      auto& dst = which == 0 ? state->first_moment[i] : state->second_moment[i];
      dst.assign(rec.values.size(), T(0));
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(rec.values[k]);
    }
  }
}

template <typename T>
DespeckleNet<T> load_checkpoint(const fs::path& path, TrainState<T>* state) {
  DespeckleNet<T> model(read_checkpoint_config(path));
  load_checkpoint_into(model, path, state);
  return model;
}

template void save_checkpoint<float>(const DespeckleNet<float>&, const fs::path&,
                                     const TrainState<float>*);
template void save_checkpoint<double>(const DespeckleNet<double>&, const fs::path&,
                                      const TrainState<double>*);
template void load_checkpoint_into<float>(DespeckleNet<float>&, const fs::path&, TrainState<float>*);
template void load_checkpoint_into<double>(DespeckleNet<double>&, const fs::path&,
                                           TrainState<double>*);
template DespeckleNet<float> load_checkpoint<float>(const fs::path&, TrainState<float>*);
template DespeckleNet<double> load_checkpoint<double>(const fs::path&, TrainState<double>*);

}  // namespace despeckler
