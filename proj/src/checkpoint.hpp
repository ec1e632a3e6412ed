#pragma once

#include <filesystem>

#include "net.hpp"
#include "train_state.hpp"

namespace despeckler {

// Binary layout (little-endian):
//   "DSPKCKPT" | u32 version | ModelConfig | u32 n_params | records...
//   | u32 has_state | [u64 epoch, u64 step, f64 best_psnr, u32 len, config
//   text, u32 n_records, moment records named "adam.m/<p>", "adam.v/<p>"]
// ModelConfig: u32 in_channels, u32 decoder_dim, u32 n_stages, then per
// stage u32 kernel, embed, stride, padding, heads, reduction, mlp; f64 dropout.
// Record: u32 name_len, name, u32 dtype (1 = f32, 2 = f64), u32 rank,
// u64 extents[rank], raw data.

template <typename T>
void save_checkpoint(const DespeckleNet<T>& model, const std::filesystem::path& path,
                     const TrainState<T>* state = nullptr);

ModelConfig read_checkpoint_config(const std::filesystem::path& path);

// Restores parameters into `model`; the stored config must equal the model's.
template <typename T>
void load_checkpoint_into(DespeckleNet<T>& model, const std::filesystem::path& path,
                          TrainState<T>* state = nullptr);

template <typename T>
DespeckleNet<T> load_checkpoint(const std::filesystem::path& path, TrainState<T>* state = nullptr);

}  // namespace despeckler
