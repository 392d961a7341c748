#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "smoe/error.hpp"
#include "smoe/transformer.hpp"

namespace smoe {

inline constexpr char kCheckpointMagic[4] = {'M', 'X', 'T', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("checkpoint: unexpected end of file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw IoError("checkpoint: unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline float read_f32(std::istream& in) {
  std::uint32_t bits = read_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

template <typename S>
void write_tensor(std::ostream& out, const Tensor<S>& t) {
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_u64(out, d);
  for (std::size_t i = 0; i < t.numel(); ++i) write_f32(out, static_cast<float>(t[i]));
}

template <typename S>
Tensor<S> read_tensor(std::istream& in) {
  const std::uint32_t rank = read_u32(in);
  if (rank == 0 || rank > 8) throw IoError("checkpoint: bad tensor rank");
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(read_u64(in));
  Tensor<S> t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(read_f32(in));
  return t;
}

}  // namespace detail

// Binary checkpoint: magic "MXTF", u32 format version, the ten ModelConfig
// fields as u64 in declaration order, then every parameter tensor in
// TransformerModel::parameters() order, each prefixed by rank and dimensions,
// data as little-endian binary32. Round-trips bit-exactly.
template <typename S>
void write_checkpoint(const TransformerModel<S>& model, std::ostream& out) {
  out.write(kCheckpointMagic, 4);
  detail::write_u32(out, kCheckpointVersion);
  for (const std::uint64_t* f : model.config.fields()) detail::write_u64(out, *f);
  for (const Tensor<S>* p : model.parameters()) detail::write_tensor(out, *p);
  if (!out) throw IoError("checkpoint: write failure");
}

template <typename S>
void save_checkpoint(const TransformerModel<S>& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  write_checkpoint(model, out);
}

template <typename S>
TransformerModel<S> read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("checkpoint: bad magic (expected MXTF)");
  const std::uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  TransformerModel<S> model;
  for (std::uint64_t* f : model.config.fields()) *f = detail::read_u64(in);
  model.config.validate();
  const ModelConfig& cfg = model.config;
  model.layers.resize(cfg.n_layers);
  for (auto& lw : model.layers) {
    lw.moe.top_k = static_cast<int>(cfg.top_k_experts);
    lw.moe.experts.resize(cfg.num_experts);
  }
  for (Tensor<S>* p : model.parameters()) *p = detail::read_tensor<S>(in);
  // Shape audit against the config.
  for (const auto& lw : model.layers) lw.moe.validate();
  if (model.embedding.shape() != std::vector<std::size_t>{cfg.vocab_size, cfg.dim} ||
      model.output_head.shape() != std::vector<std::size_t>{cfg.dim, cfg.vocab_size})
    throw IoError("checkpoint: tensor shapes do not match config");
  return model;
}

template <typename S>
TransformerModel<S> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  return read_checkpoint<S>(in);
}

}  // namespace smoe
