#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "dlab/denoiser.hpp"

namespace dlab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void put_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

template <typename V>
V get(std::istream& in, const char* what) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) {
    throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  }
  return v;
}

}  // namespace

void write_checkpoint(const DenoiserParams& params, std::ostream& out) {
  const auto& c = params.config();
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  for (int v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_len}) {
    put_u32(out, static_cast<std::uint32_t>(v));
  }
  put_f64(out, c.init_std);
  const auto& layout = params.layout();
  put_u32(out, static_cast<std::uint32_t>(layout.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    put_u32(out, static_cast<std::uint32_t>(layout[i].shape.size()));
    for (int dim : layout[i].shape) {
      put_u32(out, static_cast<std::uint32_t>(dim));
    }
    const auto values = params.tensor(i);
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  }
  if (!out) {
    throw CheckpointError("failed to write checkpoint");
  }
}

DenoiserParams read_checkpoint(std::istream& in) {
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in) {
    throw CheckpointError("truncated checkpoint while reading magic");
  }
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw CheckpointError("bad checkpoint magic");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported version " + std::to_string(version));
  }
  DenoiserConfig config;
  int* fields[] = {&config.vocab_size, &config.d_model, &config.n_layers,
                   &config.n_heads,    &config.d_ff,    &config.max_len};
  for (int* f : fields) {
    const auto v = get<std::uint32_t>(in, "config");
    if (v > (1u << 24)) {
      throw CheckpointError("implausible config dimension in checkpoint");
    }
    *f = static_cast<int>(v);
  }
  config.init_std = get<double>(in, "config");
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("invalid config in checkpoint: ") + e.what());
  }

  DenoiserParams params(config);
  const auto& layout = params.layout();
  const auto count = get<std::uint32_t>(in, "tensor count");
  if (count != layout.size()) {
    throw CheckpointError("shape mismatch: tensor count " + std::to_string(count) + " != " +
                          std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto rank = get<std::uint32_t>(in, "tensor rank");
    if (rank != layout[i].shape.size()) {
      throw CheckpointError("shape mismatch in tensor " + layout[i].name);
    }
    for (int dim : layout[i].shape) {
      if (get<std::uint32_t>(in, "tensor shape") != static_cast<std::uint32_t>(dim)) {
        throw CheckpointError("shape mismatch in tensor " + layout[i].name);
      }
    }
    auto values = params.tensor(i);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!in) {
      throw CheckpointError("truncated checkpoint in tensor " + layout[i].name);
    }
  }
  if (!params.all_finite()) {
    throw CheckpointError("checkpoint contains non-finite weights");
  }
  return params;
}

void save_checkpoint(const DenoiserParams& params, const std::filesystem::path& path) {
  // Write-then-rename so readers never observe a half-written file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw CheckpointError("cannot open " + tmp.string() + " for writing");
    }
    write_checkpoint(params, out);
  }
  std::filesystem::rename(tmp, path);
}

DenoiserParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError("cannot open checkpoint " + path.string());
  }
  return read_checkpoint(in);
}

}  // namespace dlab
