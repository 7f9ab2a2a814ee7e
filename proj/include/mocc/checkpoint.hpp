#pragma once

// Binary checkpoint of an OccModel. Little-endian throughout.
//
//   "MOCC"                magic
//   u16                   format version
//   config                u32 epochs, u32 batch_size, f64 lr, f64 weight_decay,
//                         u32 input_size, u8 mode, u8 regularizer, f64 lambda,
//                         u64 seed
//   architecture          u32 in_channels, u32 depth, u32 width[depth],
//                         f64 dropout, f64 bn_eps, f64 bn_momentum
//   model                 f32 tau, u64 n_train, u8 has_class, i32 positive_class
//   u32                   record count
//   record*               u16 name length, name bytes, u8 rank, u32 dims[rank],
//                         f32 values[prod(dims)]

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mocc/errors.hpp"
#include "mocc/occ.hpp"

namespace mocc {

inline constexpr char kCheckpointMagic[4] = {'M', 'O', 'C', 'C'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace detail {

class ByteWriter {
public:
  template <typename V> void put(V value) {
    static_assert(std::is_trivially_copyable_v<V>);
    const auto *p = reinterpret_cast<const char *>(&value);
    bytes_.append(p, sizeof(V));
  }
  void put_bytes(const void *data, std::size_t n) {
    bytes_.append(static_cast<const char *>(data), n);
  }
  const std::string &bytes() const { return bytes_; }

private:
  std::string bytes_;
};

class ByteReader {
public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  bool can_read(std::size_t n) const { return pos_ + n <= bytes_.size(); }

  template <typename V> V get(const std::string &context) {
    V value;
    get_bytes(&value, sizeof(V), context);
    return value;
  }
  void get_bytes(void *out, std::size_t n, const std::string &context) {
    if (!can_read(n))
      throw CorruptionError("checkpoint truncated while reading " + context);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

inline std::string checkpoint_bytes(const OccModel &model) {
  ByteWriter w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put(kCheckpointVersion);

  const auto &c = model.config;
  w.put(static_cast<std::uint32_t>(c.epochs));
  w.put(static_cast<std::uint32_t>(c.batch_size));
  w.put(c.lr);
  w.put(c.weight_decay);
  w.put(static_cast<std::uint32_t>(c.input_size));
  w.put(static_cast<std::uint8_t>(c.mode));
  w.put(static_cast<std::uint8_t>(c.regularizer));
  w.put(c.lambda);
  w.put(static_cast<std::uint64_t>(c.seed));

  const auto &a = model.params.arch;
  w.put(static_cast<std::uint32_t>(a.in_channels));
  w.put(static_cast<std::uint32_t>(a.channels.size()));
  for (auto width : a.channels)
    w.put(static_cast<std::uint32_t>(width));
  w.put(a.dropout);
  w.put(a.batchnorm.eps);
  w.put(a.batchnorm.momentum);

  w.put(model.tau);
  w.put(static_cast<std::uint64_t>(model.n_train));
  w.put(static_cast<std::uint8_t>(model.positive_class.has_value()));
  w.put(static_cast<std::int32_t>(model.positive_class.value_or(0)));

  std::vector<std::pair<std::string, const Tensor<float> *>> records;
  model.params.for_each_tensor(
      [&](const std::string &name, const Tensor<float> &t) { records.emplace_back(name, &t); });
  w.put(static_cast<std::uint32_t>(records.size()));
  for (const auto &[name, tensor] : records) {
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put(static_cast<std::uint8_t>(tensor->rank()));
    for (auto extent : tensor->shape())
      w.put(static_cast<std::uint32_t>(extent));
    w.put_bytes(tensor->data(), tensor->size() * sizeof(float));
  }
  return w.bytes();
}

} // namespace detail

// Written to a temporary sibling first and renamed into place.
inline void save_checkpoint(const OccModel &model, const std::filesystem::path &path) {
  const std::string bytes = detail::checkpoint_bytes(model);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out)
      throw IoError("failed writing checkpoint '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move checkpoint into place at '" + path.string() + "'");
  }
}

inline OccModel load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  detail::ByteReader r(buffer.str());

  char magic[4];
  if (!r.can_read(4))
    throw FormatError("'" + path.string() + "' is not a checkpoint (too short)");
  r.get_bytes(magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("'" + path.string() + "' is not a checkpoint (bad magic)");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint '" + path.string() + "' has format version " +
                       std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));

  OccModel model;
  auto &c = model.config;
  c.epochs = static_cast<int>(r.get<std::uint32_t>("config"));
  c.batch_size = static_cast<int>(r.get<std::uint32_t>("config"));
  c.lr = r.get<double>("config");
  c.weight_decay = r.get<double>("config");
  c.input_size = static_cast<int>(r.get<std::uint32_t>("config"));
  const auto mode = r.get<std::uint8_t>("config");
  const auto reg = r.get<std::uint8_t>("config");
  if (mode > 2 || reg > 3)
    throw CorruptionError("checkpoint '" + path.string() + "' has an invalid mode or regularizer");
  c.mode = static_cast<Modality>(mode);
  c.regularizer = static_cast<Regularizer>(reg);
  c.lambda = r.get<double>("config");
  c.seed = r.get<std::uint64_t>("config");

  ArchConfig arch;
  arch.input_size = static_cast<std::size_t>(c.input_size);
  arch.in_channels = r.get<std::uint32_t>("architecture");
  const auto depth = r.get<std::uint32_t>("architecture");
  if (depth == 0 || depth > 16)
    throw CorruptionError("checkpoint '" + path.string() + "' has an invalid depth");
  arch.channels.clear();
  for (std::uint32_t i = 0; i < depth; ++i)
    arch.channels.push_back(r.get<std::uint32_t>("architecture"));
  arch.dropout = r.get<double>("architecture");
  arch.batchnorm.eps = r.get<double>("architecture");
  arch.batchnorm.momentum = r.get<double>("architecture");
  try {
    arch.validate();
  } catch (const ParameterError &e) {
    throw CorruptionError("checkpoint '" + path.string() + "': " + e.what());
  }

  model.tau = r.get<float>("tau");
  model.n_train = r.get<std::uint64_t>("n_train");
  const bool has_class = r.get<std::uint8_t>("positive_class") != 0;
  const auto cls = r.get<std::int32_t>("positive_class");
  if (has_class)
    model.positive_class = cls;

  // Skeleton with the right shapes; every tensor is overwritten below.
  Rng skeleton_rng(0);
  model.params = ModelParams<float>::init(arch, skeleton_rng);
  std::map<std::string, Tensor<float> *> slots;
  model.params.for_each_tensor(
      [&](const std::string &name, Tensor<float> &t) { slots.emplace(name, &t); });

  const auto count = r.get<std::uint32_t>("record count");
  if (count != slots.size())
    throw CorruptionError("checkpoint '" + path.string() + "' holds " + std::to_string(count) +
                          " tensors, expected " + std::to_string(slots.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string record = "tensor record #" + std::to_string(i);
    const auto name_len = r.get<std::uint16_t>(record);
    std::string name(name_len, '\0');
    r.get_bytes(name.data(), name_len, record + " name");
    const auto it = slots.find(name);
    if (it == slots.end())
      throw CorruptionError("checkpoint '" + path.string() + "' has unknown tensor '" + name + "'");
    const auto rank = r.get<std::uint8_t>("tensor '" + name + "'");
    Shape shape;
    for (std::uint8_t k = 0; k < rank; ++k)
      shape.push_back(r.get<std::uint32_t>("tensor '" + name + "'"));
    if (shape != it->second->shape())
      throw CorruptionError("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                            shape_str(it->second->shape()));
    r.get_bytes(it->second->data(), it->second->size() * sizeof(float), "tensor '" + name + "'");
    slots.erase(it);
  }
  if (!r.at_end())
    throw CorruptionError("checkpoint '" + path.string() + "' has trailing bytes");
  return model;
}

} // namespace mocc
