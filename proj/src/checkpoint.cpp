#include "medusa/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace medusa {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

namespace {

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32:
      return 4;
    case DType::f64:
    case DType::i64:
      return 8;
  }
  return 0;
}

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::f32;
  if constexpr (std::is_same_v<T, double>) return DType::f64;
  return DType::i64;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  const std::uint8_t* take(std::size_t n, const std::string& field) {
    if (n > size_ - pos_) throw LoadError(field, "file truncated");
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const std::string& field) {
    const std::uint8_t* p = take(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

template <typename V>
RawTensor make_raw(std::string name, std::vector<std::uint32_t> extents, std::span<const V> values) {
  RawTensor r;
  r.name = std::move(name);
  r.dtype = dtype_of<V>();
  r.extents = std::move(extents);
  r.bytes.resize(values.size() * sizeof(V));
  if (!values.empty()) std::memcpy(r.bytes.data(), values.data(), r.bytes.size());
  return r;
}

RawTensor make_i64(std::string name, std::vector<std::int64_t> values) {
  const auto n = static_cast<std::uint32_t>(values.size());
  return make_raw<std::int64_t>(std::move(name), {n}, values);
}

template <typename T>
RawTensor make_tensor(const std::string& name, const Tensor<T>& t) {
  const Shape& s = t.shape();
  return make_raw<T>(name,
                     {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
                      static_cast<std::uint32_t>(s.w)},
                     t.data());
}

template <typename V>
std::vector<V> values_of(const RawTensor& r) {
  if (r.dtype != dtype_of<V>()) throw IncompatibleError("checkpoint entry '" + r.name + "' has an unexpected element type");
  std::vector<V> out(r.bytes.size() / sizeof(V));
  if (!out.empty()) std::memcpy(out.data(), r.bytes.data(), r.bytes.size());
  return out;
}

const RawTensor* find_entry(const std::vector<RawTensor>& tensors, std::string_view name) {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::int64_t meta_scalar(const std::vector<RawTensor>& tensors, const std::string& name) {
  const RawTensor* r = find_entry(tensors, name);
  if (r == nullptr) throw LoadError(name, "metadata entry missing");
  auto v = values_of<std::int64_t>(*r);
  if (v.size() != 1) throw LoadError(name, "metadata entry must hold one value");
  return v[0];
}

template <typename T>
std::vector<RawTensor> state_entries(StateRefs<T> refs) {
  std::vector<RawTensor> out;
  for (auto* p : refs.params) out.push_back(make_tensor(p->name, p->value));
  for (auto* bn : refs.norms) {
    out.push_back(make_tensor(bn->name() + ".running_mean", bn->state().running_mean));
    out.push_back(make_tensor(bn->name() + ".running_var", bn->state().running_var));
    out.push_back(make_i64(bn->name() + ".tracked", {bn->state().initialized ? 1 : 0}));
  }
  return out;
}

std::vector<RawTensor> meta_entries(const CheckpointMeta& meta) {
  const auto& b = meta.config.backbone;
  std::vector<std::int64_t> channels(b.stage_channels.begin(), b.stage_channels.end());
  std::vector<RawTensor> out;
  out.push_back(make_i64("meta.kind", {static_cast<std::int64_t>(meta.kind)}));
  out.push_back(make_i64("meta.stage_count", {b.stage_count}));
  out.push_back(make_i64("meta.stage_channels", channels));
  out.push_back(make_i64("meta.in_channels", {b.in_channels}));
  out.push_back(make_i64("meta.height", {b.height}));
  out.push_back(make_i64("meta.width", {b.width}));
  out.push_back(make_i64("meta.blocks_per_stage", {b.blocks_per_stage}));
  out.push_back(make_i64("meta.num_classes", {b.num_classes}));
  out.push_back(make_i64("meta.global_depth", {meta.config.global.depth}));
  out.push_back(make_i64("meta.global_base_channels", {meta.config.global.base_channels}));
  out.push_back(make_i64("meta.se_reduction", {meta.config.se_reduction}));
  out.push_back(make_i64("meta.epoch", {meta.epoch}));
  out.push_back(make_i64("meta.seed", {std::bit_cast<std::int64_t>(meta.seed)}));
  out.push_back(make_i64("meta.config_digest", {std::bit_cast<std::int64_t>(meta.config_digest)}));
  return out;
}

template <typename T>
std::vector<RawTensor> adam_entries(const AdamState<T>& adam) {
  std::vector<RawTensor> out;
  const std::vector<double> hp{adam.lr, adam.beta1, adam.beta2, adam.eps};
  out.push_back(make_raw<double>("adam.hparams", {4}, hp));
  out.push_back(make_i64("adam.t", {adam.t()}));
  for (const auto& [name, m] : adam.moments()) {
    const auto n = static_cast<std::uint32_t>(m.m.size());
    out.push_back(make_raw<T>("adam.m." + name, {n}, m.m));
    out.push_back(make_raw<T>("adam.v." + name, {n}, m.v));
    out.push_back(make_i64("adam.steps." + name, {m.steps}));
  }
  return out;
}

template <typename T>
AdamState<T> read_adam(const std::vector<RawTensor>& tensors) {
  const RawTensor* hp = find_entry(tensors, "adam.hparams");
  auto h = values_of<double>(*hp);
  if (h.size() != 4) throw LoadError("adam.hparams", "expected 4 values");
  AdamState<T> adam(h[0], h[1], h[2], h[3]);
  adam.set_t(meta_scalar(tensors, "adam.t"));
  const std::string prefix = "adam.m.";
  for (const auto& r : tensors) {
    if (r.name.rfind(prefix, 0) != 0) continue;
    const std::string name = r.name.substr(prefix.size());
    auto& m = adam.moments()[name];
    m.m = values_of<T>(r);
    const RawTensor* v = find_entry(tensors, "adam.v." + name);
    if (v == nullptr) throw LoadError("adam.v." + name, "optimizer entry missing");
    m.v = values_of<T>(*v);
    m.steps = meta_scalar(tensors, "adam.steps." + name);
  }
  return adam;
}

}  // namespace

std::size_t RawTensor::numel() const {
  std::size_t n = 1;
  for (auto e : extents) n *= e;
  return n;
}

std::string_view to_string(CheckpointKind k) {
  switch (k) {
    case CheckpointKind::plain:
      return "plain";
    case CheckpointKind::se:
      return "se";
    case CheckpointKind::medusa:
      return "medusa";
    case CheckpointKind::global_module:
      return "global-module";
  }
  return "unknown";
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> encode_checkpoint(const std::vector<RawTensor>& tensors) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.bytes.size() != t.numel() * dtype_size(t.dtype)) {
      throw DimensionError("checkpoint entry '" + t.name + "' payload does not match its extents");
    }
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(static_cast<std::uint8_t>(t.dtype));
    put_u32(out, static_cast<std::uint32_t>(t.extents.size()));
    for (auto e : t.extents) put_u32(out, e);
    out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  }
  put_u32(out, crc_of(out.data(), out.size()));
  return out;
}

std::vector<RawTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes.data(), bytes.size());
  const std::uint8_t* magic = in.take(sizeof kCheckpointMagic, "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof kCheckpointMagic) != 0) throw LoadError("magic", "not a MEDUSACP file");
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw LoadError("version", "unsupported format version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32("tensor_count");
  std::vector<RawTensor> out;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string at = "tensor[" + std::to_string(i) + "]";
    RawTensor t;
    const std::uint32_t len = in.u32(at + ".name_length");
    const std::uint8_t* name = in.take(len, at + ".name");
    t.name.assign(reinterpret_cast<const char*>(name), len);
    if (!seen.insert(t.name).second) throw LoadError(at + ".name", "duplicate entry '" + t.name + "'");
    const std::uint8_t code = *in.take(1, at + ".dtype");
    if (code < 1 || code > 3) throw LoadError(at + ".dtype", "unknown dtype code " + std::to_string(code));
    t.dtype = static_cast<DType>(code);
    const std::uint32_t rank = in.u32(at + ".rank");
    if (rank > 8) throw LoadError(at + ".rank", "rank " + std::to_string(rank) + " out of range");
    std::uint64_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.extents.push_back(in.u32(at + ".extents"));
      numel *= t.extents.back();
      if (numel > bytes.size()) throw LoadError(at + ".extents", "extents exceed the file size");
    }
    const std::uint8_t* data = in.take(numel * dtype_size(t.dtype), at + ".data");
    t.bytes.assign(data, data + numel * dtype_size(t.dtype));
    out.push_back(std::move(t));
  }
  const std::size_t body = bytes.size() - in.remaining();
  const std::uint32_t stored = in.u32("crc");
  if (in.remaining() != 0) throw LoadError("crc", "trailing bytes after the checksum");
  if (stored != crc_of(bytes.data(), body)) throw LoadError("crc", "checksum mismatch");
  return out;
}

void write_checkpoint_file(const std::filesystem::path& path, const std::vector<RawTensor>& tensors) {
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<RawTensor> read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

CheckpointMeta read_checkpoint_meta(const std::vector<RawTensor>& tensors) {
  CheckpointMeta meta;
  const std::int64_t kind = meta_scalar(tensors, "meta.kind");
  if (kind < 0 || kind > 3) throw LoadError("meta.kind", "unknown checkpoint kind");
  meta.kind = static_cast<CheckpointKind>(kind);
  auto& b = meta.config.backbone;
  b.stage_count = static_cast<int>(meta_scalar(tensors, "meta.stage_count"));
  const RawTensor* ch = find_entry(tensors, "meta.stage_channels");
  if (ch == nullptr) throw LoadError("meta.stage_channels", "metadata entry missing");
  b.stage_channels.clear();
  for (auto c : values_of<std::int64_t>(*ch)) b.stage_channels.push_back(static_cast<int>(c));
  b.in_channels = static_cast<int>(meta_scalar(tensors, "meta.in_channels"));
  b.height = static_cast<int>(meta_scalar(tensors, "meta.height"));
  b.width = static_cast<int>(meta_scalar(tensors, "meta.width"));
  b.blocks_per_stage = static_cast<int>(meta_scalar(tensors, "meta.blocks_per_stage"));
  b.num_classes = static_cast<int>(meta_scalar(tensors, "meta.num_classes"));
  meta.config.global.depth = static_cast<int>(meta_scalar(tensors, "meta.global_depth"));
  meta.config.global.base_channels = static_cast<int>(meta_scalar(tensors, "meta.global_base_channels"));
  meta.config.se_reduction = static_cast<int>(meta_scalar(tensors, "meta.se_reduction"));
  meta.epoch = meta_scalar(tensors, "meta.epoch");
  meta.seed = std::bit_cast<std::uint64_t>(meta_scalar(tensors, "meta.seed"));
  meta.config_digest = std::bit_cast<std::uint64_t>(meta_scalar(tensors, "meta.config_digest"));
  try {
    b.validate();
  } catch (const ConfigError& e) {
    throw LoadError("meta", e.what());
  }
  return meta;
}

template <typename T>
void load_state(StateRefs<T> refs, const std::vector<RawTensor>& tensors) {
  struct Target {
    std::span<T> dst;
    const RawTensor* src;
  };
  std::vector<Target> targets;
  std::vector<std::string> missing;
  std::vector<std::pair<BatchNorm<T>*, bool>> tracked;
  auto want = [&](const std::string& name, Tensor<T>& t) {
    const RawTensor* r = find_entry(tensors, name);
    if (r == nullptr) {
      missing.push_back(name);
      return;
    }
    if (r->dtype != dtype_of<T>()) throw IncompatibleError("checkpoint entry '" + name + "' has a different element type");
    const Shape& s = t.shape();
    const std::vector<std::uint32_t> expect{static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                                            static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
    if (r->extents != expect) throw IncompatibleError("checkpoint entry '" + name + "' has shape mismatch, model expects " + s.str());
    targets.push_back({t.mutable_data(), r});
  };
  for (auto* p : refs.params) want(p->name, p->value);
  for (auto* bn : refs.norms) {
    want(bn->name() + ".running_mean", bn->state().running_mean);
    want(bn->name() + ".running_var", bn->state().running_var);
    const RawTensor* flag = find_entry(tensors, bn->name() + ".tracked");
    if (flag == nullptr) {
      missing.push_back(bn->name() + ".tracked");
    } else {
      auto v = values_of<std::int64_t>(*flag);
      if (v.size() != 1) throw LoadError(flag->name, "expected one value");
      tracked.emplace_back(bn, v[0] != 0);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 8; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 8) list += ", ... (" + std::to_string(missing.size()) + " total)";
    throw IncompatibleError("component mismatch: checkpoint lacks " + list, missing);
  }
  for (auto& t : targets) std::memcpy(t.dst.data(), t.src->bytes.data(), t.src->bytes.size());
  for (auto& [bn, on] : tracked) bn->state().initialized = on;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, ModelBundle<T>& bundle, const CheckpointMeta& meta,
                     const AdamState<T>* adam) {
  CheckpointMeta m = meta;
  m.kind = static_cast<CheckpointKind>(bundle.variant);
  m.config = bundle.config;
  std::vector<RawTensor> tensors = meta_entries(m);
  auto state = state_entries(bundle.refs());
  tensors.insert(tensors.end(), std::make_move_iterator(state.begin()), std::make_move_iterator(state.end()));
  if (adam != nullptr) {
    auto opt = adam_entries(*adam);
    tensors.insert(tensors.end(), std::make_move_iterator(opt.begin()), std::make_move_iterator(opt.end()));
  }
  write_checkpoint_file(path, tensors);
}

template <typename T>
void save_global_checkpoint(const std::filesystem::path& path, GlobalAttention<T>& module, const CheckpointMeta& meta) {
  CheckpointMeta m = meta;
  m.kind = CheckpointKind::global_module;
  m.config.global = module.config();
  std::vector<RawTensor> tensors = meta_entries(m);
  StateRefs<T> refs;
  module.collect(refs);
  auto state = state_entries(refs);
  tensors.insert(tensors.end(), std::make_move_iterator(state.begin()), std::make_move_iterator(state.end()));
  write_checkpoint_file(path, tensors);
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const auto tensors = read_checkpoint_file(path);
  LoadedCheckpoint<T> out;
  out.meta = read_checkpoint_meta(tensors);
  if (out.meta.kind == CheckpointKind::global_module) {
    throw IncompatibleError("checkpoint " + path.string() + " holds only a pretrained global module, not a model");
  }
  out.bundle = build_variant<T>(static_cast<Variant>(out.meta.kind), out.meta.config, out.meta.seed);
  load_state(out.bundle.refs(), tensors);
  if (find_entry(tensors, "adam.hparams") != nullptr) out.adam = read_adam<T>(tensors);
  return out;
}

template <typename T>
void load_global_module(ModelBundle<T>& bundle, const std::filesystem::path& path) {
  if (!bundle.global) throw IncompatibleError("bundle has no global attention module to initialize");
  const auto tensors = read_checkpoint_file(path);
  const CheckpointMeta meta = read_checkpoint_meta(tensors);
  if (meta.kind != CheckpointKind::global_module && meta.kind != CheckpointKind::medusa) {
    throw IncompatibleError("checkpoint " + path.string() + " (" + std::string(to_string(meta.kind)) +
                            ") carries no global attention module");
  }
  StateRefs<T> refs;
  bundle.global->collect(refs);
  load_state(refs, tensors);
}

#define MEDUSA_INSTANTIATE_CHECKPOINT(T)                                                                             \
  template void load_state<T>(StateRefs<T>, const std::vector<RawTensor>&);                                         \
  template void save_checkpoint<T>(const std::filesystem::path&, ModelBundle<T>&, const CheckpointMeta&,            \
                                   const AdamState<T>*);                                                            \
  template void save_global_checkpoint<T>(const std::filesystem::path&, GlobalAttention<T>&, const CheckpointMeta&); \
  template LoadedCheckpoint<T> load_checkpoint<T>(const std::filesystem::path&);                                    \
  template void load_global_module<T>(ModelBundle<T>&, const std::filesystem::path&);

MEDUSA_INSTANTIATE_CHECKPOINT(float)
MEDUSA_INSTANTIATE_CHECKPOINT(double)

}  // namespace medusa
