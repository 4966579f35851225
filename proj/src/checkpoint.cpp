#include "tsaug/checkpoint.hpp"

#include <set>

#include "tsaug/binary_io.hpp"

namespace tsaug {

std::string_view to_string(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::stateless: return "stateless";
    case ModelKind::recursive: return "recursive";
    case ModelKind::cnn: return "cnn";
    case ModelKind::cnn_attention: return "cnn-att";
    case ModelKind::talstm: return "talstm";
  }
  return "unknown";
}

ModelKind model_kind_from_string(std::string_view name) {
  for (auto k : {ModelKind::stateless, ModelKind::recursive, ModelKind::cnn, ModelKind::cnn_attention,
                 ModelKind::talstm}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "'");
}

const Matrix& TsafContainer::tensor(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw FormatError("TSAF: missing tensor '" + std::string(name) + "'");
}

std::string encode_tsaf(const TsafContainer& c) {
  ByteWriter w;
  w.raw("TSAF");
  w.u32(kTsafVersion);
  w.u8(static_cast<std::uint8_t>(c.kind));
  w.str(c.config_json);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rows()));
    w.u32(static_cast<std::uint32_t>(t.value.cols()));
    for (double v : t.value.values()) w.f64(v);
  }
  return w.take();
}

TsafContainer decode_tsaf(std::string_view bytes) {
  ByteReader rd(bytes, "TSAF");
  if (bytes.size() < 4 || rd.raw(4) != "TSAF") throw FormatError("TSAF: bad magic");
  const auto version = rd.u32();
  if (version != kTsafVersion) throw FormatError("TSAF: unsupported version " + std::to_string(version));
  const auto mode = rd.u8();
  if (mode > static_cast<std::uint8_t>(ModelKind::talstm)) {
    throw FormatError("TSAF: unknown mode byte " + std::to_string(mode));
  }
  TsafContainer c;
  c.kind = static_cast<ModelKind>(mode);
  c.config_json = rd.str();
  const auto count = rd.u32();
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = rd.str();
    if (!names.insert(t.name).second) throw FormatError("TSAF: duplicate tensor '" + t.name + "'");
    const std::size_t rows = rd.u32();
    const std::size_t cols = rd.u32();
    rd.require(static_cast<std::uint64_t>(rows) * cols * 8, "tensor '" + t.name + "'");
    t.value = Matrix(rows, cols);
    for (double& v : t.value.values()) v = rd.f64();
    c.tensors.push_back(std::move(t));
  }
  if (!rd.at_end()) throw FormatError("TSAF: " + std::to_string(rd.remaining()) + " trailing bytes");
  return c;
}

void save_tsaf(const TsafContainer& c, const std::filesystem::path& path) { write_file(path, encode_tsaf(c)); }

TsafContainer load_tsaf(const std::filesystem::path& path) { return decode_tsaf(read_file(path)); }

void restore_tensor(const TsafContainer& c, const TensorRef& dst) {
  const Matrix& src = c.tensor(dst.name);
  if (!src.same_shape(*dst.value)) {
    throw FormatError("TSAF: tensor '" + dst.name + "' has shape " + src.shape_string() + ", model expects " +
                      dst.value->shape_string());
  }
  *dst.value = src;
}

}  // namespace tsaug
