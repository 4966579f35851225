#pragma once

// `TSAF` model container: magic, u32 version, mode byte, length-prefixed JSON
// config, then a named-tensor table. All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tsaug/numerics.hpp"

namespace tsaug {

enum class ModelKind : std::uint8_t {
  stateless = 0,
  recursive = 1,
  cnn = 2,
  cnn_attention = 3,
  talstm = 4,
};

std::string_view to_string(ModelKind kind) noexcept;
ModelKind model_kind_from_string(std::string_view name);

inline constexpr std::uint32_t kTsafVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct TsafContainer {
  ModelKind kind = ModelKind::stateless;
  std::string config_json;
  std::vector<NamedTensor> tensors;

  /// Throws FormatError when the name is absent.
  const Matrix& tensor(std::string_view name) const;
};

std::string encode_tsaf(const TsafContainer& c);
TsafContainer decode_tsaf(std::string_view bytes);
void save_tsaf(const TsafContainer& c, const std::filesystem::path& path);
TsafContainer load_tsaf(const std::filesystem::path& path);

template <typename Model>
std::vector<NamedTensor> collect_tensors(const Model& m) {
  std::vector<NamedTensor> out;
  for (const auto& t : m.tensors()) out.push_back({t.name, *t.value});
  return out;
}

void restore_tensor(const TsafContainer& c, const TensorRef& dst);

/// Copies tensors into a model of matching layout; names and shapes must agree.
template <typename Model>
void restore_tensors(const TsafContainer& c, Model& m) {
  for (const auto& t : m.tensors()) restore_tensor(c, t);
}

}  // namespace tsaug
