#include "wildfire/checkpoint.hpp"

#include <limits>
#include <unordered_set>

#include "wildfire/io.hpp"

namespace wildfire {

namespace {
constexpr std::string_view kMagic = "PYC1";
}

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, value] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(value.rank()));
    for (Index e : value.shape()) w.u32(static_cast<std::uint32_t>(e));
    w.f32s(value.data());
  }
  return w.take();
}

std::vector<NamedTensor> decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.bytes(4, "magic") != kMagic) r.fail_at("bad checkpoint magic", 0);
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32("version"); v != kCheckpointVersion) {
    r.fail_at("unsupported checkpoint version " + std::to_string(v), version_at);
  }
  const std::uint32_t count = r.u32("tensor count");
  std::vector<NamedTensor> out;
  std::unordered_set<std::string> seen;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::size_t start = r.offset();
    const std::uint32_t len = r.u32("name length");
    std::string name(r.bytes(len, "name"));
    if (!seen.insert(name).second) r.fail_at("duplicate tensor name '" + name + "'", start);
    const std::size_t rank_at = r.offset();
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) r.fail_at("implausible rank " + std::to_string(rank), rank_at);
    Shape shape;
    std::uint64_t total = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::size_t at = r.offset();
      const std::uint32_t e = r.u32("extent");
      if (e == 0) r.fail_at("zero extent", at);
      total *= e;
      if (total * sizeof(float) > r.remaining()) r.fail_at("tensor '" + name + "' exceeds file", at);
      shape.push_back(e);
    }
    Tensor value(shape);
    r.f32s(value.data(), "tensor data");
    out.push_back({std::move(name), std::move(value)});
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last tensor");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  write_file_atomic(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace wildfire
