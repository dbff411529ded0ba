#include "dmt/weights.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>

namespace dmt {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'T', 'W'};
constexpr std::uint32_t kVersion = 1;

static_assert(sizeof(double) == 8, "64-bit IEEE doubles required");

// The container is defined little-endian; this code targets little-endian
// hosts and refuses to guess elsewhere.
bool host_is_little_endian() {
  const std::uint32_t probe = 1;
  unsigned char b[4];
  std::memcpy(b, &probe, 4);
  return b[0] == 1;
}

struct File {
  std::FILE* f = nullptr;
  explicit File(std::FILE* f_) : f(f_) {}
  ~File() {
    if (f) std::fclose(f);
  }
  File(const File&) = delete;
  File& operator=(const File&) = delete;
};

void write_u32(std::FILE* f, std::uint32_t v) {
  if (std::fwrite(&v, 4, 1, f) != 1) fail_data("weights: short write");
}

bool read_u32(std::FILE* f, std::uint32_t& v) { return std::fread(&v, 4, 1, f) == 1; }

void write_tensor(std::FILE* f, const std::string& name, const std::vector<int>& shape,
                  const double* data, size_t count) {
  write_u32(f, static_cast<std::uint32_t>(name.size()));
  if (!name.empty() && std::fwrite(name.data(), 1, name.size(), f) != name.size())
    fail_data("weights: short write");
  write_u32(f, static_cast<std::uint32_t>(shape.size()));
  size_t prod = 1;
  for (int d : shape) {
    write_u32(f, static_cast<std::uint32_t>(d));
    prod *= static_cast<size_t>(d);
  }
  if (prod != count) fail_data("weights: shape/count mismatch for " + name);
  if (count > 0 && std::fwrite(data, 8, count, f) != count) fail_data("weights: short write");
}

}  // namespace

void save_weights(const std::string& path, const std::vector<TensorRef>& tensors,
                  const TensorMap& extra) {
  if (!host_is_little_endian()) fail_data("weights: little-endian host required");
  File file(std::fopen(path.c_str(), "wb"));
  if (!file.f) fail_data("weights: cannot open for writing: " + path);
  if (std::fwrite(kMagic, 1, 4, file.f) != 4) fail_data("weights: short write");
  write_u32(file.f, kVersion);
  for (const TensorRef& t : tensors) write_tensor(file.f, t.name, t.shape, t.p, t.count);
  for (const auto& [name, t] : extra) write_tensor(file.f, name, t.shape, t.data.data(), t.data.size());
  if (std::fflush(file.f) != 0) fail_data("weights: flush failed: " + path);
}

TensorMap load_weights(const std::string& path) {
  if (!host_is_little_endian()) fail_data("weights: little-endian host required");
  File file(std::fopen(path.c_str(), "rb"));
  if (!file.f) fail_data("weights: cannot open: " + path);
  char magic[4];
  if (std::fread(magic, 1, 4, file.f) != 4 || std::memcmp(magic, kMagic, 4) != 0)
    fail_data("weights: bad magic in " + path);
  std::uint32_t version = 0;
  if (!read_u32(file.f, version) || version != kVersion)
    fail_data("weights: unsupported version in " + path);

  TensorMap out;
  std::uint32_t name_len = 0;
  while (read_u32(file.f, name_len)) {
    std::string name(name_len, '\0');
    if (name_len > 0 && std::fread(name.data(), 1, name_len, file.f) != name_len)
      fail_data("weights: truncated tensor name in " + path);
    std::uint32_t ndims = 0;
    if (!read_u32(file.f, ndims)) fail_data("weights: truncated record in " + path);
    NamedTensor t;
    size_t prod = 1;
    for (std::uint32_t i = 0; i < ndims; ++i) {
      std::uint32_t d = 0;
      if (!read_u32(file.f, d)) fail_data("weights: truncated shape in " + path);
      t.shape.push_back(static_cast<int>(d));
      prod *= d;
    }
    t.data.resize(prod);
    if (prod > 0 && std::fread(t.data.data(), 8, prod, file.f) != prod)
      fail_data("weights: truncated data for " + name + " in " + path);
    if (out.count(name)) fail_data("weights: duplicate tensor " + name + " in " + path);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

std::vector<std::string> assign_weights(const TensorMap& loaded, std::vector<TensorRef>& refs) {
  std::vector<std::string> used;
  for (TensorRef& ref : refs) {
    auto it = loaded.find(ref.name);
    if (it == loaded.end()) fail_data("weights: missing tensor " + ref.name);
    if (it->second.shape != ref.shape || it->second.data.size() != ref.count)
      fail_data("weights: shape mismatch for " + ref.name);
    std::memcpy(ref.p, it->second.data.data(), ref.count * 8);
    used.push_back(ref.name);
  }
  return used;
}

}  // namespace dmt
