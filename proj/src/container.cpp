#include "container.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <zlib.h>

namespace voxsynth {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'V', 'X', 'S', '1'};

// Exact names, and prefixes that must be followed by a non-empty suffix.
constexpr std::string_view kExact[] = {
    "codec.config", "codec.extents", "codec.enc1_w", "codec.enc1_b", "codec.enc2_w", "codec.enc2_b",
    "codec.dec1_w", "codec.dec1_b",  "codec.dec2_w", "codec.dec2_b", "codec.codebook", "codec.loss",
    "codec.recon",  "glm.P",         "glm.meta",     "rcodes.grid",  "rcodes.tokens", "latents",
    "metadata",     "volumes",       "volumes.extents", "denoiser.loss", "denoiser.partition",
};
constexpr std::string_view kPrefixes[] = {"denoiser.state.", "denoiser.shape."};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw ContainerError("container: truncated at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(std::span<const std::uint8_t> bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    c = crc32(c, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

bool is_registered_section(std::string_view name) {
  if (std::find(std::begin(kExact), std::end(kExact), name) != std::end(kExact)) return true;
  for (auto p : kPrefixes)
    if (name.size() > p.size() && name.substr(0, p.size()) == p) return true;
  return false;
}

Section& Container::slot(std::string name) {
  if (!is_registered_section(name)) throw ContainerError("container: unknown section '" + name + "'");
  Section fresh;
  fresh.name = std::move(name);
  for (auto& s : sections_)
    if (s.name == fresh.name) return s = std::move(fresh);
  sections_.push_back(std::move(fresh));
  return sections_.back();
}

void Container::put(std::string name, std::vector<double> values) {
  Section& s = slot(std::move(name));
  s.dtype = Dtype::f64;
  s.f64 = std::move(values);
}

void Container::put(std::string name, std::vector<std::uint32_t> values) {
  Section& s = slot(std::move(name));
  s.dtype = Dtype::u32;
  s.u32 = std::move(values);
}

bool Container::has(std::string_view name) const {
  return std::any_of(sections_.begin(), sections_.end(), [&](const Section& s) { return s.name == name; });
}

const Section& Container::get(std::string_view name) const {
  for (const auto& s : sections_)
    if (s.name == name) return s;
  throw ContainerError("container: missing section '" + std::string(name) + "'");
}

const std::vector<double>& Container::f64(std::string_view name) const {
  const Section& s = get(name);
  if (s.dtype != Dtype::f64) throw ContainerError("container: section '" + s.name + "' is not f64");
  return s.f64;
}

const std::vector<std::uint32_t>& Container::u32(std::string_view name) const {
  const Section& s = get(name);
  if (s.dtype != Dtype::u32) throw ContainerError("container: section '" + s.name + "' is not u32");
  return s.u32;
}

std::vector<std::uint8_t> Container::to_bytes() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint16_t>(out, kContainerVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(sections_.size()));
  const std::size_t body = out.size();
  for (const auto& s : sections_) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
    out.insert(out.end(), s.name.begin(), s.name.end());
    out.push_back(static_cast<std::uint8_t>(s.dtype));
    put_le<std::uint64_t>(out, s.count());
    if (s.dtype == Dtype::f64)
      for (double v : s.f64) put_le(out, v);
    else
      for (std::uint32_t v : s.u32) put_le(out, v);
  }
  put_le<std::uint32_t>(out, crc(std::span(out).subspan(body)));
  return out;
}

Container Container::from_bytes(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw ContainerError("container: bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kContainerVersion)
    throw ContainerError("container: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  const std::size_t body = r.pos();
  if (bytes.size() < body + 4) throw ContainerError("container: truncated");
  const auto stored = [&] {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + bytes.size() - 4, 4);
    return v;
  }();
  if (crc(bytes.subspan(body, bytes.size() - 4 - body)) != stored) throw ContainerError("container: CRC mismatch");

  Container c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    const auto nb = r.bytes(len);
    std::string name(nb.begin(), nb.end());
    if (!is_registered_section(name)) throw ContainerError("container: unknown section '" + name + "'");
    if (c.has(name)) throw ContainerError("container: duplicate section '" + name + "'");
    const auto dtype = r.get<std::uint8_t>();
    const auto n = r.get<std::uint64_t>();
    if (dtype == static_cast<std::uint8_t>(Dtype::f64)) {
      if (n > bytes.size() / 8) throw ContainerError("container: section '" + name + "' overruns the file");
      std::vector<double> v(n);
      for (auto& x : v) x = r.get<double>();
      c.put(std::move(name), std::move(v));
    } else if (dtype == static_cast<std::uint8_t>(Dtype::u32)) {
      if (n > bytes.size() / 4) throw ContainerError("container: section '" + name + "' overruns the file");
      std::vector<std::uint32_t> v(n);
      for (auto& x : v) x = r.get<std::uint32_t>();
      c.put(std::move(name), std::move(v));
    } else {
      throw ContainerError("container: section '" + name + "' has unknown dtype " + std::to_string(dtype));
    }
  }
  if (r.pos() != bytes.size() - 4) throw ContainerError("container: trailing bytes before CRC");
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  const auto bytes = to_bytes();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ContainerError("container: cannot write " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ContainerError("container: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContainerError("container: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return from_bytes(bytes);
  } catch (const ContainerError& e) {
    throw ContainerError(std::string(e.what()) + " (" + path.string() + ")");
  }
}

}  // namespace voxsynth
