#pragma once

// "VXS1" binary container: little-endian typed sections with a trailing
// CRC-32 over the section bytes.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxsynth {

class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint16_t kContainerVersion = 1;

enum class Dtype : std::uint8_t { f64 = 0, u32 = 1 };

struct Section {
  std::string name;
  Dtype dtype = Dtype::f64;
  std::vector<double> f64;
  std::vector<std::uint32_t> u32;

  std::size_t count() const { return dtype == Dtype::f64 ? f64.size() : u32.size(); }
  friend bool operator==(const Section&, const Section&) = default;
};

/// True for names the format knows about.
bool is_registered_section(std::string_view name);

class Container {
 public:
  void put(std::string name, std::vector<double> values);
  void put(std::string name, std::vector<std::uint32_t> values);

  bool has(std::string_view name) const;
  const Section& get(std::string_view name) const;
  const std::vector<double>& f64(std::string_view name) const;
  const std::vector<std::uint32_t>& u32(std::string_view name) const;
  const std::vector<Section>& sections() const { return sections_; }

  std::vector<std::uint8_t> to_bytes() const;
  static Container from_bytes(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

  friend bool operator==(const Container&, const Container&) = default;

 private:
  Section& slot(std::string name);
  std::vector<Section> sections_;
};

}  // namespace voxsynth
