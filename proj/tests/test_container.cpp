#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "persist.hpp"

using namespace voxsynth;

namespace {

Container sample_container() {
  Container c;
  c.put("latents", std::vector<double>{1.5, -0.0, 3.25e-300, 1e300});
  c.put("rcodes.tokens", std::vector<std::uint32_t>{0, 7, 4294967295u});
  c.put("metadata", std::vector<double>{});
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "voxsynth_container_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("container") {
  TEST_CASE("bytes and files round-trip") {
    const auto c = sample_container();
    const auto bytes = c.to_bytes();
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "VXS1");
    CHECK(Container::from_bytes(bytes) == c);
    CHECK(Container::from_bytes(bytes).to_bytes() == bytes);
    CHECK(c.f64("latents")[1] == 0.0);
    CHECK(std::signbit(Container::from_bytes(bytes).f64("latents")[1]));

    const auto path = scratch("roundtrip.vxs");
    c.save(path);
    CHECK(Container::load(path) == c);
    CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    CHECK_THROWS_AS(Container::load(scratch("absent.vxs")), ContainerError);
  }

  TEST_CASE("every single-byte corruption is rejected") {
    const auto bytes = sample_container().to_bytes();
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      auto bad = bytes;
      bad[i] ^= 0x5a;
      CHECK_THROWS_AS(Container::from_bytes(bad), ContainerError);
    }
    for (std::size_t n = 0; n < bytes.size(); ++n)
      CHECK_THROWS_AS(Container::from_bytes(std::span(bytes).first(n)), ContainerError);
    auto longer = bytes;
    longer.insert(longer.end() - 4, 0);
    CHECK_THROWS_AS(Container::from_bytes(longer), ContainerError);
  }

  TEST_CASE("section access is typed and names are registered") {
    auto c = sample_container();
    CHECK_THROWS_AS(c.put("no.such.section", std::vector<double>{1}), ContainerError);
    CHECK_NOTHROW(c.put("denoiser.state.tok", std::vector<double>{1}));
    CHECK(is_registered_section("denoiser.shape.tok"));
    CHECK_FALSE(is_registered_section("denoiser"));
    CHECK_THROWS_AS(c.u32("latents"), ContainerError);
    CHECK_THROWS_AS(c.f64("rcodes.tokens"), ContainerError);
    CHECK_THROWS_AS(c.get("volumes"), ContainerError);
    c.put("latents", std::vector<double>{2.0});
    CHECK(c.f64("latents") == std::vector<double>{2.0});
    CHECK(c.sections().size() == 4);
  }

  TEST_CASE("model objects survive persistence") {
    std::mt19937_64 rng(71);
    CodecConfig cfg;
    cfg.codebook_size = 8;
    cfg.latent_dim = 4;
    cfg.hidden_channels = 2;
    auto codec = CodecParams::initialize(cfg, {8, 8, 8}, 72);
    Container c;
    store_codec(c, codec);
    CHECK(load_codec(Container::from_bytes(c.to_bytes())) == codec);

    GLMModel glm;
    glm.latent_size = 5;
    glm.P = oracle::random_tensor({15}, rng).data;
    store_glm(c, glm);
    const auto g = load_glm(Container::from_bytes(c.to_bytes()));
    CHECK(g.P == glm.P);
    CHECK(g.latent_size == 5);
    CHECK(g.age_min_years == glm.age_min_years);

    std::vector<RCode> codes(3);
    for (auto& code : codes) {
      code.grid = {2, 2, 1, 3};
      for (std::size_t i = 0; i < 2 * code.cells(); ++i) code.tokens.push_back(static_cast<std::uint32_t>(rng() % 8));
    }
    store_rcodes(c, codes);
    CHECK(load_rcodes(c) == codes);

    std::vector<Metadata> meta{Metadata::from_years(20, 0), Metadata::from_years(70.5, 1)};
    store_metadata(c, meta);
    CHECK(load_metadata(c) == meta);

    std::vector<std::vector<double>> lat{oracle::random_tensor({6}, rng).data, oracle::random_tensor({6}, rng).data};
    store_latents(c, lat);
    CHECK(load_latents(c, 2) == lat);
    CHECK_THROWS(load_latents(c, 5));

    std::vector<Volume> vols{Volume({2, 3, 4}, 0.25), Volume({2, 3, 4}, 0.5)};
    vols[1].voxels[7] = 0.125;
    store_volumes(c, vols);
    CHECK(load_volumes(c) == vols);

    TabularDenoiser tab(8, 0.01);
    tab.schedule = MaskSchedule{ScheduleKind::factorial, 5};
    tab.observe(std::vector<std::vector<RCode>>{partition(codes[0], SubcodePartition::even(2, 2)),
                                                partition(codes[1], SubcodePartition::even(2, 2))});
    const auto part = SubcodePartition::even(2, 2);
    store_denoiser(c, tab, part);
    const auto back = Container::from_bytes(c.to_bytes());
    const auto loaded = load_denoiser(back);
    CHECK(loaded->kind() == "tabular");
    CHECK(loaded->schedule == tab.schedule);
    CHECK(loaded->state() == tab.state());
    CHECK(load_partition(back) == part);
    const auto sub = partition(codes[2], part)[1];
    CHECK(loaded->logits(sub, nullptr, 1, 1) == tab.logits(sub, nullptr, 1, 1));
  }
}
