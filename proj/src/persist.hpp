#pragma once

// Mapping between model objects and container sections.

#include <vector>

#include "codec.hpp"
#include "container.hpp"
#include "disentangle.hpp"
#include "maskdiff.hpp"
#include "phantom.hpp"

namespace voxsynth {

void store_codec(Container& c, const CodecParams& p);
CodecParams load_codec(const Container& c);

void store_glm(Container& c, const GLMModel& g);
GLMModel load_glm(const Container& c);

void store_rcodes(Container& c, const std::vector<RCode>& codes);
std::vector<RCode> load_rcodes(const Container& c);

void store_metadata(Container& c, const std::vector<Metadata>& m);
std::vector<Metadata> load_metadata(const Container& c);

void store_latents(Container& c, const std::vector<std::vector<double>>& latents);
/// Splits the flat section into `count` equal rows.
std::vector<std::vector<double>> load_latents(const Container& c, std::size_t count);

void store_volumes(Container& c, const std::vector<Volume>& volumes);
std::vector<Volume> load_volumes(const Container& c);

void store_denoiser(Container& c, const Denoiser& d, const SubcodePartition& part);
std::unique_ptr<Denoiser> load_denoiser(const Container& c);
SubcodePartition load_partition(const Container& c);

}  // namespace voxsynth
