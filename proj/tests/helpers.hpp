#pragma once

#include <cmath>
#include <string>

#include "fmtk/backbone.hpp"
#include "fmtk/random.hpp"

namespace testing {

inline fmtk::Tensor random_tensor(fmtk::Shape shape, std::uint64_t seed, double scale = 1.0,
                                  const std::string& stream = "test") {
  fmtk::Tensor t(std::move(shape));
  fmtk::CounterRng rng(seed, fmtk::stream_id(stream));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal(i);
  return t;
}

inline fmtk::BackboneConfig small_backbone(std::size_t layers = 2, std::size_t embed = 32) {
  fmtk::BackboneConfig c;
  c.patch_len = 16;
  c.embed_dim = embed;
  c.num_layers = layers;
  c.num_heads = 4;
  return c;
}

}  // namespace testing
