#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace ffabic {

// Procedural training image: a color gradient layered with sinusoidal
// gratings and soft shapes. Deterministic per seed; values in [0,1]. Gives
// the codec edges, textures, and smooth regions without any external data.
Tensor synth_image(uint64_t seed, int h, int w);

std::vector<Tensor> synth_dataset(uint64_t first_seed, int count, int h, int w);

}  // namespace ffabic
