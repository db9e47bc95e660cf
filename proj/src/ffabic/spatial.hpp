#pragma once

#include "model.hpp"
#include "tensor.hpp"

namespace ffabic {

// Pads [C,H,W] on the bottom/right with edge replication until both spatial
// dims are multiples of `mult`. Runs outside any tape (input prep only).
Tensor pad_replicate(const Tensor& x, int mult);

// Graph ops built on gather.
template <typename T>
int up2_nearest(GraphT<T>& g, int x);  // [C,H,W] -> [C,2H,2W]
template <typename T>
int crop_hw(GraphT<T>& g, int x, int th, int tw);  // top-left crop

}  // namespace ffabic
