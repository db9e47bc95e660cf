#pragma once

#include <memory>

#include "tensor.hpp"

namespace ffabic {

struct WindowSpec {
    int h = 1;
    int w = 1;
};

struct PadInfo {
    int c = 0, h = 0, w = 0;    // original dims
    int ph = 0, pw = 0;         // padded dims (multiples of the window)
    WindowSpec win;
    int count() const { return (ph / win.h) * (pw / win.w); }
};

// Gather map from [n, C, wh, ww] window layout back into the zero-padded
// [C, ph, pw] plane: map[dst] = source index into the unpadded [C,H,W]
// tensor, or -1 where the destination is padding.
std::shared_ptr<const std::vector<int64_t>> window_partition_map(const PadInfo& info);
// Inverse map, [C,H,W] -> index into the window tensor (always valid).
std::shared_ptr<const std::vector<int64_t>> window_merge_map(const PadInfo& info);

PadInfo make_pad_info(int c, int h, int w, WindowSpec win);

// Tiles x into non-overlapping windows in row-major order, zero-padding the
// bottom/right edge up to a multiple of the window size.
template <typename T>
std::pair<TensorT<T>, PadInfo> window_partition(const TensorT<T>& x, WindowSpec win);

// Exact inverse of window_partition including the padding crop.
template <typename T>
TensorT<T> window_merge(const TensorT<T>& windows, const PadInfo& info);

}  // namespace ffabic
