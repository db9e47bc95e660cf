#include "window.hpp"

#include <map>
#include <mutex>
#include <tuple>

namespace ffabic {

namespace {

// Maps are pure functions of (C,H,W,win); cache them since graph building
// requests the same geometry every step.
using MapKey = std::tuple<int, int, int, int, int, bool>;
std::map<MapKey, std::shared_ptr<const std::vector<int64_t>>> g_map_cache;
std::mutex g_map_mutex;

std::shared_ptr<const std::vector<int64_t>> cached(const MapKey& key,
                                                   std::vector<int64_t> (*build)(const PadInfo&),
                                                   const PadInfo& info) {
    std::lock_guard<std::mutex> lock(g_map_mutex);
    auto it = g_map_cache.find(key);
    if (it != g_map_cache.end()) return it->second;
    auto ptr = std::make_shared<const std::vector<int64_t>>(build(info));
    g_map_cache.emplace(key, ptr);
    return ptr;
}

std::vector<int64_t> build_partition(const PadInfo& in) {
    const int wh = in.win.h, ww = in.win.w;
    const int nx = in.pw / ww, ny = in.ph / wh;
    std::vector<int64_t> map((size_t)in.count() * in.c * wh * ww);
    int64_t dst = 0;
    for (int wy = 0; wy < ny; ++wy)
        for (int wx = 0; wx < nx; ++wx)
            for (int c = 0; c < in.c; ++c)
                for (int iy = 0; iy < wh; ++iy)
                    for (int ix = 0; ix < ww; ++ix) {
                        const int y = wy * wh + iy, x = wx * ww + ix;
                        map[(size_t)dst++] =
                            (y < in.h && x < in.w) ? ((int64_t)c * in.h + y) * in.w + x : -1;
                    }
    return map;
}

std::vector<int64_t> build_merge(const PadInfo& in) {
    const int wh = in.win.h, ww = in.win.w;
    const int nx = in.pw / ww;
    std::vector<int64_t> map((size_t)in.c * in.h * in.w);
    const int64_t win_elems = (int64_t)in.c * wh * ww;
    for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x) {
                const int wy = y / wh, wx = x / ww;
                const int iy = y % wh, ix = x % ww;
                const int64_t widx = (int64_t)wy * nx + wx;
                map[((size_t)c * in.h + y) * in.w + x] =
                    widx * win_elems + ((int64_t)c * wh + iy) * ww + ix;
            }
    return map;
}

}  // namespace

PadInfo make_pad_info(int c, int h, int w, WindowSpec win) {
    if (c < 1 || h < 1 || w < 1) throw contract_error("window_partition: dims must be >= 1");
    if (win.h < 1 || win.w < 1) throw contract_error("window spec must be >= 1");
    PadInfo info;
    info.c = c;
    info.h = h;
    info.w = w;
    info.win = win;
    info.ph = (h + win.h - 1) / win.h * win.h;
    info.pw = (w + win.w - 1) / win.w * win.w;
    return info;
}

std::shared_ptr<const std::vector<int64_t>> window_partition_map(const PadInfo& info) {
    return cached({info.c, info.h, info.w, info.win.h, info.win.w, false}, build_partition, info);
}

std::shared_ptr<const std::vector<int64_t>> window_merge_map(const PadInfo& info) {
    return cached({info.c, info.h, info.w, info.win.h, info.win.w, true}, build_merge, info);
}

template <typename T>
std::pair<TensorT<T>, PadInfo> window_partition(const TensorT<T>& x, WindowSpec win) {
    if (x.ndim() != 3) throw contract_error("window_partition expects [C,H,W]");
    PadInfo info = make_pad_info(x.shape[0], x.shape[1], x.shape[2], win);
    auto map = window_partition_map(info);
    TensorT<T> out({info.count(), info.c, win.h, win.w});
    for (size_t i = 0; i < map->size(); ++i) {
        const int64_t s = (*map)[i];
        out.v[i] = s >= 0 ? x.v[(size_t)s] : T(0);
    }
    return {std::move(out), info};
}

template <typename T>
TensorT<T> window_merge(const TensorT<T>& windows, const PadInfo& info) {
    std::vector<int> expect = {info.count(), info.c, info.win.h, info.win.w};
    if (windows.shape != expect)
        throw contract_error("window_merge: windows shape " + shape_str(windows.shape) +
                             " does not match pad_info " + shape_str(expect));
    auto map = window_merge_map(info);
    TensorT<T> out({info.c, info.h, info.w});
    for (size_t i = 0; i < map->size(); ++i) out.v[i] = windows.v[(size_t)(*map)[i]];
    return out;
}

template std::pair<TensorT<float>, PadInfo> window_partition(const TensorT<float>&, WindowSpec);
template std::pair<TensorT<double>, PadInfo> window_partition(const TensorT<double>&, WindowSpec);
template TensorT<float> window_merge(const TensorT<float>&, const PadInfo&);
template TensorT<double> window_merge(const TensorT<double>&, const PadInfo&);

}  // namespace ffabic
