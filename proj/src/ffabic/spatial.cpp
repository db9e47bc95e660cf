#include "spatial.hpp"

#include "errors.hpp"

namespace ffabic {

Tensor pad_replicate(const Tensor& x, int mult) {
    if (x.ndim() != 3) throw contract_error("pad_replicate: expected [C,H,W]");
    int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    int PH = (H + mult - 1) / mult * mult;
    int PW = (W + mult - 1) / mult * mult;
    if (PH == H && PW == W) return x;
    Tensor out({C, PH, PW});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < PH; ++y) {
            int sy = y < H ? y : H - 1;
            const float* src = x.data() + ((size_t)c * H + sy) * W;
            float* dst = out.data() + ((size_t)c * PH + y) * PW;
            for (int xw = 0; xw < PW; ++xw) dst[xw] = src[xw < W ? xw : W - 1];
        }
    return out;
}

template <typename T>
int up2_nearest(GraphT<T>& g, int x) {
    const auto& xv = g.tape.val(x);
    if (xv.ndim() != 3) throw contract_error("up2_nearest: expected [C,H,W]");
    int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    auto map = std::make_shared<std::vector<int64_t>>((size_t)C * 4 * H * W);
    size_t i = 0;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y)
            for (int xw = 0; xw < 2 * W; ++xw)
                (*map)[i++] = ((int64_t)c * H + y / 2) * W + xw / 2;
    return g.tape.gather(x, map, {C, 2 * H, 2 * W});
}

template <typename T>
int crop_hw(GraphT<T>& g, int x, int th, int tw) {
    const auto& xv = g.tape.val(x);
    if (xv.ndim() != 3) throw contract_error("crop_hw: expected [C,H,W]");
    int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    if (th > H || tw > W || th <= 0 || tw <= 0) throw contract_error("crop_hw: bad target size");
    if (th == H && tw == W) return x;
    auto map = std::make_shared<std::vector<int64_t>>((size_t)C * th * tw);
    size_t i = 0;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < th; ++y)
            for (int xw = 0; xw < tw; ++xw) (*map)[i++] = ((int64_t)c * H + y) * W + xw;
    return g.tape.gather(x, map, {C, th, tw});
}

template int up2_nearest(GraphT<float>&, int);
template int up2_nearest(GraphT<double>&, int);
template int crop_hw(GraphT<float>&, int, int, int);
template int crop_hw(GraphT<double>&, int, int, int);

}  // namespace ffabic
