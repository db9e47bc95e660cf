#include "losses.hpp"

#include "errors.hpp"

namespace ffabic {

void LossWeights::validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0)
        throw config_error("loss weights must be nonnegative");
    if (lambda1 == 0 && lambda2 == 0 && lambda3 == 0 && lambda4 == 0)
        throw config_error("at least one loss weight must be positive");
}

template <typename T>
int rate_loss(GraphT<T>& g, int bits_y, int bits_z, int64_t pixels) {
    if (pixels <= 0) throw contract_error("rate_loss: pixel count must be positive");
    return g.tape.scale(g.tape.add(bits_y, bits_z), (T)(1.0 / (double)pixels));
}

template <typename T>
int spatial_loss(GraphT<T>& g, int z_c, int target) {
    return g.tape.mse(z_c, target);
}

template <typename T>
int frequency_loss(GraphT<T>& g, int z_c, int target) {
    return g.tape.freq_loss(z_c, target);
}

template <typename T>
int combine_losses(GraphT<T>& g, LossTerms& t, const LossWeights& w) {
    w.validate();
    auto& tp = g.tape;
    int acc = -1;
    auto take = [&](int term, double lambda) {
        if (term < 0) return;
        int piece = tp.scale(term, (T)lambda);
        acc = acc < 0 ? piece : tp.add(acc, piece);
    };
    take(t.rate, w.lambda1);
    take(t.spatial, w.lambda2);
    take(t.frequency, w.lambda3);
    take(t.noise, w.lambda4);
    if (acc < 0) throw contract_error("combine_losses: no loss terms present");
    t.total = acc;
    return acc;
}

template int rate_loss<float>(GraphT<float>&, int, int, int64_t);
template int rate_loss<double>(GraphT<double>&, int, int, int64_t);
template int spatial_loss<float>(GraphT<float>&, int, int);
template int spatial_loss<double>(GraphT<double>&, int, int);
template int frequency_loss<float>(GraphT<float>&, int, int);
template int frequency_loss<double>(GraphT<double>&, int, int);
template int combine_losses<float>(GraphT<float>&, LossTerms&, const LossWeights&);
template int combine_losses<double>(GraphT<double>&, LossTerms&, const LossWeights&);

}  // namespace ffabic
