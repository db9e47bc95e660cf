#pragma once

#include <functional>
#include <memory>

#include "tensor.hpp"

namespace ffabic {

// Reverse-mode tape. Every op appends a node holding the forward value and a
// backward closure; node creation order is a valid topological order, so
// backward() is a single reverse sweep. Graphs are rebuilt per step
// (define-by-run); parameters enter as leaves with needs_grad=true.
//
// Instantiated for float (training/inference) and double (gradient checks).
template <typename T>
class TapeT {
public:
    TapeT() = default;
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    int leaf(TensorT<T> value, bool needs_grad = false);

    // elementwise
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, T s);
    int add_const(int a, T c);
    int exp_(int a);
    int log_(int a);
    int tanh_(int a);
    int sigmoid_(int a);
    int softplus_(int a);
    int gelu(int a);
    int silu(int a);
    int lrelu(int a, T slope);
    int clamp_min_pt(int a, T bound);  // max(x,bound); grad passes when unclamped or pushing up

    // broadcast over the last dim (b has last dim 1, other dims equal)
    int add_bcast_last(int a, int b);
    int mul_bcast_last(int a, int b);

    // reductions
    int sum(int a);
    int mean_all(int a);
    int mse(int a, int b);

    // shape
    int reshape(int a, std::vector<int> shape);
    int slice_ch(int a, int c0, int c1);
    int concat_ch(const std::vector<int>& parts);
    // map[dst] = src index or -1 for zero fill; backward scatter-adds
    int gather(int a, std::shared_ptr<const std::vector<int64_t>> map, std::vector<int> out_shape);

    // linear algebra
    int bmm(int a, int b, bool ta = false, bool tb = false);  // [B,m,k]x[B,k,n]
    int conv2d(int x, int w, int b, int stride, int pad);     // x [Cin,H,W], w [Cout,Cin,kh,kw]
    int softmax_lastdim(int a);
    int layernorm_ch(int x, int gamma, int beta, T eps = (T)1e-5);  // x [C,H,W], params [C]
    int avgpool2(int a);                                            // [C,H,W] -> [C,H/2,W/2]

    // codec-specific
    int quantize_ste(int x, const TensorT<T>* offset);  // round(x-off)+off, identity grad
    int freq_modulate(int x, int filt);                 // x [N,B,B], filt [B,B] (symmetrized)
    int gaussian_bits(int v, int mu, int sigma);        // per-element coding cost in bits
    // full-plane spectral distance of two [C,H,W] maps: mean squared amplitude
    // difference plus unit-phasor phase distance, bins where both sides are
    // near-zero excluded from the phase term
    int freq_loss(int a, int b);

    void backward(int root);

    const TensorT<T>& val(int id) const { return nodes_[(size_t)id].val; }
    const TensorT<T>& grad(int id) const { return nodes_[(size_t)id].grad; }
    bool has_grad(int id) const { return nodes_[(size_t)id].grad_alloc; }
    bool needs_grad(int id) const { return nodes_[(size_t)id].needs_grad; }
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        TensorT<T> val;
        TensorT<T> grad;
        std::function<void()> back;
        bool needs_grad = false;
        bool grad_alloc = false;
    };

    TensorT<T>& grad_of(int id);
    int push(TensorT<T> val, bool needs_grad, std::function<void()> back);
    int unary_ptwise(int a, const std::function<T(T)>& f, const std::function<T(T, T)>& dfdx_of_xy);

    std::vector<Node> nodes_;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

// Plain gemm used by conv2d/bmm: C (+)= A x B, row-major, no transposes.
template <typename T>
void gemm_acc(int m, int n, int k, const T* A, const T* B, T* C);

}  // namespace ffabic
