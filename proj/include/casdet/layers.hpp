#pragma once
// Layer forward/backward kernels over LayerParams. Backward passes accumulate
// into the .grad slots of the params and return the input gradient.

#include <cmath>
#include <random>
#include <stdexcept>

#include "casdet/tensor.hpp"

namespace casdet {

struct LayerParams {
    Tensor kernels;  // [out_ch, in_ch, spatial...] (linear: [M, N])
    Tensor bias;     // [out_ch]
    Tensor adam_m_kernel, adam_v_kernel;
    Tensor adam_m_bias, adam_v_bias;
    long step_count = 0;

    void init_accumulators() {
        adam_m_kernel = Tensor(kernels.shape);
        adam_v_kernel = Tensor(kernels.shape);
        adam_m_bias = Tensor(bias.shape);
        adam_v_bias = Tensor(bias.shape);
        step_count = 0;
    }
    void zero_grad() {
        kernels.ensure_grad();
        bias.ensure_grad();
        kernels.zero_grad();
        bias.zero_grad();
    }
};

// Glorot-uniform weights, zero bias.
inline LayerParams make_layer(Shape kernel_shape, int fan_in, int fan_out, std::mt19937_64& rng) {
    LayerParams p;
    p.kernels = Tensor(std::move(kernel_shape));
    p.bias = Tensor({static_cast<int>(p.kernels.shape[0])});
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : p.kernels.values) w = dist(rng);
    p.init_accumulators();
    return p;
}

inline LayerParams make_conv2d(int in_ch, int out_ch, int k, std::mt19937_64& rng) {
    return make_layer({out_ch, in_ch, k, k}, in_ch * k * k, out_ch * k * k, rng);
}
inline LayerParams make_conv3d(int in_ch, int out_ch, int kd, int kh, int kw, std::mt19937_64& rng) {
    return make_layer({out_ch, in_ch, kd, kh, kw}, in_ch * kd * kh * kw, out_ch * kd * kh * kw, rng);
}
inline LayerParams make_linear(int in_dim, int out_dim, std::mt19937_64& rng) {
    return make_layer({out_dim, in_dim}, in_dim, out_dim, rng);
}

inline int conv_out_extent(int in, int kernel, int stride, int padding, const char* axis) {
    const int span = in + 2 * padding - kernel;
    if (span < 0)
        throw std::invalid_argument(std::string("kernel exceeds padded input along ") + axis);
    if (span % stride != 0)
        throw std::invalid_argument(std::string("non-integer conv output extent along ") + axis);
    return span / stride + 1;
}

// -------------------------------------------------------------------- conv2d

inline Tensor conv2d(const Tensor& input, const LayerParams& params, int stride, int padding) {
    if (input.shape.size() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W]");
    if (params.kernels.shape.size() != 4) throw std::invalid_argument("conv2d: kernels must be [C',C,kH,kW]");
    const int C = input.shape[0], H = input.shape[1], W = input.shape[2];
    const int Co = params.kernels.shape[0], Ci = params.kernels.shape[1];
    const int kH = params.kernels.shape[2], kW = params.kernels.shape[3];
    if (Ci != C) throw std::invalid_argument("conv2d: channel mismatch");
    const int Ho = conv_out_extent(H, kH, stride, padding, "H");
    const int Wo = conv_out_extent(W, kW, stride, padding, "W");

    Tensor out({Co, Ho, Wo});
    const double* in = input.values.data();
    const double* ker = params.kernels.values.data();
    double* o = out.values.data();
    for (int co = 0; co < Co; ++co) {
        const double b = params.bias.values[co];
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) o[(co * Ho + oy) * Wo + ox] = b;
        for (int ci = 0; ci < C; ++ci) {
            const double* kp = ker + ((co * C + ci) * kH) * kW;
            const double* ip = in + ci * H * W;
            for (int oy = 0; oy < Ho; ++oy) {
                const int iy0 = oy * stride - padding;
                for (int ky = 0; ky < kH; ++ky) {
                    const int iy = iy0 + ky;
                    if (iy < 0 || iy >= H) continue;
                    const double* row = ip + iy * W;
                    double* orow = o + (co * Ho + oy) * Wo;
                    for (int kx = 0; kx < kW; ++kx) {
                        const double kv = kp[ky * kW + kx];
                        if (kv == 0.0) continue;
                        const int ix0 = -padding + kx;
                        int ox_lo = 0, ox_hi = Wo;
                        // valid ox range so that ix0 + ox*stride in [0, W)
                        while (ox_lo < Wo && ix0 + ox_lo * stride < 0) ++ox_lo;
                        while (ox_hi > ox_lo && ix0 + (ox_hi - 1) * stride >= W) --ox_hi;
                        for (int ox = ox_lo; ox < ox_hi; ++ox)
                            orow[ox] += kv * row[ix0 + ox * stride];
                    }
                }
            }
        }
    }
    return out;
}

// Accumulates parameter gradients into params; returns d(loss)/d(input).
inline Tensor conv2d_backward(const Tensor& input, LayerParams& params, int stride, int padding,
                              const Tensor& grad_out) {
    const int C = input.shape[0], H = input.shape[1], W = input.shape[2];
    const int Co = params.kernels.shape[0];
    const int kH = params.kernels.shape[2], kW = params.kernels.shape[3];
    const int Ho = grad_out.shape[1], Wo = grad_out.shape[2];
    params.kernels.ensure_grad();
    params.bias.ensure_grad();

    Tensor grad_in(input.shape);
    const double* in = input.values.data();
    const double* ker = params.kernels.values.data();
    const double* go = grad_out.values.data();
    double* gi = grad_in.values.data();
    double* gk = params.kernels.grad.data();
    double* gb = params.bias.grad.data();

    for (int co = 0; co < Co; ++co) {
        const double* gop = go + co * Ho * Wo;
        double sum = 0.0;
        for (int i = 0; i < Ho * Wo; ++i) sum += gop[i];
        gb[co] += sum;
        for (int ci = 0; ci < C; ++ci) {
            const double* kp = ker + ((co * C + ci) * kH) * kW;
            double* gkp = gk + ((co * C + ci) * kH) * kW;
            const double* ip = in + ci * H * W;
            double* gip = gi + ci * H * W;
            for (int oy = 0; oy < Ho; ++oy) {
                const int iy0 = oy * stride - padding;
                for (int ky = 0; ky < kH; ++ky) {
                    const int iy = iy0 + ky;
                    if (iy < 0 || iy >= H) continue;
                    const double* irow = ip + iy * W;
                    double* girow = gip + iy * W;
                    const double* gorow = gop + oy * Wo;
                    for (int kx = 0; kx < kW; ++kx) {
                        const int ix0 = -padding + kx;
                        int ox_lo = 0, ox_hi = Wo;
                        while (ox_lo < Wo && ix0 + ox_lo * stride < 0) ++ox_lo;
                        while (ox_hi > ox_lo && ix0 + (ox_hi - 1) * stride >= W) --ox_hi;
                        const double kv = kp[ky * kW + kx];
                        double gksum = 0.0;
                        for (int ox = ox_lo; ox < ox_hi; ++ox) {
                            const double g = gorow[ox];
                            gksum += g * irow[ix0 + ox * stride];
                            girow[ix0 + ox * stride] += g * kv;
                        }
                        gkp[ky * kW + kx] += gksum;
                    }
                }
            }
        }
    }
    return grad_in;
}

// -------------------------------------------------------------------- conv3d

inline Tensor conv3d(const Tensor& input, const LayerParams& params, int stride,
                     int pad_d, int pad_h, int pad_w) {
    if (input.shape.size() != 4) throw std::invalid_argument("conv3d: input must be [C,D,H,W]");
    if (params.kernels.shape.size() != 5)
        throw std::invalid_argument("conv3d: kernels must be [C',C,kD,kH,kW]");
    const int C = input.shape[0], D = input.shape[1], H = input.shape[2], W = input.shape[3];
    const int Co = params.kernels.shape[0], Ci = params.kernels.shape[1];
    const int kD = params.kernels.shape[2], kH = params.kernels.shape[3], kW = params.kernels.shape[4];
    if (Ci != C) throw std::invalid_argument("conv3d: channel mismatch");
    const int Do = conv_out_extent(D, kD, stride, pad_d, "D");
    const int Ho = conv_out_extent(H, kH, stride, pad_h, "H");
    const int Wo = conv_out_extent(W, kW, stride, pad_w, "W");

    Tensor out({Co, Do, Ho, Wo});
    for (int co = 0; co < Co; ++co) {
        const double b = params.bias.values[co];
        double* op = out.values.data() + static_cast<std::size_t>(co) * Do * Ho * Wo;
        for (int i = 0; i < Do * Ho * Wo; ++i) op[i] = b;
        for (int ci = 0; ci < C; ++ci) {
            const double* kp = params.kernels.values.data() +
                               ((static_cast<std::size_t>(co) * C + ci) * kD) * kH * kW;
            const double* ip = input.values.data() + static_cast<std::size_t>(ci) * D * H * W;
            for (int od = 0; od < Do; ++od)
                for (int kd = 0; kd < kD; ++kd) {
                    const int id = od * stride - pad_d + kd;
                    if (id < 0 || id >= D) continue;
                    const double* plane = ip + static_cast<std::size_t>(id) * H * W;
                    double* oplane = op + static_cast<std::size_t>(od) * Ho * Wo;
                    for (int oy = 0; oy < Ho; ++oy)
                        for (int ky = 0; ky < kH; ++ky) {
                            const int iy = oy * stride - pad_h + ky;
                            if (iy < 0 || iy >= H) continue;
                            const double* row = plane + iy * W;
                            double* orow = oplane + oy * Wo;
                            for (int kx = 0; kx < kW; ++kx) {
                                const double kv = kp[(kd * kH + ky) * kW + kx];
                                const int ix0 = -pad_w + kx;
                                int ox_lo = 0, ox_hi = Wo;
                                while (ox_lo < Wo && ix0 + ox_lo * stride < 0) ++ox_lo;
                                while (ox_hi > ox_lo && ix0 + (ox_hi - 1) * stride >= W) --ox_hi;
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    orow[ox] += kv * row[ix0 + ox * stride];
                            }
                        }
                }
        }
    }
    return out;
}

inline Tensor conv3d_backward(const Tensor& input, LayerParams& params, int stride,
                              int pad_d, int pad_h, int pad_w, const Tensor& grad_out) {
    const int C = input.shape[0], D = input.shape[1], H = input.shape[2], W = input.shape[3];
    const int Co = params.kernels.shape[0];
    const int kD = params.kernels.shape[2], kH = params.kernels.shape[3], kW = params.kernels.shape[4];
    const int Do = grad_out.shape[1], Ho = grad_out.shape[2], Wo = grad_out.shape[3];
    params.kernels.ensure_grad();
    params.bias.ensure_grad();

    Tensor grad_in(input.shape);
    for (int co = 0; co < Co; ++co) {
        const double* gop = grad_out.values.data() + static_cast<std::size_t>(co) * Do * Ho * Wo;
        double sum = 0.0;
        for (int i = 0; i < Do * Ho * Wo; ++i) sum += gop[i];
        params.bias.grad[co] += sum;
        for (int ci = 0; ci < C; ++ci) {
            const double* kp = params.kernels.values.data() +
                               ((static_cast<std::size_t>(co) * C + ci) * kD) * kH * kW;
            double* gkp = params.kernels.grad.data() +
                          ((static_cast<std::size_t>(co) * C + ci) * kD) * kH * kW;
            const double* ip = input.values.data() + static_cast<std::size_t>(ci) * D * H * W;
            double* gip = grad_in.values.data() + static_cast<std::size_t>(ci) * D * H * W;
            for (int od = 0; od < Do; ++od)
                for (int kd = 0; kd < kD; ++kd) {
                    const int id = od * stride - pad_d + kd;
                    if (id < 0 || id >= D) continue;
                    const double* plane = ip + static_cast<std::size_t>(id) * H * W;
                    double* gplane = gip + static_cast<std::size_t>(id) * H * W;
                    const double* goplane = gop + static_cast<std::size_t>(od) * Ho * Wo;
                    for (int oy = 0; oy < Ho; ++oy)
                        for (int ky = 0; ky < kH; ++ky) {
                            const int iy = oy * stride - pad_h + ky;
                            if (iy < 0 || iy >= H) continue;
                            const double* irow = plane + iy * W;
                            double* girow = gplane + iy * W;
                            const double* gorow = goplane + oy * Wo;
                            for (int kx = 0; kx < kW; ++kx) {
                                const int ix0 = -pad_w + kx;
                                int ox_lo = 0, ox_hi = Wo;
                                while (ox_lo < Wo && ix0 + ox_lo * stride < 0) ++ox_lo;
                                while (ox_hi > ox_lo && ix0 + (ox_hi - 1) * stride >= W) --ox_hi;
                                const double kv = kp[(kd * kH + ky) * kW + kx];
                                double gksum = 0.0;
                                for (int ox = ox_lo; ox < ox_hi; ++ox) {
                                    const double g = gorow[ox];
                                    gksum += g * irow[ix0 + ox * stride];
                                    girow[ix0 + ox * stride] += g * kv;
                                }
                                gkp[(kd * kH + ky) * kW + kx] += gksum;
                            }
                        }
                }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------- relu

inline Tensor relu(const Tensor& input) {
    Tensor out = input;
    for (double& v : out.values) v = v > 0.0 ? v : 0.0;
    return out;
}

inline Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
    require_same_shape(input, grad_out, "relu_backward");
    Tensor grad_in(input.shape);
    for (std::size_t i = 0; i < input.numel(); ++i)
        grad_in.values[i] = input.values[i] > 0.0 ? grad_out.values[i] : 0.0;
    return grad_in;
}

// ---------------------------------------------------------------- max_pool2d

inline Tensor max_pool2d(const Tensor& input, int window, int stride) {
    if (input.shape.size() != 3) throw std::invalid_argument("max_pool2d: input must be [C,H,W]");
    const int C = input.shape[0], H = input.shape[1], W = input.shape[2];
    const int Ho = conv_out_extent(H, window, stride, 0, "H");
    const int Wo = conv_out_extent(W, window, stride, 0, "W");
    Tensor out({C, Ho, Wo});
    for (int c = 0; c < C; ++c) {
        const double* ip = input.values.data() + static_cast<std::size_t>(c) * H * W;
        double* op = out.values.data() + static_cast<std::size_t>(c) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                double best = ip[(oy * stride) * W + ox * stride];
                for (int ky = 0; ky < window; ++ky)
                    for (int kx = 0; kx < window; ++kx) {
                        const double v = ip[(oy * stride + ky) * W + ox * stride + kx];
                        if (v > best) best = v;
                    }
                op[oy * Wo + ox] = best;
            }
    }
    return out;
}

// Gradient routed to the first maximal element of each window (row-major).
inline Tensor max_pool2d_backward(const Tensor& input, int window, int stride,
                                  const Tensor& grad_out) {
    const int C = input.shape[0], H = input.shape[1], W = input.shape[2];
    const int Ho = grad_out.shape[1], Wo = grad_out.shape[2];
    Tensor grad_in(input.shape);
    for (int c = 0; c < C; ++c) {
        const double* ip = input.values.data() + static_cast<std::size_t>(c) * H * W;
        double* gip = grad_in.values.data() + static_cast<std::size_t>(c) * H * W;
        const double* gop = grad_out.values.data() + static_cast<std::size_t>(c) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                int by = oy * stride, bx = ox * stride;
                double best = ip[by * W + bx];
                for (int ky = 0; ky < window; ++ky)
                    for (int kx = 0; kx < window; ++kx) {
                        const int iy = oy * stride + ky, ix = ox * stride + kx;
                        if (ip[iy * W + ix] > best) {
                            best = ip[iy * W + ix];
                            by = iy;
                            bx = ix;
                        }
                    }
                gip[by * W + bx] += gop[oy * Wo + ox];
            }
    }
    return grad_in;
}

// -------------------------------------------------------------------- linear

inline Tensor linear(const Tensor& input, const LayerParams& params) {
    if (params.kernels.shape.size() != 2) throw std::invalid_argument("linear: kernels must be [M,N]");
    const int M = params.kernels.shape[0], N = params.kernels.shape[1];
    if (static_cast<int>(input.numel()) != N)
        throw std::invalid_argument("linear: input size " + std::to_string(input.numel()) +
                                    " does not match kernel columns " + std::to_string(N));
    Tensor out({M});
    for (int m = 0; m < M; ++m) {
        const double* row = params.kernels.values.data() + static_cast<std::size_t>(m) * N;
        double acc = params.bias.values[m];
        for (int n = 0; n < N; ++n) acc += row[n] * input.values[n];
        out.values[m] = acc;
    }
    return out;
}

inline Tensor linear_backward(const Tensor& input, LayerParams& params, const Tensor& grad_out) {
    const int M = params.kernels.shape[0], N = params.kernels.shape[1];
    params.kernels.ensure_grad();
    params.bias.ensure_grad();
    Tensor grad_in(input.shape);
    for (int m = 0; m < M; ++m) {
        const double g = grad_out.values[m];
        params.bias.grad[m] += g;
        const double* row = params.kernels.values.data() + static_cast<std::size_t>(m) * N;
        double* grow = params.kernels.grad.data() + static_cast<std::size_t>(m) * N;
        for (int n = 0; n < N; ++n) {
            grow[n] += g * input.values[n];
            grad_in.values[n] += g * row[n];
        }
    }
    return grad_in;
}

}  // namespace casdet
