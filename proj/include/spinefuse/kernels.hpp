#pragma once

namespace spinefuse::kernels {

// Inner loops of the 1D network, double precision.
//
// Sequences are channel-major: a (channels x n) block stores channel c at
// data + c*n. Kernel-size-3 convolutions are centered with dilation d and
// zero padding outside [0, n):
//
//   out[o,t] = bias[o] + sum_{ci} sum_{i in {0,1,2}}
//              w[(o*c_in + ci)*3 + i] * in[ci, t + d*(i-1)]
//
// Pointwise (1x1) convolutions lay weights out as w[o*c_in + ci]. All
// backward_* functions accumulate into their gradient outputs; callers zero
// the buffers. Forward functions overwrite.
struct Ops {
  const char* name;

  void (*conv3_forward)(double* out, const double* in, const double* w,
                        const double* bias, int c_out, int c_in, int n, int d);
  void (*conv3_backward_data)(double* gin, const double* gout, const double* w,
                              int c_out, int c_in, int n, int d);
  void (*conv3_backward_params)(double* gw, double* gbias, const double* gout,
                                const double* in, int c_out, int c_in, int n,
                                int d);

  void (*pointwise_forward)(double* out, const double* in, const double* w,
                            const double* bias, int c_out, int c_in, int n);
  void (*pointwise_backward_data)(double* gin, const double* gout,
                                  const double* w, int c_out, int c_in, int n);
  void (*pointwise_backward_params)(double* gw, double* gbias,
                                    const double* gout, const double* in,
                                    int c_out, int c_in, int n);
};

// Reference implementation, plain loops.
const Ops& scalar_ops();

// AVX2+FMA variant; null when the binary was not built with AVX2 support.
const Ops* avx2_ops();

// True when avx2_ops() exists and this CPU supports AVX2 and FMA.
bool avx2_usable();

// Dispatched implementation: AVX2 when usable, else scalar. The environment
// variable SPINEFUSE_KERNEL=scalar|avx2 forces a choice (avx2 throws
// param_error if unusable). Resolved once, on first call.
const Ops& active_ops();

}  // namespace spinefuse::kernels
