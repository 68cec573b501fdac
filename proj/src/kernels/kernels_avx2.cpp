// AVX2+FMA kernels. Compiled with -mavx2 -mfma on x86-64 only; runtime
// dispatch lives in kernels_dispatch.cpp.
//
// The dilated kernel-size-3 convolution decomposes into three shifted
// vector primitives per (output row, input row) pair:
//   center tap  y[0..n)   += w1 * x[0..n)
//   left tap    y[d..n)   += w0 * x[0..n-d)
//   right tap   y[0..n-d) += w2 * x[d..n)
// so everything below reduces to axpy / dot / sum over contiguous runs.

#include "spinefuse/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <algorithm>
#include <cstddef>

namespace spinefuse::kernels {
namespace {

inline void axpy(int n, double a, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(a);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256d y0 = _mm256_loadu_pd(y + i);
    __m256d y1 = _mm256_loadu_pd(y + i + 4);
    y0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), y0);
    y1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i + 4), y1);
    _mm256_storeu_pd(y + i, y0);
    _mm256_storeu_pd(y + i + 4, y1);
  }
  for (; i + 4 <= n; i += 4) {
    __m256d y0 = _mm256_loadu_pd(y + i);
    y0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), y0);
    _mm256_storeu_pd(y + i, y0);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline double dot(int n, const double* x, const double* y) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += x[i] * y[i];
  return hsum(_mm256_add_pd(acc0, acc1)) + tail;
}

inline double sum(int n, const double* x) {
  __m256d acc = _mm256_setzero_pd();
  int i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double tail = 0.0;
  for (; i < n; ++i) tail += x[i];
  return hsum(acc) + tail;
}

void conv3_forward(double* out, const double* in, const double* w,
                   const double* bias, int c_out, int c_in, int n, int d) {
  const int m = n - d;
  for (int o = 0; o < c_out; ++o) {
    double* yrow = out + static_cast<std::size_t>(o) * n;
    std::fill(yrow, yrow + n, bias[o]);
    for (int ci = 0; ci < c_in; ++ci) {
      const double* xrow = in + static_cast<std::size_t>(ci) * n;
      const double* wk = w + (static_cast<std::size_t>(o) * c_in + ci) * 3;
      axpy(n, wk[1], xrow, yrow);
      if (m > 0) {
        axpy(m, wk[0], xrow, yrow + d);
        axpy(m, wk[2], xrow + d, yrow);
      }
    }
  }
}

void conv3_backward_data(double* gin, const double* gout, const double* w,
                         int c_out, int c_in, int n, int d) {
  const int m = n - d;
  for (int ci = 0; ci < c_in; ++ci) {
    double* grow = gin + static_cast<std::size_t>(ci) * n;
    for (int o = 0; o < c_out; ++o) {
      const double* gorow = gout + static_cast<std::size_t>(o) * n;
      const double* wk = w + (static_cast<std::size_t>(o) * c_in + ci) * 3;
      axpy(n, wk[1], gorow, grow);
      if (m > 0) {
        // transpose of the forward taps: gin[s] += w0*gout[s+d] and
        // gin[s] += w2*gout[s-d] over their valid ranges
        axpy(m, wk[0], gorow + d, grow);
        axpy(m, wk[2], gorow, grow + d);
      }
    }
  }
}

void conv3_backward_params(double* gw, double* gbias, const double* gout,
                           const double* in, int c_out, int c_in, int n,
                           int d) {
  const int m = n - d;
  for (int o = 0; o < c_out; ++o) {
    const double* gorow = gout + static_cast<std::size_t>(o) * n;
    gbias[o] += sum(n, gorow);
    for (int ci = 0; ci < c_in; ++ci) {
      const double* xrow = in + static_cast<std::size_t>(ci) * n;
      double* gwk = gw + (static_cast<std::size_t>(o) * c_in + ci) * 3;
      if (m > 0) {
        gwk[0] += dot(m, gorow + d, xrow);
        gwk[2] += dot(m, gorow, xrow + d);
      }
      gwk[1] += dot(n, gorow, xrow);
    }
  }
}

void pointwise_forward(double* out, const double* in, const double* w,
                       const double* bias, int c_out, int c_in, int n) {
  for (int o = 0; o < c_out; ++o) {
    double* yrow = out + static_cast<std::size_t>(o) * n;
    std::fill(yrow, yrow + n, bias[o]);
    for (int ci = 0; ci < c_in; ++ci) {
      axpy(n, w[static_cast<std::size_t>(o) * c_in + ci],
           in + static_cast<std::size_t>(ci) * n, yrow);
    }
  }
}

void pointwise_backward_data(double* gin, const double* gout, const double* w,
                             int c_out, int c_in, int n) {
  for (int ci = 0; ci < c_in; ++ci) {
    double* grow = gin + static_cast<std::size_t>(ci) * n;
    for (int o = 0; o < c_out; ++o) {
      axpy(n, w[static_cast<std::size_t>(o) * c_in + ci],
           gout + static_cast<std::size_t>(o) * n, grow);
    }
  }
}

void pointwise_backward_params(double* gw, double* gbias, const double* gout,
                               const double* in, int c_out, int c_in, int n) {
  for (int o = 0; o < c_out; ++o) {
    const double* gorow = gout + static_cast<std::size_t>(o) * n;
    gbias[o] += sum(n, gorow);
    for (int ci = 0; ci < c_in; ++ci) {
      gw[static_cast<std::size_t>(o) * c_in + ci] +=
          dot(n, gorow, in + static_cast<std::size_t>(ci) * n);
    }
  }
}

}  // namespace

const Ops& avx2_ops_impl() {
  static const Ops ops = {
      "avx2",
      conv3_forward,
      conv3_backward_data,
      conv3_backward_params,
      pointwise_forward,
      pointwise_backward_data,
      pointwise_backward_params,
  };
  return ops;
}

}  // namespace spinefuse::kernels

#endif  // __AVX2__ && __FMA__
