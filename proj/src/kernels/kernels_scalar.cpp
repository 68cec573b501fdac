#include <cstddef>

#include "spinefuse/kernels.hpp"

// Reference kernels. Straightforward loops, kept readable; the dispatched
// AVX2 variants are equivalence-tested against these.

namespace spinefuse::kernels {
namespace {

void conv3_forward(double* out, const double* in, const double* w,
                   const double* bias, int c_out, int c_in, int n, int d) {
  for (int o = 0; o < c_out; ++o) {
    double* yrow = out + static_cast<std::size_t>(o) * n;
    for (int t = 0; t < n; ++t) {
      double acc = bias[o];
      for (int ci = 0; ci < c_in; ++ci) {
        const double* xrow = in + static_cast<std::size_t>(ci) * n;
        const double* wk = w + (static_cast<std::size_t>(o) * c_in + ci) * 3;
        for (int i = 0; i < 3; ++i) {
          const int s = t + d * (i - 1);
          if (s >= 0 && s < n) acc += wk[i] * xrow[s];
        }
      }
      yrow[t] = acc;
    }
  }
}

void conv3_backward_data(double* gin, const double* gout, const double* w,
                         int c_out, int c_in, int n, int d) {
  for (int ci = 0; ci < c_in; ++ci) {
    double* grow = gin + static_cast<std::size_t>(ci) * n;
    for (int s = 0; s < n; ++s) {
      double acc = 0.0;
      for (int o = 0; o < c_out; ++o) {
        const double* gorow = gout + static_cast<std::size_t>(o) * n;
        const double* wk = w + (static_cast<std::size_t>(o) * c_in + ci) * 3;
        for (int i = 0; i < 3; ++i) {
          const int t = s - d * (i - 1);  // out[o,t] read in[ci, t + d*(i-1)]
          if (t >= 0 && t < n) acc += wk[i] * gorow[t];
        }
      }
      grow[s] += acc;
    }
  }
}

void conv3_backward_params(double* gw, double* gbias, const double* gout,
                           const double* in, int c_out, int c_in, int n,
                           int d) {
  for (int o = 0; o < c_out; ++o) {
    const double* gorow = gout + static_cast<std::size_t>(o) * n;
    double gb = 0.0;
    for (int t = 0; t < n; ++t) gb += gorow[t];
    gbias[o] += gb;
    for (int ci = 0; ci < c_in; ++ci) {
      const double* xrow = in + static_cast<std::size_t>(ci) * n;
      double* gwk = gw + (static_cast<std::size_t>(o) * c_in + ci) * 3;
      for (int i = 0; i < 3; ++i) {
        double acc = 0.0;
        for (int t = 0; t < n; ++t) {
          const int s = t + d * (i - 1);
          if (s >= 0 && s < n) acc += gorow[t] * xrow[s];
        }
        gwk[i] += acc;
      }
    }
  }
}

void pointwise_forward(double* out, const double* in, const double* w,
                       const double* bias, int c_out, int c_in, int n) {
  for (int o = 0; o < c_out; ++o) {
    double* yrow = out + static_cast<std::size_t>(o) * n;
    for (int t = 0; t < n; ++t) {
      double acc = bias[o];
      for (int ci = 0; ci < c_in; ++ci) {
        acc += w[static_cast<std::size_t>(o) * c_in + ci] *
               in[static_cast<std::size_t>(ci) * n + t];
      }
      yrow[t] = acc;
    }
  }
}

void pointwise_backward_data(double* gin, const double* gout, const double* w,
                             int c_out, int c_in, int n) {
  for (int ci = 0; ci < c_in; ++ci) {
    double* grow = gin + static_cast<std::size_t>(ci) * n;
    for (int t = 0; t < n; ++t) {
      double acc = 0.0;
      for (int o = 0; o < c_out; ++o) {
        acc += w[static_cast<std::size_t>(o) * c_in + ci] *
               gout[static_cast<std::size_t>(o) * n + t];
      }
      grow[t] += acc;
    }
  }
}

void pointwise_backward_params(double* gw, double* gbias, const double* gout,
                               const double* in, int c_out, int c_in, int n) {
  for (int o = 0; o < c_out; ++o) {
    const double* gorow = gout + static_cast<std::size_t>(o) * n;
    double gb = 0.0;
    for (int t = 0; t < n; ++t) gb += gorow[t];
    gbias[o] += gb;
    for (int ci = 0; ci < c_in; ++ci) {
      const double* xrow = in + static_cast<std::size_t>(ci) * n;
      double acc = 0.0;
      for (int t = 0; t < n; ++t) acc += gorow[t] * xrow[t];
      gw[static_cast<std::size_t>(o) * c_in + ci] += acc;
    }
  }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops = {
      "scalar",
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
