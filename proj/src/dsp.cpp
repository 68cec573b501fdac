#include "spinefuse/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "json.hpp"
#include "spinefuse/errors.hpp"

namespace spinefuse {

BiquadCoeffs design_butterworth_lp(int order, double cutoff_hz,
                                   double sample_rate_hz) {
  if (order != 2) throw param_error("design_butterworth_lp: only order 2 is supported");
  if (!(sample_rate_hz > 0.0)) throw param_error("design_butterworth_lp: bad sample rate");
  if (!(cutoff_hz > 0.0) || cutoff_hz >= sample_rate_hz / 2.0)
    throw param_error("design_butterworth_lp: cutoff must lie in (0, Nyquist)");

  // prewarped analog prototype 1/(s^2 + sqrt(2) s + 1) through the bilinear
  // transform
  const double k = std::tan(std::numbers::pi * cutoff_hz / sample_rate_hz);
  const double sqrt2 = std::numbers::sqrt2;
  const double norm = 1.0 / (1.0 + sqrt2 * k + k * k);
  BiquadCoeffs c;
  c.a1 = 2.0 * (k * k - 1.0) * norm;
  c.a2 = (1.0 - sqrt2 * k + k * k) * norm;
  // algebraically b0 = k^2*norm = (1 + a1 + a2)/4; the latter form keeps the
  // DC gain at exactly 1 even when 1 + a1 + a2 nearly cancels (fc << fs)
  c.b0 = (1.0 + c.a1 + c.a2) / 4.0;
  c.b1 = 2.0 * c.b0;
  c.b2 = c.b0;
  return c;
}

std::complex<double> biquad_response(const BiquadCoeffs& c, double freq_hz,
                                     double sample_rate_hz) {
  const double w = 2.0 * std::numbers::pi * freq_hz / sample_rate_hz;
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  return (c.b0 + c.b1 * z1 + c.b2 * z2) / (1.0 + c.a1 * z1 + c.a2 * z2);
}

double pole_radius(const BiquadCoeffs& c) {
  // roots of z^2 + a1 z + a2
  const double disc = c.a1 * c.a1 - 4.0 * c.a2;
  if (disc <= 0.0) return std::sqrt(std::abs(c.a2));
  const double r1 = std::abs((-c.a1 + std::sqrt(disc)) / 2.0);
  const double r2 = std::abs((-c.a1 - std::sqrt(disc)) / 2.0);
  return std::max(r1, r2);
}

std::string coeffs_to_json(const BiquadCoeffs& c) {
  return nlohmann::json{{"b0", c.b0}, {"b1", c.b1}, {"b2", c.b2},
                        {"a1", c.a1}, {"a2", c.a2}}
      .dump();
}

namespace {

// Single forward pass, direct form II transposed, state initialized to the
// DC steady state of the first sample so step transients vanish.
void biquad_pass(const BiquadCoeffs& c, std::vector<double>& x) {
  const double x0 = x.front();
  double s1 = (c.b1 + c.b2 - c.a1 - c.a2) * x0;
  double s2 = (c.b2 - c.a2) * x0;
  for (double& v : x) {
    const double in = v;
    const double y = c.b0 * in + s1;
    s1 = c.b1 * in - c.a1 * y + s2;
    s2 = c.b2 * in - c.a2 * y;
    v = y;
  }
}

// Transient length in samples, expressed through the pole radius so it
// follows from the coefficients alone. For the order-2 designs used here
// -ln(radius) ~ sqrt(2) pi fc/fs, making this ~ 6/(fc/fs).
int settle_samples(const BiquadCoeffs& c) {
  const double r = pole_radius(c);
  if (r <= 0.0) return 1;
  const double s = -26.657 / std::log(r);  // 6 * sqrt(2) * pi
  return static_cast<int>(std::ceil(std::min(s, 1e9)));
}

}  // namespace

std::vector<double> filtfilt(const BiquadCoeffs& c,
                             const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n < 13) throw param_error("filtfilt: input too short (need >= 13 samples)");

  const int settle = std::min(settle_samples(c), n / 3);
  const int ext = std::min(3 * std::max(settle, 12), n - 1);

  std::vector<double> buf;
  buf.reserve(static_cast<std::size_t>(n) + 2 * ext);
  for (int i = ext; i >= 1; --i) buf.push_back(2.0 * x[0] - x[i]);
  buf.insert(buf.end(), x.begin(), x.end());
  for (int i = 1; i <= ext; ++i) buf.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  biquad_pass(c, buf);
  std::reverse(buf.begin(), buf.end());
  biquad_pass(c, buf);
  std::reverse(buf.begin(), buf.end());

  return std::vector<double>(buf.begin() + ext, buf.begin() + ext + n);
}

std::vector<double> remove_drift(const std::vector<double>& x,
                                 double sample_rate_hz) {
  const BiquadCoeffs c = design_butterworth_lp(2, kDriftCutoffHz, sample_rate_hz);
  std::vector<double> low = filtfilt(c, x);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - low[i];
  return out;
}

std::vector<double> smooth(const std::vector<double>& x,
                           double sample_rate_hz) {
  return filtfilt(design_butterworth_lp(2, kSmoothCutoffHz, sample_rate_hz), x);
}

std::vector<double> normalize01(const std::vector<double>& x) {
  if (x.empty()) throw param_error("normalize01: empty input");
  const auto [mn_it, mx_it] = std::minmax_element(x.begin(), x.end());
  const double mn = *mn_it, mx = *mx_it;
  std::vector<double> out(x.size(), 0.0);
  if (mx == mn) return out;  // flat signal
  const double span = mx - mn;
  // divide (not multiply by a reciprocal) so min/max land on 0 and 1 exactly
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mn) / span;
  return out;
}

UniformTrace resample_to_grid(const std::vector<double>& positions_mm,
                              const std::vector<double>& values,
                              double spacing_mm) {
  if (positions_mm.size() != values.size())
    throw param_error("resample_to_grid: positions/values length mismatch");
  if (positions_mm.size() < 2)
    throw param_error("resample_to_grid: need at least 2 samples");
  if (!(spacing_mm > 0.0)) throw param_error("resample_to_grid: spacing must be > 0");
  for (std::size_t i = 1; i < positions_mm.size(); ++i)
    if (positions_mm[i] < positions_mm[i - 1])
      throw param_error("resample_to_grid: positions not monotone nondecreasing");

  // collapse runs of equal positions by averaging
  std::vector<double> pos, val;
  pos.reserve(positions_mm.size());
  val.reserve(values.size());
  std::size_t i = 0;
  while (i < positions_mm.size()) {
    std::size_t j = i;
    double acc = 0.0;
    while (j < positions_mm.size() && positions_mm[j] == positions_mm[i])
      acc += values[j++];
    pos.push_back(positions_mm[i]);
    val.push_back(acc / static_cast<double>(j - i));
    i = j;
  }

  UniformTrace tr;
  tr.origin_mm = pos.front();
  tr.spacing_mm = spacing_mm;
  if (pos.size() == 1) {
    tr.values = {val.front()};
    return tr;
  }
  const std::size_t count = static_cast<std::size_t>(
      std::floor((pos.back() - pos.front()) / spacing_mm + 1e-9)) + 1;
  tr.values.resize(count);
  std::size_t seg = 0;
  for (std::size_t g = 0; g < count; ++g) {
    const double xq = tr.origin_mm + spacing_mm * static_cast<double>(g);
    while (seg + 2 < pos.size() && pos[seg + 1] <= xq) ++seg;
    const double x0 = pos[seg], x1 = pos[seg + 1];
    if (xq <= x0) {
      tr.values[g] = val[seg];
    } else if (xq >= x1) {
      tr.values[g] = val[seg + 1];
    } else {
      const double t = (xq - x0) / (x1 - x0);
      tr.values[g] = val[seg] + t * (val[seg + 1] - val[seg]);
    }
  }
  return tr;
}

PreprocessedScan preprocess_scan(const ScanRecord& record, double spacing_mm) {
  const std::size_t n = record.size();
  if (record.positions_mm.size() != n || record.fy_n.size() != n ||
      record.us_prob.size() != n || record.ground_truth.size() != n)
    throw param_error("preprocess_scan: record arrays have unequal lengths");
  if (n < 2) throw param_error("preprocess_scan: record too short");
  const double dt =
      (record.timestamps_s.back() - record.timestamps_s.front()) /
      static_cast<double>(n - 1);
  if (!(dt > 0.0)) throw param_error("preprocess_scan: bad timestamps");
  const double fs = 1.0 / dt;

  PreprocessedScan out;
  out.force = resample_to_grid(
      record.positions_mm,
      normalize01(smooth(remove_drift(record.fy_n, fs), fs)), spacing_mm);
  out.us = resample_to_grid(record.positions_mm,
                            normalize01(smooth(record.us_prob, fs)), spacing_mm);

  // nearest-neighbor labels on the shared grid
  out.labels.labels.resize(out.force.size());
  for (std::size_t g = 0; g < out.force.size(); ++g) {
    const double xq = out.force.position_mm(g);
    const auto it = std::lower_bound(record.positions_mm.begin(),
                                     record.positions_mm.end(), xq);
    std::size_t idx;
    if (it == record.positions_mm.begin()) {
      idx = 0;
    } else if (it == record.positions_mm.end()) {
      idx = n - 1;
    } else {
      const std::size_t hi = static_cast<std::size_t>(it - record.positions_mm.begin());
      idx = (xq - record.positions_mm[hi - 1] <= record.positions_mm[hi] - xq)
                ? hi - 1
                : hi;
    }
    out.labels.labels[g] = record.ground_truth.labels[idx];
  }
  return out;
}

}  // namespace spinefuse
