#pragma once

#include <fftw3.h>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgno/tensor.hpp"

namespace fgno {

// Raw 1D signal plus its sampling rate.
struct TimeSeries {
  std::vector<double> samples;
  double sampling_rate = 0.0;  // Hz
  std::string channel_id;

  void validate() const {
    if (sampling_rate <= 0.0)
      throw std::invalid_argument("TimeSeries: sampling_rate must be positive");
    for (double x : samples)
      if (!std::isfinite(x)) throw std::invalid_argument("TimeSeries: non-finite sample");
  }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sampling_rate;
  }
};

struct WindowSpec {
  int nperseg = 400;
  int noverlap = 350;

  int hop() const { return nperseg - noverlap; }
  int freq_bins() const { return nperseg / 2 + 1; }
  void validate() const {
    if (nperseg < 2) throw std::invalid_argument("WindowSpec: nperseg must be >= 2");
    if (noverlap < 0 || noverlap >= nperseg)
      throw std::invalid_argument("WindowSpec: need 0 <= noverlap < nperseg");
  }
};

// F x T grid of non-negative magnitudes. Row f is frequency bin f, column
// t is time frame t.
struct Spectrogram {
  Tensor<double> magnitudes;  // shape {F, T}
  double freq_bin_hz = 0.0;
  double frame_hop_seconds = 0.0;
  double source_rate_hz = 0.0;

  int freq_bins() const { return magnitudes.rows(); }
  int frames() const { return magnitudes.cols(); }
};

inline int stft_frame_count(long num_samples, const WindowSpec& spec) {
  return static_cast<int>((num_samples - spec.nperseg) / spec.hop()) + 1;
}

// Periodic Hann window: w[k] = 0.5 * (1 - cos(2*pi*k / n)).
inline std::vector<double> hann_window(int n) {
  if (n < 1) throw std::invalid_argument("hann_window: length must be >= 1");
  std::vector<double> w(n);
  for (int k = 0; k < n; ++k)
    w[k] = 0.5 * (1.0 - std::cos(2.0 * M_PI * k / n));
  return w;
}

namespace detail {

// One real-to-complex FFT plan of fixed length, reused across frames.
class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  // Writes the one-sided magnitudes of the input frame into |mags|.
  void magnitudes(const double* frame, double* mags) {
    std::copy(frame, frame + n_, in_);
    fftw_execute(plan_);
    for (int b = 0; b <= n_ / 2; ++b)
      mags[b] = std::hypot(out_[b][0], out_[b][1]);
  }

 private:
  int n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

}  // namespace detail

// Magnitude spectrogram: Hann-windowed frames at hop H, one-sided real DFT.
inline Spectrogram stft_magnitude(const TimeSeries& x, const WindowSpec& spec) {
  spec.validate();
  x.validate();
  if (static_cast<long>(x.samples.size()) < spec.nperseg)
    throw std::invalid_argument(
        "stft_magnitude: signal of " + std::to_string(x.samples.size()) +
        " samples is shorter than one window (" + std::to_string(spec.nperseg) + ")");
  int frames = stft_frame_count(static_cast<long>(x.samples.size()), spec);
  int bins = spec.freq_bins();
  std::vector<double> window = hann_window(spec.nperseg);
  std::vector<double> frame(spec.nperseg);
  std::vector<double> mags(bins);

  Spectrogram sg;
  sg.magnitudes = Tensor<double>({bins, frames});
  sg.freq_bin_hz = x.sampling_rate / spec.nperseg;
  sg.frame_hop_seconds = spec.hop() / x.sampling_rate;
  sg.source_rate_hz = x.sampling_rate;

  detail::RealFft fft(spec.nperseg);
  for (int t = 0; t < frames; ++t) {
    const double* src = x.samples.data() + static_cast<long>(t) * spec.hop();
    for (int k = 0; k < spec.nperseg; ++k) frame[k] = src[k] * window[k];
    fft.magnitudes(frame.data(), mags.data());
    for (int b = 0; b < bins; ++b) sg.magnitudes.at(b, t) = mags[b];
  }
  return sg;
}

// Consecutive non-overlapping segments of exactly window_seconds; trailing
// remainder is discarded. Returns an empty list if the signal is too short.
inline std::vector<TimeSeries> segment_windows(const TimeSeries& x, double window_seconds) {
  x.validate();
  long w = static_cast<long>(std::llround(window_seconds * x.sampling_rate));
  if (w < 1) throw std::invalid_argument("segment_windows: window shorter than one sample");
  std::vector<TimeSeries> out;
  long n = static_cast<long>(x.samples.size());
  for (long start = 0; start + w <= n; start += w) {
    TimeSeries seg;
    seg.samples.assign(x.samples.begin() + start, x.samples.begin() + start + w);
    seg.sampling_rate = x.sampling_rate;
    seg.channel_id = x.channel_id;
    out.push_back(std::move(seg));
  }
  return out;
}

// Block-mean decimation: each output sample is the mean of `factor`
// consecutive input samples.
inline TimeSeries downsample(const TimeSeries& x, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample: factor must be >= 1");
  x.validate();
  if (static_cast<long>(x.samples.size()) < factor)
    throw std::invalid_argument("downsample: fewer samples than factor");
  if (factor == 1) return x;
  TimeSeries out;
  out.sampling_rate = x.sampling_rate / factor;
  out.channel_id = x.channel_id;
  long blocks = static_cast<long>(x.samples.size()) / factor;
  out.samples.resize(blocks);
  for (long b = 0; b < blocks; ++b) {
    double s = 0.0;
    for (int k = 0; k < factor; ++k) s += x.samples[b * factor + k];
    out.samples[b] = s / factor;
  }
  return out;
}

// Pads the frequency axis with zero rows up to target_bins.
inline Spectrogram zero_pad_frequency(const Spectrogram& sg, int target_bins) {
  int f = sg.freq_bins(), t = sg.frames();
  if (target_bins < f)
    throw std::invalid_argument("zero_pad_frequency: target " + std::to_string(target_bins) +
                                " smaller than current " + std::to_string(f));
  if (target_bins == f) return sg;
  Spectrogram out = sg;
  out.magnitudes = Tensor<double>({target_bins, t});
  std::copy(sg.magnitudes.v.begin(), sg.magnitudes.v.end(), out.magnitudes.v.begin());
  return out;
}

// Per-frequency-bin z-score statistics, fit on the training split only.
struct NormStats {
  std::vector<double> mean;  // per bin
  std::vector<double> std;   // per bin, floored at 1e-8
};

inline NormStats normalize_fit(const std::vector<Spectrogram>& train) {
  if (train.size() < 2)
    throw std::invalid_argument("normalize_fit: need at least 2 training windows");
  int f = train[0].freq_bins();
  NormStats st;
  st.mean.assign(f, 0.0);
  st.std.assign(f, 0.0);
  long count = 0;
  for (const auto& sg : train) {
    if (sg.freq_bins() != f)
      throw std::invalid_argument("normalize_fit: inconsistent bin counts");
    for (int b = 0; b < f; ++b)
      for (int t = 0; t < sg.frames(); ++t) st.mean[b] += sg.magnitudes.at(b, t);
    count += sg.frames();
  }
  for (int b = 0; b < f; ++b) st.mean[b] /= count;
  for (const auto& sg : train)
    for (int b = 0; b < f; ++b)
      for (int t = 0; t < sg.frames(); ++t) {
        double d = sg.magnitudes.at(b, t) - st.mean[b];
        st.std[b] += d * d;
      }
  for (int b = 0; b < f; ++b) st.std[b] = std::max(std::sqrt(st.std[b] / count), 1e-8);
  return st;
}

inline Spectrogram normalize_apply(const Spectrogram& sg, const NormStats& st) {
  if (static_cast<size_t>(sg.freq_bins()) != st.mean.size())
    throw std::invalid_argument("normalize_apply: stats fit on " +
                                std::to_string(st.mean.size()) + " bins, spectrogram has " +
                                std::to_string(sg.freq_bins()));
  Spectrogram out = sg;
  for (int b = 0; b < sg.freq_bins(); ++b)
    for (int t = 0; t < sg.frames(); ++t)
      out.magnitudes.at(b, t) = (sg.magnitudes.at(b, t) - st.mean[b]) / st.std[b];
  return out;
}

}  // namespace fgno
