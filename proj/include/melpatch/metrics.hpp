#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "melpatch/frontend.hpp"
#include "melpatch/matrix.hpp"

namespace melpatch {

/// Number of mel-cepstral coefficients compared by mcd (c1..c13).
inline constexpr int kMcdCoefficients = 13;

/// Orthonormal DCT-II of every log-mel frame, keeping coefficients
/// 1..n_coeffs (c0 dropped). Result is frames x n_coeffs.
Matrix mel_cepstrum(const Matrix& log_mel, int n_coeffs = kMcdCoefficients);

/// Frame-aligned distance between two cepstral sequences:
/// mean over frames of (10 / ln 10) * sqrt(2 * sum_d (c_d - c'_d)^2).
double mcd_from_cepstra(const Matrix& a, const Matrix& b);

/// Mel-cepstral distance between two waveforms of the same rate, using an
/// 80-band log-mel analysis at that rate. Longer input is trimmed.
double mcd(const Waveform& ref, const Waveform& deg);

/// Short-time objective intelligibility. Both signals are resampled to
/// 10 kHz; silent frames (40 dB below the reference's loudest) are removed.
double stoi(const Waveform& ref, const Waveform& deg);

/// Processing time divided by signal duration.
double rtf(double elapsed_s, double duration_s);

struct MetricReport {
  std::string utterance_id;
  double duration_s = 0.0;
  double mcd = 0.0;
  double stoi = 0.0;
  double rtf_encode = 0.0;
  double rtf_decode = 0.0;
  double bitrate_bps = 0.0;
};

/// CSV with one row per report and a trailing "mean" row.
void write_report_csv(std::ostream& out, const std::vector<MetricReport>& rows);

}  // namespace melpatch
