#pragma once

// Two nearby Gaussians: compare how far apart their raw feature subspaces
// are with how far apart their truncated inverse Grams are.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "daregram/alignment.hpp"
#include "daregram/synthdata.hpp"

namespace daregram {

struct ToyMismatch {
  std::uint64_t seed = 0;
  /// 1 - cos of the largest principal angle between the raw row spaces.
  double raw_mismatch = 0.0;
  /// Angle loss of the truncated inverse Grams.
  double inverse_gram_mismatch = 0.0;
  double scale_mismatch = 0.0;
};

struct ToyStudy {
  std::vector<ToyMismatch> rows;
  double median_raw = 0.0;
  double median_inverse_gram = 0.0;
  std::string verdict;
};

inline constexpr const char* kVerdictInverseLarger = "inverse-Gram mismatch > raw mismatch";
inline constexpr const char* kVerdictAligned = "aligned";
inline constexpr const char* kVerdictRawLarger = "raw mismatch >= inverse-Gram mismatch";
/// Medians below this count as no mismatch.
inline constexpr double kAlignedTolerance = 1e-9;

ToyMismatch toy_mismatch(const DomainPair& pair, const AlignmentConfig& cfg);

/// Seeds 0..n_seeds-1, paired base draws.
ToyStudy run_toy_study(int n_seeds, const std::function<ShiftSpec(std::uint64_t)>& spec_for_seed,
                       Index n = kFig3Samples, Index d = kFig3Dim, const AlignmentConfig& cfg = {});

double median(std::vector<double> v);

}  // namespace daregram
