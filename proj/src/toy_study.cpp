#include "daregram/toy_study.hpp"

#include <algorithm>
#include <cmath>

#include "daregram/error.hpp"

namespace daregram {

double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

ToyMismatch toy_mismatch(const DomainPair& pair, const AlignmentConfig& cfg) {
  ToyMismatch out;
  const VectorXd angles = principal_angles<double>(pair.source, pair.target);
  out.raw_mismatch = angles.size() == 0 ? 0.0 : 1.0 - std::cos(angles.maxCoeff());
  const AlignmentLoss loss = daregram_loss(pair.source, pair.target, cfg);
  out.inverse_gram_mismatch = loss.l_cos;
  out.scale_mismatch = loss.l_scale;
  return out;
}

ToyStudy run_toy_study(int n_seeds, const std::function<ShiftSpec(std::uint64_t)>& spec_for_seed,
                       Index n, Index d, const AlignmentConfig& cfg) {
  if (n_seeds < 1) throw ContractError("toy study needs at least one seed");
  ToyStudy study;
  std::vector<double> raw;
  std::vector<double> inv;
  for (int s = 0; s < n_seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    ToyMismatch row = toy_mismatch(gen_toy_pair(n, d, spec_for_seed(seed), Pairing::paired), cfg);
    row.seed = seed;
    raw.push_back(row.raw_mismatch);
    inv.push_back(row.inverse_gram_mismatch);
    study.rows.push_back(row);
  }
  study.median_raw = median(raw);
  study.median_inverse_gram = median(inv);
  if (study.median_raw < kAlignedTolerance && study.median_inverse_gram < kAlignedTolerance)
    study.verdict = kVerdictAligned;
  else if (study.median_inverse_gram > study.median_raw)
    study.verdict = kVerdictInverseLarger;
  else
    study.verdict = kVerdictRawLarger;
  return study;
}

}  // namespace daregram
