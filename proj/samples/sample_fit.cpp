// Fits a two-break model to simulated data and prints the segmentation.

#include <cstdio>

#include "cpqr/changepoint.hpp"
#include "cpqr/simulation.hpp"

int main() {
  using namespace cpqr;

  // 200 observations, regime changes after observations 30 and 100, Cauchy noise.
  const ScenarioTruth truth = study_scenario(ErrorLaw::Cauchy, 200);
  auto rng = RngStream{2024, 0}.engine();
  const Dataset data = generate_dataset(truth, 200, rng);

  const LassoTypeMethod method{0.5};  // median fit
  const ChangePointFit fit = detect_changepoints(data, 2, method);

  std::printf("breaks:");
  for (Index b : fit.segmentation.breaks) std::printf(" %ld", static_cast<long>(b));
  std::printf("   (true: 30 100)\n");

  for (std::size_t r = 0; r < fit.segment_fits.size(); ++r) {
    const SegmentFit& s = fit.segment_fits[r];
    std::printf("segment %zu (%ld, %ld]  kkt %.1e\n  estimate:", r + 1, static_cast<long>(s.j1),
                static_cast<long>(s.j2), s.kkt_residual);
    for (Index j = 0; j < s.coefficients.size(); ++j) std::printf(" %6.2f", s.coefficients[j]);
    std::printf("\n  truth:   ");
    for (Index j = 0; j < truth.coef[r].size(); ++j) std::printf(" %6.2f", truth.coef[r][j]);
    std::printf("\n");
  }
  return 0;
}
