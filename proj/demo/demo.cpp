// Walk through one analysis: load a panel, smooth it, pick the penalty by
// SURE, and report weights, degrees of freedom, effects and a White test.

#include <synthsel/synthsel.hpp>

#include <cstdio>
#include <exception>
#include <string>

using namespace synthsel;

int main(int argc, char** argv) {
  const std::string path = argc > 1 ? argv[1] : SYNTHSEL_DEMO_PANEL;
  try {
    LoadOptions opts;
    opts.treated = "region_01";
    opts.treatment_period = "2014-01";
    const PanelDataset panel = preprocess(load_panel(path, opts), 3, true);
    std::printf("%s: %ld pre periods, %ld post periods, %ld donors\n", panel.treated_name.c_str(),
                static_cast<long>(panel.n()), static_cast<long>(panel.post_Y.size()), static_cast<long>(panel.p()));

    const SelectionResult sel =
        select(SelectionMethod::sure, panel, EstimatorKind::penalized, default_grid(EstimatorKind::penalized, panel.p()));
    const double lambda = sel.best().lambda;
    std::printf("SURE picks lambda = %.4f (sigma^2 estimate %.4f)\n", lambda, sel.sigma2_hat);

    const ScFit fit = solve_penalized_sc(panel.Y, panel.X, lambda);
    std::printf("\nweights\n");
    for (Index j : fit.sets.A)
      std::printf("  %-10s %.4f\n", panel.donor_names[static_cast<std::size_t>(j)].c_str(), fit.weights.beta(j));

    const DofReport dof = df_hat(fit, panel.X);
    std::printf("\ndegrees of freedom %.3f (|A| = %ld, rank %ld)\n", dof.df_hat, static_cast<long>(dof.size_A),
                static_cast<long>(dof.rank_XA));

    const EffectPath eff = effect_path(fit, panel.post_Y, panel.post_X);
    std::printf("\neffects\n");
    for (Index t = 0; t < eff.tau.size(); ++t)
      std::printf("  %s  %+.3f\n", panel.post_times[static_cast<std::size_t>(t)].c_str(), eff.tau(t));
    std::printf("  first-period %.3f, 12-period average %.3f\n", eff.average(1), eff.average(12));

    const WhiteTestReport white = white_test(fit, panel.X);
    std::printf("\nWhite test: n R^2 = %.3f on %d regressors, p = %.3f\n", white.statistic, white.regressor_count,
                white.p_value);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "demo: %s\n", e.what());
    return 1;
  }
  return 0;
}
