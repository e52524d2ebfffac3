use blapprox::mc::*;
use blapprox::bounds::IndexGrid;
use blapprox::pipeline::{prepare, fit_bounds, PipelineSpec, DirectionsSpec};
use blapprox::basis::BasisSpec;
use blapprox::bounds::BoundMethod;
use blapprox::support::compute_support_surface;

fn main() {
    let spec = DgpSpec {
        kind: DgpKind::IntervalQuantile,
        ..DgpSpec::interval_mean_default()
    };
    let grid = IndexGrid::quantiles(vec![0.35, 0.5, 0.65]).unwrap();
    let pipe = PipelineSpec {
        basis: BasisSpec::polynomial(1),
        grid: grid.clone(),
        method: BoundMethod::QuantileInterval,
        restriction: None,
        v_support: None,
        directions: DirectionsSpec::AxesPm,
        weight_matrix: None,
        jitter: None,
        sort_crossings: false,
    };
    let n = 50_000;
    let ds = simulate_dgp(&spec, n, 103).unwrap();
    let prep = prepare(&ds, &pipe).unwrap();
    let bs = fit_bounds(&prep, &pipe, None).unwrap();
    let w = prep.ds.effective_weights(None).unwrap();
    let ss = compute_support_surface(&prep.x, &prep.z, &bs, &prep.directions, &w, "t").unwrap();
    // check the raw quantile fit itself: theta1 at alpha=0.35 should be
    // x'beta + Q_eps(0.35) + c; print fitted intercept/slope via two points
    for (a, alpha) in grid.values().iter().enumerate() {
        let q_eps = 0.5 * statrs::distribution::ContinuousCDF::inverse_cdf(
            &statrs::distribution::Normal::new(0.0, 1.0).unwrap(), *alpha);
        println!("alpha={alpha}: theoretical theta1(x=0) = {}", 1.0 + q_eps + 0.25);
        // row with x1 closest to 0
        let x1 = prep.x.column(1);
        let mut best = 0usize;
        for i in 0..n { if x1[i].abs() < x1[best].abs() { best = i; } }
        println!("  fitted theta1 at x~0 (x1={:.4}): {:.4}", x1[best], bs.theta1[(best, a)]);
        for (qi, q) in prep.directions.dirs().iter().enumerate() {
            let oracle = population_support_oracle(&spec, q, *alpha, 500_000).unwrap();
            println!("  dir {qi} ({:+.0},{:+.0}): empirical {:.5} oracle {:.5} diff {:.5}",
                q[0], q[1], ss.sigma[(qi,a)], oracle, (ss.sigma[(qi,a)]-oracle).abs());
        }
    }
}
