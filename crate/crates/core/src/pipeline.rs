//! Config-driven orchestration of the full estimation pipeline.
//!
//! A [`PipelineSpec`] bundles every modelling choice: the series basis, the
//! index grid, the bound construction, optional instrument intersection and
//! selection restriction, the direction set, the IV weight matrix, and the
//! jitter stage. [`prepare`] performs the data-dependent setup once
//! (including the two-pass jitter: preliminary fit, noise scale, refit on
//! jittered data); [`fit_support`] then maps any observation-weight vector
//! to a support surface through the identical arithmetic path — the
//! bootstrap is exactly a reweighted call of the same function.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, BasisMatrix, BasisSpec};
use crate::bounds::{
    apply_selection_restriction, fit_bounding_surface, intersect_over_instrument, BoundMethod,
    BoundingSurface, IndexGrid, SelectionRestriction,
};
use crate::dataset::{Dataset, JitterPlan};
use crate::error::{Error, Result};
use crate::support::{
    compute_support_surface, effective_instrument, DirectionSet, SupportSurface,
};

/// Declarative direction-set choice.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DirectionsSpec {
    AxesPm,
    Circle { count: usize },
    SphereSample { count: usize, seed: u64 },
}

impl DirectionsSpec {
    pub fn build(&self, d: usize) -> Result<DirectionSet> {
        match self {
            DirectionsSpec::AxesPm => Ok(DirectionSet::axes_pm(d)),
            DirectionsSpec::Circle { count } => {
                if d != 2 {
                    return Err(Error::Parameter(format!(
                        "circle directions require d = 2, got d = {d}"
                    )));
                }
                DirectionSet::circle(*count)
            }
            DirectionsSpec::SphereSample { count, seed } => {
                DirectionSet::sphere_sample(d, *count, *seed)
            }
        }
    }

    /// Dimension-aware default: a dense circle in the plane, a seeded
    /// spherical sample above it, plus the axes either way.
    pub fn default_for(d: usize) -> Self {
        if d == 2 {
            DirectionsSpec::Circle { count: 64 }
        } else if d == 1 {
            DirectionsSpec::AxesPm
        } else {
            DirectionsSpec::SphereSample { count: 64, seed: 0 }
        }
    }
}

/// Jitter stage configuration. Columns default to the automatically
/// detected discrete x-columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JitterConfig {
    pub delta: f64,
    #[serde(default)]
    pub columns: Option<Vec<String>>,
    #[serde(default = "default_max_unique")]
    pub max_unique: usize,
    pub seed: u64,
}

fn default_max_unique() -> usize {
    20
}

/// Everything the pipeline needs to turn a dataset into a support surface.
#[derive(Debug, Clone)]
pub struct PipelineSpec {
    pub basis: BasisSpec,
    pub grid: IndexGrid,
    pub method: BoundMethod,
    pub restriction: Option<SelectionRestriction>,
    /// When set, bounds come from instrument intersection over this support.
    pub v_support: Option<Vec<f64>>,
    pub directions: DirectionsSpec,
    pub weight_matrix: Option<DMatrix<f64>>,
    pub jitter: Option<JitterConfig>,
    /// Opt-in repair of crossing cells before the support stage.
    pub sort_crossings: bool,
}

/// Data-dependent state shared by the base fit and all bootstrap draws:
/// the (possibly jittered) dataset, design blocks, prebuilt basis, and the
/// direction set. Standardization and basis functions are frozen here, so
/// bootstrap draws reweight estimation without re-deriving the basis.
pub struct Prepared {
    pub ds: Dataset,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub z_descriptor: String,
    pub basis: BasisMatrix,
    pub directions: DirectionSet,
    pub jitter_plan: Option<JitterPlan>,
}

fn build_pipeline_basis(ds: &Dataset, spec: &PipelineSpec) -> Result<BasisMatrix> {
    if spec.v_support.is_some() {
        build_basis(&ds.xv_matrix()?, &spec.basis)
    } else {
        build_basis(&ds.x_matrix()?, &spec.basis)
    }
}

/// Runs the data-dependent setup. With jittering enabled this performs the
/// documented two-pass scheme: fit the bounds once on the raw data to get
/// the plug-in magnitudes for the noise scale, jitter, then rebuild the
/// design on the jittered data.
pub fn prepare(ds: &Dataset, spec: &PipelineSpec) -> Result<Prepared> {
    let (working, jitter_plan) = match &spec.jitter {
        None => (ds.clone(), None),
        Some(cfg) => {
            let prelim_basis = build_pipeline_basis(ds, spec)?;
            let prelim = fit_bounds_on(ds, &prelim_basis, spec, None)?;
            let columns = match &cfg.columns {
                Some(cols) => cols.clone(),
                None => ds.discrete_columns(cfg.max_unique),
            };
            if columns.is_empty() {
                return Err(Error::Parameter(
                    "jitter requested but no discrete columns found or supplied".into(),
                ));
            }
            let plan = JitterPlan::new(cfg.delta, columns, cfg.seed, prelim.magnitudes())?;
            let jittered = ds.jitter_discrete(&plan)?;
            (jittered, Some(plan))
        }
    };
    let basis = build_pipeline_basis(&working, spec)?;
    let x = working.x_matrix()?;
    let (z, z_descriptor) = effective_instrument(&working, spec.weight_matrix.as_ref())?;
    let directions = spec.directions.build(x.ncols())?;
    Ok(Prepared {
        ds: working,
        x,
        z,
        z_descriptor,
        basis,
        directions,
        jitter_plan,
    })
}

fn fit_bounds_on(
    ds: &Dataset,
    basis: &BasisMatrix,
    spec: &PipelineSpec,
    weights: Option<&[f64]>,
) -> Result<BoundingSurface> {
    let mut bs = match &spec.v_support {
        Some(support) => {
            intersect_over_instrument(ds, basis, &spec.grid, support, &spec.method, weights)?
        }
        None => fit_bounding_surface(ds, basis, &spec.grid, &spec.method, weights)?,
    };
    if let Some(restriction) = &spec.restriction {
        bs = apply_selection_restriction(&bs, restriction, ds, basis, &spec.grid, weights)?;
    }
    if spec.sort_crossings {
        bs = bs.with_sorted_cells();
    }
    Ok(bs)
}

/// Fits the bounding surfaces under the given bootstrap weights (`None`
/// for the base estimator).
pub fn fit_bounds(prep: &Prepared, spec: &PipelineSpec, weights: Option<&[f64]>) -> Result<BoundingSurface> {
    fit_bounds_on(&prep.ds, &prep.basis, spec, weights)
}

/// The full reweighted estimation map: bounds, cross-moment matrix, and
/// support surface, all under the same observation weights.
pub fn fit_support(
    prep: &Prepared,
    spec: &PipelineSpec,
    weights: Option<&[f64]>,
) -> Result<SupportSurface> {
    let bs = fit_bounds(prep, spec, weights)?;
    let w = prep.ds.effective_weights(weights)?;
    compute_support_surface(
        &prep.x,
        &prep.z,
        &bs,
        &prep.directions,
        &w,
        &prep.z_descriptor,
    )
}

/// Prepared state, base bounds, and base support surface in one call.
pub fn run_pipeline(
    ds: &Dataset,
    spec: &PipelineSpec,
) -> Result<(Prepared, BoundingSurface, SupportSurface)> {
    let prep = prepare(ds, spec)?;
    let bs = fit_bounds(&prep, spec, None)?;
    let w = prep.ds.effective_weights(None)?;
    let ss = compute_support_surface(
        &prep.x,
        &prep.z,
        &bs,
        &prep.directions,
        &w,
        &prep.z_descriptor,
    )?;
    Ok((prep, bs, ss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Roles, INTERCEPT};
    use indexmap::IndexMap;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn interval_ds(n: usize, seed: u64, discrete: bool) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y0 = Vec::new();
        let mut y1 = Vec::new();
        let mut x1 = Vec::new();
        for _ in 0..n {
            let x = if discrete {
                (rng.random::<f64>() * 3.0).floor()
            } else {
                rng.random::<f64>() * 2.0 - 1.0
            };
            let y = 1.0 + 0.5 * x + rng.random::<f64>() - 0.5;
            y0.push(y - 0.25);
            y1.push(y + 0.25);
            x1.push(x);
        }
        let mut cols = IndexMap::new();
        cols.insert("y0".to_string(), y0);
        cols.insert("y1".to_string(), y1);
        cols.insert("x1".to_string(), x1);
        Dataset::new(
            cols,
            Roles {
                y_lower: Some("y0".into()),
                y_upper: Some("y1".into()),
                x: vec![INTERCEPT.into(), "x1".into()],
                ..Roles::default()
            },
        )
        .unwrap()
    }

    fn mean_spec() -> PipelineSpec {
        PipelineSpec {
            basis: BasisSpec::polynomial(1),
            grid: IndexGrid::singleton(0.0),
            method: BoundMethod::MeanInterval,
            restriction: None,
            v_support: None,
            directions: DirectionsSpec::AxesPm,
            weight_matrix: None,
            jitter: None,
            sort_crossings: false,
        }
    }

    #[test]
    fn pipeline_runs_end_to_end() {
        let ds = interval_ds(80, 1, false);
        let (prep, bs, ss) = run_pipeline(&ds, &mean_spec()).unwrap();
        assert_eq!(bs.n_rows(), 80);
        assert_eq!(ss.sigma.nrows(), prep.directions.len());
        // band is nondegenerate: positive width on the intercept direction
        let (plus, minus) = prep.directions.axis_pair(0).unwrap();
        assert!(ss.sigma[(plus, 0)] + ss.sigma[(minus, 0)] > 0.0);
    }

    #[test]
    fn jitter_two_pass_records_plan_and_changes_design() {
        let ds = interval_ds(120, 2, true);
        let mut spec = mean_spec();
        spec.jitter = Some(JitterConfig {
            delta: 0.05,
            columns: None,
            max_unique: 10,
            seed: 9,
        });
        let (prep, _, _) = run_pipeline(&ds, &spec).unwrap();
        let plan = prep.jitter_plan.as_ref().unwrap();
        assert_eq!(plan.target_columns, vec!["x1".to_string()]);
        assert!(plan.sigma_delta > 0.0);
        assert_eq!(prep.ds.roles.x[1], "x1_jit");
        // reruns are deterministic
        let (prep2, _, ss2) = run_pipeline(&ds, &spec).unwrap();
        assert_eq!(
            prep.ds.column("x1_jit").unwrap(),
            prep2.ds.column("x1_jit").unwrap()
        );
        let (_, _, ss1) = run_pipeline(&ds, &spec).unwrap();
        assert_eq!(ss1.sigma, ss2.sigma);
    }

    #[test]
    fn unit_weights_reproduce_base_exactly() {
        let ds = interval_ds(60, 3, false);
        let spec = mean_spec();
        let (prep, _, base) = run_pipeline(&ds, &spec).unwrap();
        let ones = vec![1.0; 60];
        let rerun = fit_support(&prep, &spec, Some(&ones)).unwrap();
        assert_eq!(base.sigma, rerun.sigma);
        assert_eq!(base.sigma_hat.matrix, rerun.sigma_hat.matrix);
    }
}
