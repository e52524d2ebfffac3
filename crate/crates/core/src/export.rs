//! Machine-readable exports: long-format CSV for surfaces and polygons.
//!
//! Values are written in shortest round-trip form so downstream plotting
//! reproduces the computed numbers exactly.

use std::io::Write;
use std::path::Path;

use crate::bounds::BoundingSurface;
use crate::error::Result;
use crate::support::{Polygon2D, SupportSurface};

/// Long format: `row, alpha, theta0, theta1`. For envelope surfaces the
/// `row` column carries the evaluation point index.
pub fn write_bounding_surface<W: Write>(bs: &BoundingSurface, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "alpha", "theta0", "theta1"])?;
    for i in 0..bs.theta0.nrows() {
        for (a, alpha) in bs.grid.values().iter().enumerate() {
            w.write_record(&[
                i.to_string(),
                format!("{alpha}"),
                format!("{}", bs.theta0[(i, a)]),
                format!("{}", bs.theta1[(i, a)]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_bounding_surface_csv<P: AsRef<Path>>(bs: &BoundingSurface, path: P) -> Result<()> {
    write_bounding_surface(bs, std::fs::File::create(path)?)
}

/// Long format: `q_index, qx1..qxd, alpha, sigma`.
pub fn write_support_surface<W: Write>(ss: &SupportSurface, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = ss.directions.dim();
    let mut header: Vec<String> = vec!["q_index".into()];
    for j in 1..=d {
        header.push(format!("qx{j}"));
    }
    header.push("alpha".into());
    header.push("sigma".into());
    w.write_record(&header)?;
    for (qi, q) in ss.directions.dirs().iter().enumerate() {
        for (a, alpha) in ss.grid.values().iter().enumerate() {
            let mut record: Vec<String> = vec![qi.to_string()];
            for j in 0..d {
                record.push(format!("{}", q[j]));
            }
            record.push(format!("{alpha}"));
            record.push(format!("{}", ss.sigma[(qi, a)]));
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_support_surface_csv<P: AsRef<Path>>(ss: &SupportSurface, path: P) -> Result<()> {
    write_support_surface(ss, std::fs::File::create(path)?)
}

/// Ordered vertex list, one row per vertex.
pub fn write_polygon<W: Write>(poly: &Polygon2D, alpha: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vertex", "alpha", "x", "y"])?;
    for (i, v) in poly.vertices.iter().enumerate() {
        w.write_record(&[
            i.to_string(),
            format!("{alpha}"),
            format!("{}", v[0]),
            format!("{}", v[1]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_polygon_csv<P: AsRef<Path>>(poly: &Polygon2D, alpha: f64, path: P) -> Result<()> {
    write_polygon(poly, alpha, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{fit_bounding_surface, BoundMethod, IndexGrid};
    use crate::basis::{build_basis, BasisSpec};
    use crate::dataset::{Dataset, Roles, INTERCEPT};
    use indexmap::IndexMap;

    #[test]
    fn bounding_surface_export_has_one_row_per_cell() {
        let mut cols = IndexMap::new();
        cols.insert("y0".to_string(), vec![1.0, 2.0, 3.0]);
        cols.insert("y1".to_string(), vec![2.0, 3.0, 4.0]);
        let roles = Roles {
            y_lower: Some("y0".into()),
            y_upper: Some("y1".into()),
            x: vec![INTERCEPT.into()],
            ..Roles::default()
        };
        let ds = Dataset::new(cols, roles).unwrap();
        let x = ds.x_matrix().unwrap();
        let basis = build_basis(&x, &BasisSpec::polynomial(0)).unwrap();
        let grid = IndexGrid::quantiles(vec![0.25, 0.5, 0.75]).unwrap();
        let bs = fit_bounding_surface(&ds, &basis, &grid, &BoundMethod::QuantileInterval, None)
            .unwrap();
        let mut buf = Vec::new();
        write_bounding_surface(&bs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // header + 3 rows x 3 levels
        assert_eq!(text.lines().count(), 1 + 9);
        assert!(text.lines().next().unwrap().starts_with("row,alpha"));
    }
}
