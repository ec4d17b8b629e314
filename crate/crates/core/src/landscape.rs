//! Two-dimensional loss-surface slices `f(a, b) = L(theta + a*dx + b*dy)`
//! around a parameter point, with random directions scaled block by block.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::rng::stream_key;
use crate::tensor::{ModelParams, RngStream, Tensor};

/// How a Gaussian direction block is scaled to its parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionNorm {
    /// Same Frobenius norm as the parameter block.
    #[default]
    Filter,
    /// Same element variance as the parameter block.
    Variance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionPair {
    pub dx: ModelParams,
    pub dy: ModelParams,
    pub seed: u64,
}

fn variance(t: &Tensor) -> f64 {
    let n = t.len() as f64;
    let m = t.sum() / n;
    t.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

fn scaled_block(param: &Tensor, rng: &mut RngStream, norm: DirectionNorm) -> Tensor {
    let mut d = Tensor::zeros(param.shape());
    for v in d.data_mut() {
        *v = rng.normal();
    }
    let factor = match norm {
        DirectionNorm::Filter => {
            let dn = d.norm();
            if dn > 0.0 {
                param.norm() / dn
            } else {
                0.0
            }
        }
        DirectionNorm::Variance => {
            let dv = variance(&d);
            if dv > 0.0 {
                (variance(param) / dv).sqrt()
            } else {
                0.0
            }
        }
    };
    d.scale(factor)
}

fn sample_one(params: &ModelParams, seed: u64, axis: u64, norm: DirectionNorm) -> ModelParams {
    params
        .iter()
        .enumerate()
        .map(|(i, (name, p))| {
            let mut rng = RngStream::new(seed, stream_key(&[0x6469_72, axis, i as u64]));
            (name.clone(), scaled_block(p, &mut rng, norm))
        })
        .collect()
}

/// Two directions with i.i.d. standard Gaussian entries drawn from independent
/// streams, each block rescaled to its parameter block.
pub fn sample_directions(
    params: &ModelParams,
    seed: u64,
    norm: DirectionNorm,
) -> Result<DirectionPair> {
    if params.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot sample directions for an empty parameter set".into(),
        ));
    }
    Ok(DirectionPair {
        dx: sample_one(params, seed, 0, norm),
        dy: sample_one(params, seed, 1, norm),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `values[i][j] = f(alphas[i], betas[j])`; non-finite cells hold `+inf`.
    pub values: Vec<Vec<f64>>,
    pub center: f64,
}

/// `n` points over `[-r, r]` with an exact zero in the middle.
pub fn grid_axis(r: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let c = ((n - 1) / 2) as f64;
    (0..n).map(|i| r * (i as f64 - c) / c).collect()
}

/// Evaluates `loss` on the `n x n` grid. The center cell is `loss(params)`
/// itself. A cell whose loss is non-finite or fails numerically is recorded as
/// `+inf`.
pub fn evaluate_surface<F>(
    params: &ModelParams,
    dirs: &DirectionPair,
    grid_range: f64,
    grid_points: usize,
    loss: F,
) -> Result<SurfaceGrid>
where
    F: Fn(&ModelParams) -> Result<f64>,
{
    if grid_points == 0 || grid_points % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid_points must be odd, got {grid_points}"
        )));
    }
    if !(grid_range > 0.0) || !grid_range.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "grid_range must be positive, got {grid_range}"
        )));
    }
    let cell = |p: &ModelParams| -> Result<f64> {
        match loss(p) {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Ok(f64::INFINITY),
            Err(e) if e.is_numeric() => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    let center = cell(params)?;
    let alphas = grid_axis(grid_range, grid_points);
    let betas = alphas.clone();
    let mut values = Vec::with_capacity(grid_points);
    for &a in &alphas {
        let mut row = Vec::with_capacity(grid_points);
        for &b in &betas {
            if a == 0.0 && b == 0.0 {
                row.push(center);
            } else {
                row.push(cell(&params.offset(&[(&dirs.dx, a), (&dirs.dy, b)])?)?);
            }
        }
        values.push(row);
    }
    Ok(SurfaceGrid {
        alphas,
        betas,
        values,
        center,
    })
}

impl SurfaceGrid {
    /// Header `alpha,beta,loss`, one row per cell in row-major order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,beta,loss\n");
        for (a, row) in self.alphas.iter().zip(&self.values) {
            for (b, v) in self.betas.iter().zip(row) {
                out.push_str(&format!("{a},{b},{v}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlatnessMetrics {
    /// Mean of `f - f(0,0)` over finite cells.
    pub mean_rise: f64,
    /// Largest rise; `+inf` if any cell is non-finite.
    pub max_rise: f64,
    /// Smallest off-center radius `sqrt(a^2 + b^2)` with `f >= 2 f(0,0)`, or
    /// `+inf`.
    pub radius_at_2x: f64,
}

pub fn flatness_metrics(grid: &SurfaceGrid) -> Result<FlatnessMetrics> {
    if !grid.center.is_finite() {
        return Err(Error::InvalidArgument(
            "surface center is not finite".into(),
        ));
    }
    let mut sum = 0.0;
    let mut finite = 0usize;
    let mut max_rise = f64::NEG_INFINITY;
    let mut radius = f64::INFINITY;
    for (a, row) in grid.alphas.iter().zip(&grid.values) {
        for (b, &v) in grid.betas.iter().zip(row) {
            let rise = v - grid.center;
            max_rise = max_rise.max(rise);
            if v.is_finite() {
                sum += rise;
                finite += 1;
            }
            let r = a.hypot(*b);
            if r > 0.0 && v >= 2.0 * grid.center {
                radius = radius.min(r);
            }
        }
    }
    if finite == 0 {
        return Err(Error::InvalidArgument(
            "every surface cell is infinite".into(),
        ));
    }
    Ok(FlatnessMetrics {
        mean_rise: sum / finite as f64,
        max_rise,
        radius_at_2x: radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        let mut p = ModelParams::new();
        p.insert(
            "a",
            Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap(),
        );
        p.insert("b", Tensor::vector(vec![0.0, 0.0, 0.0]));
        p.insert("c", Tensor::vector(vec![4.0, 1.0, -1.0, 2.0, 0.25]));
        p
    }

    fn sq_norm(p: &ModelParams) -> Result<f64> {
        Ok(p.iter().map(|(_, t)| t.dot(t).unwrap()).sum())
    }

    #[test]
    fn block_norms_match() {
        let p = params();
        let d = sample_directions(&p, 3, DirectionNorm::Filter).unwrap();
        for (name, t) in p.iter() {
            for dir in [&d.dx, &d.dy] {
                assert!((dir.get(name).unwrap().norm() - t.norm()).abs() < 1e-9);
            }
        }
        assert!(d.dx.get("b").unwrap().data().iter().all(|&v| v == 0.0));
        assert_ne!(d.dx, d.dy);
        assert_eq!(d, sample_directions(&p, 3, DirectionNorm::Filter).unwrap());
        assert!(sample_directions(&ModelParams::new(), 3, DirectionNorm::Filter).is_err());
    }

    #[test]
    fn variance_matching() {
        let p = params();
        let d = sample_directions(&p, 5, DirectionNorm::Variance).unwrap();
        let c = p.get("c").unwrap();
        assert!((variance(d.dx.get("c").unwrap()) - variance(c)).abs() < 1e-9);
    }

    #[test]
    fn axis_has_exact_center() {
        let a = grid_axis(1.0, 21);
        assert_eq!(a.len(), 21);
        assert_eq!(a[10], 0.0);
        assert_eq!(a[0], -1.0);
        assert_eq!(a[20], 1.0);
        assert_eq!(grid_axis(0.7, 1), vec![0.0]);
        for i in 0..21 {
            assert_eq!(a[i], -a[20 - i]);
        }
    }

    #[test]
    fn quadratic_closed_form() {
        let zero: ModelParams = params()
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
            .collect();
        let d = sample_directions(&params(), 7, DirectionNorm::Filter).unwrap();
        let g = evaluate_surface(&zero, &d, 1.0, 11, sq_norm).unwrap();
        let xx = sq_norm(&d.dx).unwrap();
        let yy = sq_norm(&d.dy).unwrap();
        let xy: f64 =
            d.dx.iter()
                .map(|(n, t)| t.dot(d.dy.get(n).unwrap()).unwrap())
                .sum();
        for (i, a) in g.alphas.iter().enumerate() {
            for (j, b) in g.betas.iter().enumerate() {
                let expect = a * a * xx + b * b * yy + 2.0 * a * b * xy;
                assert!((g.values[i][j] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn center_is_unperturbed_loss() {
        let p = params();
        let d = sample_directions(&p, 1, DirectionNorm::Filter).unwrap();
        let loss = |q: &ModelParams| Ok(sq_norm(q)?.sqrt() + 0.1);
        let g = evaluate_surface(&p, &d, 0.5, 5, loss).unwrap();
        assert_eq!(g.values[2][2].to_bits(), loss(&p).unwrap().to_bits());
        assert_eq!(g.center.to_bits(), loss(&p).unwrap().to_bits());
        let one = evaluate_surface(&p, &d, 0.5, 1, loss).unwrap();
        assert_eq!(one.values, vec![vec![g.center]]);
        assert!(evaluate_surface(&p, &d, 0.5, 4, loss).is_err());
        assert!(evaluate_surface(&p, &d, 0.0, 5, loss).is_err());
    }

    #[test]
    fn swapping_directions_transposes() {
        let p = params();
        let d = sample_directions(&p, 2, DirectionNorm::Filter).unwrap();
        let swapped = DirectionPair {
            dx: d.dy.clone(),
            dy: d.dx.clone(),
            seed: d.seed,
        };
        let loss = |q: &ModelParams| Ok(q.get("c")?.data().iter().map(|v| v.sin()).sum::<f64>());
        let g = evaluate_surface(&p, &d, 1.0, 7, loss).unwrap();
        let s = evaluate_surface(&p, &swapped, 1.0, 7, loss).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(g.values[i][j].to_bits(), s.values[j][i].to_bits());
            }
        }
    }

    #[test]
    fn non_finite_cells_flagged() {
        let p = params();
        let d = sample_directions(&p, 2, DirectionNorm::Filter).unwrap();
        let loss = |q: &ModelParams| {
            let v = q.get("a")?.data()[0];
            Ok(if v > 1.5 { f64::NAN } else { 1.0 })
        };
        let g = evaluate_surface(&p, &d, 1.0, 5, loss).unwrap();
        assert!(g.values.iter().flatten().any(|v| *v == f64::INFINITY));
        let m = flatness_metrics(&g).unwrap();
        assert_eq!(m.max_rise, f64::INFINITY);
        assert_eq!(m.mean_rise, 0.0);
    }

    #[test]
    fn constant_surface_metrics() {
        let g = SurfaceGrid {
            alphas: grid_axis(1.0, 3),
            betas: grid_axis(1.0, 3),
            values: vec![vec![2.0; 3]; 3],
            center: 2.0,
        };
        let m = flatness_metrics(&g).unwrap();
        assert_eq!(
            (m.mean_rise, m.max_rise, m.radius_at_2x),
            (0.0, 0.0, f64::INFINITY)
        );
    }

    #[test]
    fn quadratic_metrics() {
        // f = 1 + a^2 + b^2 on a 5-point axis over [-1, 1].
        let axis = grid_axis(1.0, 5);
        let values: Vec<Vec<f64>> = axis
            .iter()
            .map(|a| axis.iter().map(|b| 1.0 + a * a + b * b).collect())
            .collect();
        let g = SurfaceGrid {
            alphas: axis.clone(),
            betas: axis.clone(),
            values,
            center: 1.0,
        };
        let m = flatness_metrics(&g).unwrap();
        // Mean of a^2 over the axis is (1 + 0.25 + 0 + 0.25 + 1) / 5 = 0.5.
        assert!((m.mean_rise - 1.0).abs() < 1e-12);
        assert_eq!(m.max_rise, 2.0);
        assert_eq!(m.radius_at_2x, 1.0);
    }

    #[test]
    fn infinite_center_rejected() {
        let g = SurfaceGrid {
            alphas: vec![0.0],
            betas: vec![0.0],
            values: vec![vec![f64::INFINITY]],
            center: f64::INFINITY,
        };
        assert!(flatness_metrics(&g).is_err());
    }

    #[test]
    fn csv_layout() {
        let g = SurfaceGrid {
            alphas: vec![-1.0, 0.0, 1.0],
            betas: vec![-1.0, 0.0, 1.0],
            values: vec![
                vec![1.0, 2.0, 3.0],
                vec![4.0, 5.0, 6.0],
                vec![7.0, 8.0, 9.5],
            ],
            center: 5.0,
        };
        let csv = g.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "alpha,beta,loss");
        assert_eq!(lines[1], "-1,-1,1");
        assert_eq!(lines[2], "-1,0,2");
        assert_eq!(lines[9], "1,1,9.5");
        assert_eq!(lines.len(), 10);
    }
}
