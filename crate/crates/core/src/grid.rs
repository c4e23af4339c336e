//! One-dimensional grids, finite-difference weights and local interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GridKind {
    Uniform,
    /// `x = center + scale * sinh(eta / stretch)` on uniform `eta`; spacing
    /// near `center` is `fine_spacing`.
    Sinh { center: f64, fine_spacing: f64 },
}

/// Nodes on `[-L, L]` with the map derivative `dx/deta` at unit `eta` spacing.
#[derive(Debug, Clone)]
pub struct Grid {
    pub x: Vec<f64>,
    pub metric: Vec<f64>,
    pub kind: GridKind,
    pub half_width: f64,
    eta0: f64,
    stretch: f64,
    scale: f64,
}

impl Grid {
    /// `cells + 1` equally spaced nodes.
    pub fn uniform(half_width: f64, cells: usize) -> Result<Self> {
        if !(half_width > 0.0) || cells < 2 {
            return Err(Error::Input(format!("bad uniform grid: L = {half_width}, N = {cells}")));
        }
        let h = 2.0 * half_width / cells as f64;
        let x = (0..=cells).map(|i| -half_width + h * i as f64).collect();
        Ok(Self {
            x,
            metric: vec![h; cells + 1],
            kind: GridKind::Uniform,
            half_width,
            eta0: 0.0,
            stretch: f64::INFINITY,
            scale: h,
        })
    }

    /// `cells + 1` nodes clustered around `center` with spacing close to
    /// `fine_spacing` there.
    pub fn sinh(half_width: f64, cells: usize, center: f64, fine_spacing: f64) -> Result<Self> {
        if !(half_width > 0.0) || cells < 2 || !(fine_spacing > 0.0) || center.abs() >= half_width {
            return Err(Error::Input(format!(
                "bad sinh grid: L = {half_width}, N = {cells}, center = {center}, h = {fine_spacing}"
            )));
        }
        if fine_spacing * cells as f64 >= 2.0 * half_width {
            return Grid::uniform(half_width, cells);
        }
        // cells = R (asinh((L - c)/(h R)) + asinh((L + c)/(h R))), increasing in R
        let span = |r: f64| {
            let a = fine_spacing * r;
            r * (((half_width - center) / a).asinh() + ((half_width + center) / a).asinh())
        };
        let target = cells as f64;
        let (mut lo, mut hi) = (1e-6, 1.0);
        while span(hi) < target {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::Input("sinh grid stretch did not bracket".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if span(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let stretch = 0.5 * (lo + hi);
        let scale = fine_spacing * stretch;
        let eta0 = -stretch * ((half_width + center) / scale).asinh();
        let mut x = Vec::with_capacity(cells + 1);
        let mut metric = Vec::with_capacity(cells + 1);
        for i in 0..=cells {
            let e = (eta0 + i as f64) / stretch;
            x.push(center + scale * e.sinh());
            metric.push(fine_spacing * e.cosh());
        }
        x[0] = -half_width;
        x[cells] = half_width;
        Ok(Self {
            x,
            metric,
            kind: GridKind::Sinh { center, fine_spacing },
            half_width,
            eta0,
            stretch,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.x.len() - 1
    }

    /// Smallest node spacing.
    pub fn min_spacing(&self) -> f64 {
        self.x.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min)
    }

    /// Local spacing at node `i`.
    pub fn spacing(&self, i: usize) -> f64 {
        self.metric[i]
    }

    /// Fractional node coordinate of `x` (node `i` sits at `i`).
    pub fn index_coord(&self, x: f64) -> f64 {
        match self.kind {
            GridKind::Uniform => (x + self.half_width) / self.scale,
            GridKind::Sinh { center, .. } => self.stretch * ((x - center) / self.scale).asinh() - self.eta0,
        }
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let c = self.index_coord(x).round();
        c.clamp(0.0, (self.len() - 1) as f64) as usize
    }

    /// Start of a `width`-point stencil centred on `i`, shifted inside the grid.
    pub fn stencil_start(&self, i: usize, width: usize) -> usize {
        let half = width / 2;
        i.saturating_sub(half).min(self.len() - width)
    }

    /// Trapezoid quadrature weights.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.len();
        let mut w = vec![0.0; n];
        for i in 0..n - 1 {
            let h = self.x[i + 1] - self.x[i];
            w[i] += 0.5 * h;
            w[i + 1] += 0.5 * h;
        }
        w
    }

    /// Trapezoid integral of `f` over the grid.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.x
            .windows(2)
            .zip(f.windows(2))
            .map(|(x, f)| 0.5 * (x[1] - x[0]) * (f[0] + f[1]))
            .sum()
    }

    /// Weights of every derivative order up to `max_order` at `x0` using a
    /// `width`-point stencil around the nearest node.
    pub fn local_weights(&self, x0: f64, width: usize, max_order: usize) -> (usize, Vec<Vec<f64>>) {
        let start = self.stencil_start(self.nearest(x0), width);
        (start, fornberg(x0, &self.x[start..start + width], max_order))
    }

    /// All derivatives up to `max_order` of `f` at the point `x0`.
    pub fn derivatives_at(&self, f: &[f64], x0: f64, width: usize, max_order: usize) -> Vec<f64> {
        let (start, w) = self.local_weights(x0, width, max_order);
        w.iter()
            .map(|row| row.iter().zip(&f[start..]).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Interpolated value of `f` at `x0`.
    pub fn interpolate(&self, f: &[f64], x0: f64, width: usize) -> f64 {
        self.derivatives_at(f, x0, width, 0)[0]
    }

    /// Node-wise derivative fields of orders `1..=max_order`.
    pub fn derivative_fields(&self, f: &[f64], width: usize, max_order: usize) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut out = vec![vec![0.0; n]; max_order];
        for i in 0..n {
            let start = self.stencil_start(i, width);
            let w = fornberg(self.x[i], &self.x[start..start + width], max_order);
            for (k, row) in w.iter().enumerate().skip(1) {
                out[k - 1][i] = row.iter().zip(&f[start..]).map(|(a, b)| a * b).sum();
            }
        }
        out
    }

    /// Derivatives up to `max_order` at `x0` from `width` nodes spaced about
    /// `target` apart around `x0` (contiguous where the grid is coarser), so
    /// round-off does not swamp high derivatives on very fine grids.
    pub fn strided_derivatives(&self, f: &[f64], x0: f64, target: f64, width: usize, max_order: usize) -> Vec<f64> {
        let n = self.len();
        let i = self.nearest(x0);
        let contiguous = || -> Vec<usize> {
            let start = self.stencil_start(i, width);
            (start..start + width).collect()
        };
        let idx = if self.spacing(i) >= target {
            contiguous()
        } else {
            let half = 0.5 * (width - 1) as f64;
            let reach = half * target;
            let c = x0.clamp(self.x[0] + reach, self.x[n - 1] - reach);
            let idx: Vec<usize> = (0..width).map(|m| self.nearest(c + (m as f64 - half) * target)).collect();
            if idx.windows(2).all(|p| p[1] > p[0]) {
                idx
            } else {
                contiguous()
            }
        };
        let nodes: Vec<f64> = idx.iter().map(|&j| self.x[j]).collect();
        let w = fornberg(x0, &nodes, max_order);
        w.iter().map(|row| row.iter().zip(&idx).map(|(c, &j)| c * f[j]).sum()).collect()
    }

    /// Node-wise derivative fields of orders `1..=max_order` from 9-point
    /// strided stencils.
    pub fn strided_fields(&self, f: &[f64], target: f64, max_order: usize) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut out = vec![vec![0.0; n]; max_order];
        for i in 0..n {
            let d = self.strided_derivatives(f, self.x[i], target, 9, max_order);
            for k in 0..max_order {
                out[k][i] = d[k + 1];
            }
        }
        out
    }
}


/// Precomputed first-derivative weights at every node.
#[derive(Debug, Clone)]
pub struct FirstDerivative {
    width: usize,
    starts: Vec<usize>,
    weights: Vec<f64>,
}

impl FirstDerivative {
    pub fn new(grid: &Grid, width: usize) -> Self {
        let n = grid.len();
        let mut starts = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n * width);
        for i in 0..n {
            let start = grid.stencil_start(i, width);
            let w = fornberg(grid.x[i], &grid.x[start..start + width], 1);
            starts.push(start);
            weights.extend_from_slice(&w[1]);
        }
        Self { width, starts, weights }
    }

    pub fn apply(&self, f: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.at(f, i);
        }
    }

    /// Derivative at node `i`, summed over differences so constants give zero exactly.
    #[inline]
    pub fn at(&self, f: &[f64], i: usize) -> f64 {
        let w = &self.weights[i * self.width..(i + 1) * self.width];
        let fi = f[i];
        w.iter().zip(&f[self.starts[i]..]).map(|(a, b)| a * (b - fi)).sum()
    }
}

/// Finite-difference weights on arbitrary nodes (Fornberg 1988).
///
/// Returns `c[k][j]`: the weight of `nodes[j]` in the `k`-th derivative at `x0`.
pub fn fornberg(x0: f64, nodes: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Lagrange weights for interpolation at fractional offset `t` on the
/// equally spaced nodes `0, 1, ..., n-1`.
pub fn lagrange_unit(t: f64, n: usize, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate().take(n) {
        let mut w = 1.0;
        for m in 0..n {
            if m != j {
                w *= (t - m as f64) / (j as f64 - m as f64);
            }
        }
        *o = w;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_reproduces_polynomials() {
        let nodes = [-0.3, -0.1, 0.05, 0.2, 0.4, 0.7, 1.1];
        let w = fornberg(0.12, &nodes, 5);
        // f = x^5: derivatives at 0.12
        let x0: f64 = 0.12;
        let exact = [x0.powi(5), 5.0 * x0.powi(4), 20.0 * x0.powi(3), 60.0 * x0 * x0, 120.0 * x0, 120.0];
        for k in 0..=5 {
            let v: f64 = w[k].iter().zip(&nodes).map(|(c, x)| c * x.powi(5)).sum();
            assert!((v - exact[k]).abs() < 1e-9 * (1.0 + exact[k].abs()), "order {k}: {v} vs {}", exact[k]);
        }
    }

    #[test]
    fn sinh_grid_hits_ends_and_fine_spacing() {
        let g = Grid::sinh(6.0, 2000, 0.01, 1e-5).unwrap();
        assert_eq!(g.len(), 2001);
        assert_eq!(g.x[0], -6.0);
        assert_eq!(g.x[2000], 6.0);
        assert!(g.x.windows(2).all(|p| p[1] > p[0]));
        let i = g.nearest(0.01);
        let h = g.x[i + 1] - g.x[i];
        assert!((h / 1e-5 - 1.0).abs() < 1e-3, "h = {h}");
        assert!((g.index_coord(g.x[777]) - 777.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_grid_index_map() {
        let g = Grid::uniform(1.0, 100).unwrap();
        assert_eq!(g.nearest(0.0), 50);
        assert!((g.min_spacing() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn interpolation_and_derivatives_on_mapped_grid() {
        let g = Grid::sinh(4.0, 800, 0.0, 1e-3).unwrap();
        let f: Vec<f64> = g.x.iter().map(|x| (2.0 * x).sin()).collect();
        let x0 = 0.3217;
        let d = g.derivatives_at(&f, x0, 9, 3);
        assert!((d[0] - (2.0 * x0).sin()).abs() < 1e-10);
        assert!((d[1] - 2.0 * (2.0 * x0).cos()).abs() < 1e-8);
        assert!((d[3] + 8.0 * (2.0 * x0).cos()).abs() < 1e-4);
        let fd = FirstDerivative::new(&g, 7);
        let mut out = vec![0.0; g.len()];
        fd.apply(&f, &mut out);
        let err = g.x.iter().zip(&out).map(|(x, d)| (d - 2.0 * (2.0 * x).cos()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-5, "max error {err}");
    }

    #[test]
    fn lagrange_partition_of_unity() {
        let mut w = [0.0; 6];
        lagrange_unit(2.37, 6, &mut w);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
