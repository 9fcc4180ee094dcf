//! Uniform depth mesh, finite-difference stencils and mesh quadrature.

use num_complex::Complex64;

/// Uniform mesh on `[0, 1]` in the vertical coordinate (bottom at 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<f64>,
    pub step: f64,
}

impl Mesh {
    pub fn uniform(points: usize) -> Mesh {
        assert!(points >= 2, "mesh needs at least two points");
        let step = 1.0 / (points - 1) as f64;
        let nodes = (0..points).map(|k| k as f64 * step).collect();
        Mesh { nodes, step }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Window of `width` consecutive node indices around `x`, clamped to the mesh.
    pub(crate) fn window(&self, x: f64, width: usize) -> usize {
        let n = self.len();
        let cell = ((x / self.step).floor() as isize).clamp(0, n as isize - 2);
        let start = cell - (width as isize - 1) / 2;
        start.clamp(0, (n - width) as isize) as usize
    }

    /// Local cubic interpolation of nodal samples.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let start = self.window(x, 4);
        let xs = &self.nodes[start..start + 4];
        lagrange_weights(xs, x)
            .iter()
            .zip(&values[start..start + 4])
            .map(|(w, v)| w * v)
            .sum()
    }

    pub fn interpolate_complex(&self, values: &[Complex64], x: f64) -> Complex64 {
        let start = self.window(x, 4);
        let xs = &self.nodes[start..start + 4];
        lagrange_weights(xs, x)
            .iter()
            .zip(&values[start..start + 4])
            .map(|(w, v)| v * *w)
            .sum()
    }
}

/// Lagrange basis values at `x` for the nodes `xs`.
pub(crate) fn lagrange_weights(xs: &[f64], x: f64) -> Vec<f64> {
    (0..xs.len())
        .map(|j| {
            xs.iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, &xk)| (x - xk) / (xs[j] - xk))
                .product()
        })
        .collect()
}

/// Fornberg's recursion: weights `c[d][j]` approximating the `d`-th
/// derivative at `z` from samples at `xs[j]`, for `d = 0..=max_order`.
pub fn fornberg_weights(z: f64, xs: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - z;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
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

/// Banded finite-difference operator for one derivative order.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffOperator {
    pub order: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl DiffOperator {
    /// Centered stencils in the interior, one-sided stencils of `order +
    /// accuracy` points where the centered one would leave the mesh.
    pub fn new(mesh: &Mesh, order: usize, accuracy: usize) -> DiffOperator {
        let n = mesh.len();
        let centered = 2 * order.div_ceil(2) - 1 + accuracy;
        let half = centered / 2;
        let one_sided = order + accuracy;
        assert!(one_sided <= n, "mesh too coarse for the requested stencil");
        let rows = (0..n)
            .map(|i| {
                let (start, width) = if i >= half && i + half < n {
                    (i - half, centered)
                } else if i < half {
                    (0, one_sided)
                } else {
                    (n - one_sided, one_sided)
                };
                let xs = &mesh.nodes[start..start + width];
                let w = fornberg_weights(mesh.nodes[i], xs, order);
                (0..width).map(|j| (start + j, w[order][j])).collect()
            })
            .collect();
        DiffOperator { order, rows }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * v[j]).sum())
            .collect()
    }

    pub fn apply_complex(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| v[j] * w).sum())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Derivative operators of orders 1 to 4 at a common accuracy.
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub d1: DiffOperator,
    pub d2: DiffOperator,
    pub d3: DiffOperator,
    pub d4: DiffOperator,
}

impl Derivatives {
    pub fn new(mesh: &Mesh, accuracy: usize) -> Derivatives {
        Derivatives {
            d1: DiffOperator::new(mesh, 1, accuracy),
            d2: DiffOperator::new(mesh, 2, accuracy),
            d3: DiffOperator::new(mesh, 3, accuracy),
            d4: DiffOperator::new(mesh, 4, accuracy),
        }
    }
}

/// Weights over each cell `[x_k, x_{k+1}]` of the quintic through six nearby
/// nodes. Returned as `(window start, weights)` per cell.
fn cell_integration_weights(mesh: &Mesh) -> Vec<(usize, [f64; 6])> {
    let n = mesh.len();
    let width = 6.min(n);
    let rule = crate::special::gauss_legendre(3).expect("three-point rule");
    (0..n - 1)
        .map(|k| {
            let start = (k as isize - 2).clamp(0, (n - width) as isize) as usize;
            let xs = &mesh.nodes[start..start + width];
            let cell = rule.mapped(mesh.nodes[k], mesh.nodes[k + 1]);
            let mut w = [0.0; 6];
            for (&q, &wq) in cell.nodes.iter().zip(&cell.weights) {
                for (wj, lj) in w.iter_mut().zip(lagrange_weights(xs, q)) {
                    *wj += wq * lj;
                }
            }
            (start, w)
        })
        .collect()
}

/// Running integral `int_0^{x_k} f` at every node, sixth-order accurate.
pub fn cumulative_integral(mesh: &Mesh, f: &[f64]) -> Vec<f64> {
    let width = 6.min(mesh.len());
    let mut out = Vec::with_capacity(mesh.len());
    out.push(0.0);
    let mut acc = 0.0;
    for (start, w) in cell_integration_weights(mesh) {
        acc += (0..width).map(|j| w[j] * f[start + j]).sum::<f64>();
        out.push(acc);
    }
    out
}

/// Cells this close to a wall are integrated pointwise by
/// [`cumulative_integral_with`].
pub(crate) const WALL_CELLS: usize = 8;

/// Running integral like [`cumulative_integral`], except that cells within
/// [`WALL_CELLS`] of either wall are integrated from pointwise values of
/// `f`, graded geometrically into the wall cells themselves. Suited to
/// integrands like `(1 - x) ln(1 - x)` that are smooth only in the interior.
pub(crate) fn cumulative_integral_with(mesh: &Mesh, nodal: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = mesh.len();
    let width = 6.min(n);
    let rule = crate::special::gauss_legendre(8).expect("eight-point rule");
    let mut out = Vec::with_capacity(n);
    out.push(0.0);
    let mut acc = 0.0;
    for (k, (start, w)) in cell_integration_weights(mesh).into_iter().enumerate() {
        let (lo, hi) = (mesh.nodes[k], mesh.nodes[k + 1]);
        let piece = if k < WALL_CELLS || k + 1 + WALL_CELLS >= n {
            let mut pieces = vec![(lo, hi)];
            if k == 0 || k + 2 == n {
                pieces = graded_pieces(lo, hi, k == 0);
            }
            pieces
                .into_iter()
                .map(|(a, b)| rule.mapped(a, b).integrate(&f))
                .sum::<f64>()
        } else {
            (0..width).map(|j| w[j] * nodal[start + j]).sum::<f64>()
        };
        acc += piece;
        out.push(acc);
    }
    out
}

/// Geometric subdivision of `[lo, hi]` towards one end.
fn graded_pieces(lo: f64, hi: f64, towards_lo: bool) -> Vec<(f64, f64)> {
    let ratio: f64 = 0.15;
    let levels = 14;
    let len = hi - lo;
    let mut cuts: Vec<f64> = (0..levels).map(|i| len * ratio.powi(i)).collect();
    cuts.push(0.0);
    cuts.windows(2)
        .map(|c| {
            if towards_lo {
                (lo + c[1], lo + c[0])
            } else {
                (hi - c[0], hi - c[1])
            }
        })
        .collect()
}

/// `int_0^1 f`, sixth-order accurate.
pub fn integral(mesh: &Mesh, f: &[f64]) -> f64 {
    *cumulative_integral(mesh, f).last().unwrap()
}

/// Sup-norm of the difference of two profiles.
pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
