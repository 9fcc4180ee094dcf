//! Linear maps from the concentration perturbation to the perturbed light
//! field.
//!
//! The unknown is `N(x3) = int_1^x3 n_hat`, sampled on the mesh. The
//! collimated part of the perturbed intensity is explicit in `N`. The
//! diffuse part solves, along every discrete ordinate,
//!
//! ```text
//! eta3 dpsi/dx3 + (i a.eta_h + tau_h n_b) psi = Q(x3, eta3)
//! Q = c (n_b G + G_b n_hat) + c A eta3 (n_b q3 - F n_hat) - tau_h I_b^d(x3, eta3) n_hat
//! ```
//!
//! with `c = omega tau_h / 4 pi`, zero incoming radiation at both walls, and
//! `G`, `q3` the total perturbed intensity and vertical flux. Each ordinate is
//! swept once into a dense transfer matrix; summing those gives response
//! matrices, and the scattering self-consistency is then a single complex
//! linear solve.

use faer::prelude::*;
use faer::{c64, Mat};
use std::f64::consts::PI;

use crate::basic_state::BasicState;
use crate::error::{Error, Result};
use crate::grid::{cumulative_integral, Derivatives, DiffOperator};
use crate::params::NumericsConfig;
use crate::special::gauss_legendre;

/// Product quadrature over the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinateSet {
    /// Gauss-Legendre nodes on `(0, 1)`; the downward hemisphere mirrors them.
    pub eta3_nodes: Vec<f64>,
    pub eta3_weights: Vec<f64>,
    /// Uniform azimuths, offset half a step from zero.
    pub zeta_nodes: Vec<f64>,
    pub zeta_weight: f64,
}

impl OrdinateSet {
    pub fn new(per_hemisphere: usize, azimuthal: usize) -> Result<OrdinateSet> {
        if per_hemisphere == 0 || azimuthal == 0 {
            return Err(Error::InvalidParams("ordinate counts must be positive".into()));
        }
        let rule = gauss_legendre(per_hemisphere)?.mapped(0.0, 1.0);
        let step = 2.0 * PI / azimuthal as f64;
        Ok(OrdinateSet {
            eta3_nodes: rule.nodes,
            eta3_weights: rule.weights,
            zeta_nodes: (0..azimuthal).map(|j| (j as f64 + 0.5) * step).collect(),
            zeta_weight: step,
        })
    }

    pub fn from_numerics(numerics: &NumericsConfig) -> Result<OrdinateSet> {
        OrdinateSet::new(numerics.ordinates_per_hemisphere, numerics.azimuthal_points)
    }

    /// Signed polar cosines over both hemispheres with their weights.
    pub fn polar(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.eta3_nodes
            .iter()
            .zip(&self.eta3_weights)
            .flat_map(|(&e, &w)| [(e, w), (-e, w)])
    }

    pub fn total_weight(&self) -> f64 {
        self.polar().map(|(_, w)| w).sum::<f64>() * self.zeta_weight * self.zeta_nodes.len() as f64
    }
}

/// Dense maps from `N` samples to the perturbed light field on the mesh.
#[derive(Debug, Clone)]
pub struct PerturbedRadiationOperators {
    pub wavenumber: f64,
    /// Direction of the wavevector from the `x1` axis, radians.
    pub wavevector_angle: f64,
    /// Total perturbed intensity `G = G^c + G^d`.
    pub map_g: Mat<c64>,
    /// Collimated part `G^c` alone.
    pub map_g_collimated: Mat<c64>,
    pub map_q1: Mat<c64>,
    pub map_q2: Mat<c64>,
    /// Total perturbed vertical flux.
    pub map_q3: Mat<c64>,
    pub ordinates: usize,
}

impl PerturbedRadiationOperators {
    pub fn apply(map: &Mat<c64>, n: &[c64]) -> Vec<c64> {
        (0..map.nrows())
            .map(|i| (0..map.ncols()).map(|j| map[(i, j)] * n[j]).sum())
            .collect()
    }
}

/// `G^c = G_b^c (tau_h / cos a0) N` and `q3^c = -cos a0 G^c`, as diagonal weights.
pub fn perturbed_collimated_map(state: &BasicState) -> (Vec<f64>, Vec<f64>) {
    let p = &state.params;
    let mu0 = p.beam_cosine();
    let g: Vec<f64> = state.gb_collimated().iter().map(|gc| gc * p.optical_depth / mu0).collect();
    let q = g.iter().map(|v| -mu0 * v).collect();
    (g, q)
}

const MOMENTS: usize = 7;

/// `int_0^1 exp(-z t) t^p dt` for `p < 7`.
fn exponential_moments(z: c64) -> [c64; MOMENTS] {
    let mut out = [c64::new(0.0, 0.0); MOMENTS];
    // Upward recurrence is stable once |z| exceeds the highest order.
    if z.norm() < MOMENTS as f64 {
        for (p, o) in out.iter_mut().enumerate() {
            let mut term = c64::new(1.0, 0.0);
            let mut acc = c64::new(0.0, 0.0);
            for k in 0..200 {
                let contrib = term / (p + k + 1) as f64;
                acc += contrib;
                if contrib.norm() < 1e-17 * acc.norm().max(1e-300) && k > 3 {
                    break;
                }
                term *= -z / (k + 1) as f64;
            }
            *o = acc;
        }
    } else {
        let decay = (-z).exp();
        out[0] = (1.0 - decay) / z;
        for p in 1..MOMENTS {
            out[p] = (p as f64 * out[p - 1] - decay) / z;
        }
    }
    out
}

/// Monomial coefficients (in `t`) of the cubic Lagrange basis on `nodes`.
fn cubic_basis(nodes: [f64; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for j in 0..4 {
        let mut poly = [1.0, 0.0, 0.0, 0.0];
        let mut denom = 1.0;
        let mut degree = 0;
        for k in 0..4 {
            if k == j {
                continue;
            }
            // poly *= (t - nodes[k])
            degree += 1;
            for d in (0..=degree).rev() {
                let lower = if d > 0 { poly[d - 1] } else { 0.0 };
                poly[d] = lower - nodes[k] * poly[d];
            }
            denom *= nodes[j] - nodes[k];
        }
        for d in 0..4 {
            out[j][d] = poly[d] / denom;
        }
    }
    out
}

fn eval_cubic(c: &[f64; 4], t: f64) -> f64 {
    ((c[3] * t + c[2]) * t + c[1]) * t + c[0]
}

/// Transfer matrix `L` of one sweep, `psi = L s`, for
/// `dpsi/ds + (i beta + scale n) psi = s` with `psi = 0` at the entry wall.
/// Indices are in propagation order; `running` is `int n` along the path.
fn transfer_matrix(density: &[f64], running: &[f64], step: f64, scale: f64, beta: f64) -> Vec<c64> {
    let m = running.len();
    let mut l = vec![c64::new(0.0, 0.0); m * m];
    let inner = cubic_basis([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
    for i in 0..m - 1 {
        let mean = (running[i + 1] - running[i]) / step;
        let z = c64::new(scale * mean, beta) * step;
        let decay = (-z).exp();
        let start = (i as isize - 1).clamp(0, m as isize - 4) as usize;
        // Local variable t = (s_{i+1} - s) / step runs backwards over the cell.
        let nodes: [f64; 4] = std::array::from_fn(|q| (i + 1) as f64 - (start + q) as f64);
        let basis = cubic_basis(nodes);

        // Curvature of the optical path inside the cell, zero at both ends.
        let mut nc = [0.0; 4];
        for q in 0..4 {
            for d in 0..4 {
                nc[d] += density[start + q] * basis[q][d];
            }
        }
        let path = |t: f64| (0..4).map(|d| nc[d] * t.powi(d as i32 + 1) / (d + 1) as f64).sum::<f64>();
        let whole = path(1.0);
        let bend = |t: f64| (-(scale * step * (path(t) - t * whole))).exp();
        let g = [1.0, bend(1.0 / 3.0), bend(2.0 / 3.0), 1.0];
        let mut gc = [0.0; 4];
        for q in 0..4 {
            for d in 0..4 {
                gc[d] += g[q] * inner[q][d];
            }
        }
        debug_assert!((eval_cubic(&gc, 0.0) - 1.0).abs() < 1e-12);

        let moments = exponential_moments(z);
        let (prev, next) = l.split_at_mut((i + 1) * m);
        let prev = &prev[i * m..];
        let next = &mut next[..m];
        for j in 0..=(i + 2).min(m - 1) {
            next[j] = decay * prev[j];
        }
        for q in 0..4 {
            let mut weight = c64::new(0.0, 0.0);
            for a in 0..4 {
                for b in 0..4 {
                    weight += moments[a + b] * (basis[q][a] * gc[b]);
                }
            }
            next[start + q] += weight * step;
        }
    }
    l
}

/// Everything the sweeps need from the basic state.
struct SweepData {
    m: usize,
    step: f64,
    /// `int_0^x n_b` at the nodes.
    running_up: Vec<f64>,
    /// `int_x^1 n_b`, listed from the top wall down.
    running_down: Vec<f64>,
    density_up: Vec<f64>,
    density_down: Vec<f64>,
    optical_depth: f64,
}

impl SweepData {
    fn new(state: &BasicState) -> SweepData {
        let running_up = cumulative_integral(&state.mesh, &state.n_b);
        let total = *running_up.last().unwrap();
        let running_down = running_up.iter().rev().map(|c| total - c).collect();
        SweepData {
            m: state.mesh.len(),
            step: state.mesh.step,
            running_up,
            running_down,
            density_up: state.n_b.clone(),
            density_down: state.n_b.iter().rev().copied().collect(),
            optical_depth: state.params.optical_depth,
        }
    }

    /// Transfer matrix without attenuation, for signed `eta3` in mesh order.
    fn transfer_phase(&self, eta3: f64, beta: f64) -> Vec<c64> {
        let zeros = vec![0.0; self.m];
        let l = transfer_matrix(&zeros, &zeros, self.step, 0.0, beta / eta3.abs());
        if eta3 > 0.0 {
            l
        } else {
            self.reversed(&l)
        }
    }

    fn reversed(&self, l: &[c64]) -> Vec<c64> {
        let m = self.m;
        let mut out = vec![c64::new(0.0, 0.0); m * m];
        for i in 0..m {
            for j in 0..m {
                out[(m - 1 - i) * m + (m - 1 - j)] = l[i * m + j];
            }
        }
        out
    }

    /// Transfer matrix for signed `eta3` in mesh order.
    fn transfer(&self, eta3: f64, beta: f64) -> Vec<c64> {
        let scale = self.optical_depth / eta3.abs();
        let b = beta / eta3.abs();
        if eta3 > 0.0 {
            transfer_matrix(&self.density_up, &self.running_up, self.step, scale, b)
        } else {
            self.reversed(&transfer_matrix(&self.density_down, &self.running_down, self.step, scale, b))
        }
    }
}

/// Basic-state diffuse intensity on the mesh for each signed polar cosine of
/// the ordinate set, in the order of [`OrdinateSet::polar`].
pub fn basic_diffuse_intensity(state: &BasicState, ordinates: &OrdinateSet) -> Vec<Vec<f64>> {
    basic_diffuse(state, ordinates).into_iter().map(|d| d.intensity).collect()
}

/// Basic diffuse intensity along one polar direction, split as
/// `I = Q + layer`, where `layer = d exp(-K)` carries the entry boundary layer
/// of thickness `|eta3| / (tau_h n_b)` and `Q` is smooth.
struct DiffuseRay {
    intensity: Vec<f64>,
    smooth: Vec<f64>,
    layer: Vec<f64>,
}

/// Leading ratio of successive terms accepted in the slow expansion.
const LAYER_SERIES_RATIO: f64 = 0.25;

/// Entry value of the slowly varying solution of `Q' + k Q = r`, from
/// `Q ~ r/k - (r/k)'/k + ...` truncated at its smallest term, or `None`
/// when even the first correction is not small.
fn slow_entry_value(r: &[f64], k: &[f64], d1: &DiffOperator, sign: f64, entry: usize) -> Option<f64> {
    let mut term: Vec<f64> = r.iter().zip(k).map(|(r, k)| r / k).collect();
    let mut total = term[entry];
    let mut last = term[entry].abs();
    for order in 0..2 {
        let slope = d1.apply(&term);
        term = slope.iter().zip(k).map(|(s, k)| -sign * s / k).collect();
        let size = term[entry].abs();
        // The wall singularity of the light field ends the useful series early.
        if size > LAYER_SERIES_RATIO * last {
            return (order > 0).then_some(total);
        }
        total += term[entry];
        last = size;
    }
    Some(total)
}

fn basic_diffuse(state: &BasicState, ordinates: &OrdinateSet) -> Vec<DiffuseRay> {
    let data = SweepData::new(state);
    let p = &state.params;
    let m = data.m;
    let c = p.albedo * p.optical_depth / (4.0 * PI);
    let flux = state.downward_flux();
    let d1 = DiffOperator::new(&state.mesh, 1, crate::stability::STENCIL_ACCURACY);
    let total = *data.running_up.last().unwrap();
    ordinates
        .polar()
        .map(|(eta3, _)| {
            let src: Vec<f64> = (0..m)
                .map(|k| c * state.n_b[k] * (state.g_total()[k] - p.aniso * eta3 * flux[k]) / eta3.abs())
                .collect();
            let l = data.transfer(eta3, 0.0);
            let intensity: Vec<f64> = (0..m).map(|i| (0..m).map(|j| l[i * m + j].re * src[j]).sum()).collect();
            let scale = p.optical_depth / eta3.abs();
            let rate: Vec<f64> = state.n_b.iter().map(|n| scale * n).collect();
            let (entry, path): (usize, Vec<f64>) = if eta3 > 0.0 {
                (0, data.running_up.iter().map(|r| scale * r).collect())
            } else {
                (m - 1, data.running_up.iter().map(|r| scale * (total - r)).collect())
            };
            let thin = rate[entry] * data.step > 0.1;
            let amplitude = if thin && rate[entry] > 0.0 {
                slow_entry_value(&src, &rate, &d1, eta3.signum(), entry).map_or(0.0, |q| -q)
            } else {
                0.0
            };
            let layer: Vec<f64> = path.iter().map(|k| amplitude * (-k).exp()).collect();
            let smooth = intensity.iter().zip(&layer).map(|(i, l)| i - l).collect();
            DiffuseRay { intensity, smooth, layer }
        })
        .collect()
}

/// Response of the angular moments `1, eta1, eta2, eta3` to the three
/// source shapes of `Q / |eta3|`.
struct Responses {
    /// `[moment][shape]`, shapes: `s0 / |eta3|`, `sgn(eta3) s1`, and the
    /// extinction term `-tau_h I_b^d n_hat / |eta3|` with its sign flipped.
    r: Vec<Vec<Mat<c64>>>,
}

fn accumulate(target: &mut Mat<c64>, l: &[c64], factor: f64) {
    let m = target.nrows();
    for i in 0..m {
        for j in 0..m {
            target[(i, j)] += l[i * m + j] * factor;
        }
    }
}

fn build_responses(
    state: &BasicState,
    wavenumber: f64,
    angle: f64,
    ordinates: &OrdinateSet,
    symmetric: bool,
) -> Responses {
    let data = SweepData::new(state);
    let m = data.m;
    let basic = basic_diffuse(state, ordinates);
    let tau_h = state.params.optical_depth;
    let mut r: Vec<Vec<Mat<c64>>> = (0..4).map(|_| (0..3).map(|_| Mat::zeros(m, m)).collect()).collect();
    // With an azimuthal grid symmetric about the wavevector, the ordinates at
    // `angle +- delta` see the same equation; sweep one and weight both.
    let use_pairs = symmetric && angle == 0.0 && ordinates.zeta_nodes.len().is_multiple_of(2);
    for (pi, (eta3, w_polar)) in ordinates.polar().enumerate() {
        let sin_theta = (1.0 - eta3 * eta3).sqrt();
        let ray = &basic[pi];
        let nz = ordinates.zeta_nodes.len();
        let zetas: Vec<(f64, Vec<f64>)> = if use_pairs {
            (0..nz / 2).map(|j| (ordinates.zeta_nodes[j], vec![ordinates.zeta_nodes[j], -ordinates.zeta_nodes[j]])).collect()
        } else {
            ordinates.zeta_nodes.iter().map(|&z| (z, vec![z])).collect()
        };
        for (zeta, members) in zetas {
            let beta = wavenumber * sin_theta * (zeta - angle).cos();
            let l = data.transfer(eta3, beta);
            // The extinction source tau_h I_b^d n_hat / |eta3| has the entry
            // layer of I_b^d. Its layer part d exp(-K) is transferred exactly:
            // L(exp(-K) n_hat) = exp(-K) L_phase(n_hat).
            let phase = data.transfer_phase(eta3, beta);
            let factor = tau_h / eta3.abs();
            let ext: Vec<c64> = (0..m * m)
                .map(|k| (l[k] * ray.smooth[k % m] + phase[k] * ray.layer[k / m]) * factor)
                .collect();
            let w = w_polar * ordinates.zeta_weight;
            let moments: [f64; 4] = [
                members.len() as f64,
                members.iter().map(|z| sin_theta * z.cos()).sum(),
                members.iter().map(|z| sin_theta * z.sin()).sum(),
                members.len() as f64 * eta3,
            ];
            for (x, moment) in moments.iter().enumerate() {
                if *moment == 0.0 {
                    continue;
                }
                let f = w * moment;
                accumulate(&mut r[x][0], &l, f / eta3.abs());
                accumulate(&mut r[x][1], &l, f * eta3.signum());
                accumulate(&mut r[x][2], &ext, f);
            }
        }
    }
    Responses { r }
}

fn scaled(m: &Mat<c64>, factor: f64) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * factor)
}

/// Builds the perturbed-radiation maps at horizontal wavenumber `a`.
pub fn assemble_diffuse_operators(
    state: &BasicState,
    wavenumber: f64,
    ordinates: &OrdinateSet,
    numerics: &NumericsConfig,
) -> Result<PerturbedRadiationOperators> {
    let angle = numerics.wavevector_angle_deg.to_radians();
    build_operators(state, wavenumber, angle, ordinates, numerics.azimuthal_symmetry)
}

pub(crate) fn build_operators(
    state: &BasicState,
    wavenumber: f64,
    angle: f64,
    ordinates: &OrdinateSet,
    symmetric: bool,
) -> Result<PerturbedRadiationOperators> {
    let m = state.mesh.len();
    let p = &state.params;
    let (gc_diag, qc_diag) = perturbed_collimated_map(state);
    let diag = |v: &[f64]| Mat::<c64>::from_fn(m, m, |i, j| if i == j { c64::new(v[i], 0.0) } else { c64::new(0.0, 0.0) });
    let map_gc = diag(&gc_diag);
    let map_qc = diag(&qc_diag);
    let d1 = Derivatives::new(&state.mesh, crate::stability::STENCIL_ACCURACY).d1;
    let dn = Mat::<c64>::from_fn(m, m, |i, j| {
        c64::new(d1.rows[i].iter().find(|&&(k, _)| k == j).map_or(0.0, |&(_, w)| w), 0.0)
    });

    let c = p.albedo * p.optical_depth / (4.0 * PI);
    let empty = || Mat::<c64>::zeros(m, m);
    if c == 0.0 {
        // No scattering: the diffuse field is neither sourced nor fed back.
        return Ok(PerturbedRadiationOperators {
            wavenumber,
            wavevector_angle: angle,
            map_g: map_gc.clone(),
            map_g_collimated: map_gc,
            map_q1: empty(),
            map_q2: empty(),
            map_q3: map_qc,
            ordinates: 0,
        });
    }

    let resp = build_responses(state, wavenumber, angle, ordinates, symmetric);
    let nb = diag(&state.n_b);
    let gb = diag(state.g_total());
    let flux = diag(&state.downward_flux());
    let a = p.aniso;

    // Sources in terms of N and the diffuse unknowns (G^d, q3^d):
    //   s0 = c (n_b (G^c + G^d) + G_b n_hat)
    //   s1 = c A (n_b (q3^c + q3^d) - F n_hat)
    let s0_n = scaled(&(&nb * &map_gc + &gb * &dn), c);
    let s1_n = scaled(&(&nb * &map_qc - &flux * &dn), c * a);
    let moment = |x: usize, src0: &Mat<c64>, src1: &Mat<c64>, with_i: bool| {
        let mut out = &resp.r[x][0] * src0 + &resp.r[x][1] * src1;
        if with_i {
            out -= &resp.r[x][2] * &dn;
        }
        out
    };
    let rhs_g = moment(0, &s0_n, &s1_n, true);
    let rhs_q = moment(3, &s0_n, &s1_n, true);
    let cn = scaled(&nb, c);
    let can = scaled(&nb, c * a);
    let mut system = Mat::<c64>::identity(2 * m, 2 * m);
    let blocks = [
        (&resp.r[0][0] * &cn, 0, 0),
        (&resp.r[0][1] * &can, 0, m),
        (&resp.r[3][0] * &cn, m, 0),
        (&resp.r[3][1] * &can, m, m),
    ];
    for (block, r0, c0) in blocks.iter() {
        for i in 0..m {
            for j in 0..m {
                system[(r0 + i, c0 + j)] -= block[(i, j)];
            }
        }
    }
    let mut rhs = Mat::<c64>::zeros(2 * m, m);
    for i in 0..m {
        for j in 0..m {
            rhs[(i, j)] = rhs_g[(i, j)];
            rhs[(m + i, j)] = rhs_q[(i, j)];
        }
    }
    let sol = system.partial_piv_lu().solve(&rhs);
    if (0..2 * m).any(|i| (0..m).any(|j| !sol[(i, j)].re.is_finite() || !sol[(i, j)].im.is_finite())) {
        return Err(Error::SingularSystem { condition: f64::INFINITY });
    }
    let gd = Mat::<c64>::from_fn(m, m, |i, j| sol[(i, j)]);
    let qd = Mat::<c64>::from_fn(m, m, |i, j| sol[(m + i, j)]);
    let s0 = &s0_n + &cn * &gd;
    let s1 = &s1_n + &can * &qd;
    let map_q1 = moment(1, &s0, &s1, true);
    let map_q2 = moment(2, &s0, &s1, true);
    let ordinates_used = 2 * ordinates.eta3_nodes.len() * ordinates.zeta_nodes.len();
    Ok(PerturbedRadiationOperators {
        wavenumber,
        wavevector_angle: angle,
        map_g: &map_gc + &gd,
        map_g_collimated: map_gc,
        map_q1,
        map_q2,
        map_q3: &map_qc + &qd,
        ordinates: ordinates_used,
    })
}
