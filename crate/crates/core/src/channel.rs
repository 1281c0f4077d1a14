//! Far-field multipath channel between ground users and the movable-antenna
//! array on the AAV.
//!
//! Each path `i` of user `m` arrives with vertical/horizontal AoA
//! `(θ_i, φ_i)`. An antenna at `u = [x, y]` sees the path with phase
//! `2π/λ · ρ(u)`, `ρ = x sinθ cosφ + y sinθ sinφ`, and the channel seen by
//! antenna `k` is `h_k = Σ_i σ_i exp(-j 2π/λ ρ_i(u_k))`.
//!
//! Per-path angular offsets and small-scale coefficients are drawn once per
//! mission from the scenario seed; nominal angles and the large-scale gain
//! follow the AAV position.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scenario::{substream, AzimuthMode, Point, Scenario, StreamPurpose};

pub type C64 = Complex64;
pub type CVec = Vec<C64>;

/// 3-D distance between an AAV at horizontal position `q` and altitude `h`
/// and a ground point `s`.
pub fn distance(q: Point, s: Point, h: f64) -> f64 {
    let dx = q[0] - s[0];
    let dy = q[1] - s[1];
    (dx * dx + dy * dy + h * h).sqrt()
}

/// Nominal vertical and horizontal AoA `(θ, φ)` of the line from `s` to `q`.
pub fn nominal_angles(q: Point, s: Point, h: f64, mode: AzimuthMode) -> (f64, f64) {
    let dx = q[0] - s[0];
    let dy = q[1] - s[1];
    let d = distance(q, s, h);
    let theta = (h / d).min(1.0).asin();
    let horizontal = dx.hypot(dy);
    if horizontal == 0.0 {
        return (theta, 0.0);
    }
    let phi = match mode {
        AzimuthMode::Signed => dx.atan2(dy),
        AzimuthMode::Arccos => (dy / horizontal).clamp(-1.0, 1.0).acos(),
    };
    (theta, phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathAngles {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl PathAngles {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Nominal angles shifted by per-path offsets.
    pub fn around(theta: f64, phi: f64, offsets: &PathAngles) -> PathAngles {
        PathAngles {
            theta: offsets.theta.iter().map(|o| theta + o).collect(),
            phi: offsets.phi.iter().map(|o| phi + o).collect(),
        }
    }

    /// Unit-free direction `(sinθ cosφ, sinθ sinφ)` of path `i`.
    pub fn direction(&self, i: usize) -> Point {
        let (st, ct) = (self.theta[i].sin(), self.phi[i].cos());
        [st * ct, st * self.phi[i].sin()]
    }
}

/// Offsets drawn uniformly from the open interval `(-Δ/2, Δ/2)`.
pub fn sample_offsets<R: Rng + ?Sized>(rng: &mut R, delta: f64, paths: usize) -> PathAngles {
    let mut draw = || {
        let u: f64 = Open01.sample(rng);
        (u - 0.5) * delta
    };
    let mut theta = Vec::with_capacity(paths);
    let mut phi = Vec::with_capacity(paths);
    for _ in 0..paths {
        theta.push(draw());
        phi.push(draw());
    }
    PathAngles { theta, phi }
}

pub fn sample_path_angles<R: Rng + ?Sized>(
    rng: &mut R,
    theta_nom: f64,
    phi_nom: f64,
    delta: f64,
    paths: usize,
) -> PathAngles {
    PathAngles::around(theta_nom, phi_nom, &sample_offsets(rng, delta, paths))
}

/// Path length difference `ρ` between antenna position `u` and the origin.
pub fn phase_difference(u: Point, theta: f64, phi: f64) -> f64 {
    let st = theta.sin();
    u[0] * st * phi.cos() + u[1] * st * phi.sin()
}

/// Receive field response vector: `exp(j 2π/λ ρ_i(u))` for every path.
pub fn receive_frv(u: Point, angles: &PathAngles, wavelength: f64) -> CVec {
    let k = 2.0 * PI / wavelength;
    (0..angles.len())
        .map(|i| C64::from_polar(1.0, k * phase_difference(u, angles.theta[i], angles.phi[i])))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResponse {
    pub sigma: CVec,
    pub alpha: f64,
    pub g_small: CVec,
}

impl PathResponse {
    /// `σ_i = sqrt(α / L) · g_i`.
    pub fn new(alpha: f64, g_small: CVec) -> Self {
        let scale = (alpha / g_small.len() as f64).sqrt();
        let sigma = g_small.iter().map(|g| g * scale).collect();
        Self {
            sigma,
            alpha,
            g_small,
        }
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

/// Rician small-scale coefficients normalized so that `E[Σ|g_i|²] = L`.
///
/// Path 0 carries the deterministic LoS component. With a single path the
/// scattered part is folded into it; with `L > 1` the remaining paths are
/// i.i.d. `CN(0, L/((κ+1)(L-1)))`.
pub fn small_scale<R: Rng + ?Sized>(rng: &mut R, kappa: f64, paths: usize) -> CVec {
    let l = paths as f64;
    let (los_weight, scatter_weight) = if kappa.is_infinite() {
        (1.0, 0.0)
    } else {
        (kappa / (kappa + 1.0), 1.0 / (kappa + 1.0))
    };
    let mut g = Vec::with_capacity(paths);
    if paths == 1 {
        let mut g0 = C64::new(los_weight.sqrt(), 0.0);
        if scatter_weight > 0.0 {
            g0 += complex_gaussian(rng, scatter_weight);
        }
        g.push(g0);
        return g;
    }
    g.push(C64::new((los_weight * l).sqrt(), 0.0));
    let var = scatter_weight * l / (l - 1.0);
    for _ in 1..paths {
        if var > 0.0 {
            g.push(complex_gaussian(rng, var));
        } else {
            g.push(C64::new(0.0, 0.0));
        }
    }
    g
}

pub fn path_response<R: Rng + ?Sized>(
    rng: &mut R,
    alpha: f64,
    kappa: f64,
    paths: usize,
) -> PathResponse {
    PathResponse::new(alpha, small_scale(rng, kappa, paths))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaLayout {
    pub positions: Vec<Point>,
}

impl MaLayout {
    pub fn new(positions: Vec<Point>) -> Self {
        Self { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn within_region(&self, side: f64) -> bool {
        self.positions
            .iter()
            .all(|p| (0.0..=side).contains(&p[0]) && (0.0..=side).contains(&p[1]))
    }

    /// Smallest pairwise distance; infinite for fewer than two antennas.
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.positions.len() {
            for j in i + 1..self.positions.len() {
                let a = self.positions[i];
                let b = self.positions[j];
                best = best.min((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
        best
    }
}

/// Channel vector by explicit summation over paths.
pub fn channel_vector(
    layout: &MaLayout,
    angles: &PathAngles,
    response: &PathResponse,
    wavelength: f64,
) -> CVec {
    let k = 2.0 * PI / wavelength;
    layout
        .positions
        .iter()
        .map(|&u| {
            (0..angles.len())
                .map(|i| {
                    let rho = phase_difference(u, angles.theta[i], angles.phi[i]);
                    response.sigma[i] * C64::from_polar(1.0, -k * rho)
                })
                .sum()
        })
        .collect()
}

/// Channel vector as the matrix product `G^H Σ f` with `f` all ones.
pub fn channel_vector_matrix(
    layout: &MaLayout,
    angles: &PathAngles,
    response: &PathResponse,
    wavelength: f64,
) -> CVec {
    let l = angles.len();
    let kk = layout.len();
    let mut g = DMatrix::<C64>::zeros(l, kk);
    for (k, &u) in layout.positions.iter().enumerate() {
        let frv = receive_frv(u, angles, wavelength);
        for i in 0..l {
            g[(i, k)] = frv[i];
        }
    }
    let sigma = DMatrix::from_diagonal(&DVector::from_vec(response.sigma.clone()));
    let f = DVector::from_element(l, C64::new(1.0, 0.0));
    let h = g.adjoint() * sigma * f;
    h.iter().copied().collect()
}

/// Path geometry and amplitudes of one (user, slot) pair at a fixed AAV
/// position. Only the antenna positions remain free.
#[derive(Debug, Clone)]
pub struct Link {
    pub angles: PathAngles,
    pub directions: Vec<Point>,
    pub response: PathResponse,
    pub distance: f64,
    wavenumber: f64,
}

impl Link {
    pub fn new(angles: PathAngles, response: PathResponse, distance: f64, wavelength: f64) -> Self {
        let directions = (0..angles.len()).map(|i| angles.direction(i)).collect();
        Self {
            angles,
            directions,
            response,
            distance,
            wavenumber: 2.0 * PI / wavelength,
        }
    }

    pub fn wavenumber(&self) -> f64 {
        self.wavenumber
    }

    /// Channel coefficient seen by a single antenna at `u`.
    pub fn coefficient(&self, u: Point) -> C64 {
        self.directions
            .iter()
            .zip(&self.response.sigma)
            .map(|(d, s)| s * C64::from_polar(1.0, -self.wavenumber * (u[0] * d[0] + u[1] * d[1])))
            .sum()
    }

    pub fn channel(&self, layout: &MaLayout) -> CVec {
        layout.positions.iter().map(|&u| self.coefficient(u)).collect()
    }

    /// Receive FRV at `u` with this link's angles.
    pub fn frv(&self, u: Point) -> CVec {
        self.directions
            .iter()
            .map(|d| C64::from_polar(1.0, self.wavenumber * (u[0] * d[0] + u[1] * d[1])))
            .collect()
    }
}

/// One seeded channel realization for a whole mission.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    users: Vec<Point>,
    altitude: f64,
    wavelength: f64,
    h0: f64,
    azimuth: AzimuthMode,
    offsets: Vec<PathAngles>,
    small_scale: Vec<Vec<CVec>>,
}

impl ChannelModel {
    pub fn new(scenario: &Scenario, users: Vec<Point>) -> Self {
        let seed = scenario.rng_seed;
        let offsets = (0..users.len())
            .map(|m| {
                let mut rng = substream(seed, StreamPurpose::PathAngles, m as u64, 0);
                sample_offsets(&mut rng, scenario.angular_spread, scenario.num_paths)
            })
            .collect();
        let small_scale = (0..users.len())
            .map(|m| {
                (0..scenario.num_slots)
                    .map(|n| {
                        let mut rng = substream(seed, StreamPurpose::SmallScale, m as u64, n as u64);
                        small_scale(&mut rng, scenario.rician_kappa, scenario.num_paths)
                    })
                    .collect()
            })
            .collect();
        Self {
            users,
            altitude: scenario.altitude,
            wavelength: scenario.wavelength,
            h0: scenario.h0(),
            azimuth: scenario.azimuth,
            offsets,
            small_scale,
        }
    }

    pub fn users(&self) -> &[Point] {
        &self.users
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn altitude(&self) -> f64 {
        self.altitude
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn h0(&self) -> f64 {
        self.h0
    }

    pub fn small_scale_coefficients(&self, m: usize, n: usize) -> &[C64] {
        &self.small_scale[m][n]
    }

    pub fn angles(&self, m: usize, q: Point) -> PathAngles {
        let (theta, phi) = nominal_angles(q, self.users[m], self.altitude, self.azimuth);
        PathAngles::around(theta, phi, &self.offsets[m])
    }

    pub fn link(&self, m: usize, n: usize, q: Point) -> Link {
        let d = distance(q, self.users[m], self.altitude);
        let response = PathResponse::new(self.h0 / (d * d), self.small_scale[m][n].clone());
        Link::new(self.angles(m, q), response, d, self.wavelength)
    }

    pub fn slot_links(&self, n: usize, q: Point) -> Vec<Link> {
        (0..self.users.len()).map(|m| self.link(m, n, q)).collect()
    }

    pub fn slot_channels(&self, n: usize, q: Point, layout: &MaLayout) -> Vec<CVec> {
        self.slot_links(n, q).iter().map(|l| l.channel(layout)).collect()
    }

    /// CSV rows `(slot, user, path, theta, phi, re_sigma, im_sigma)`.
    pub fn dump_csv(&self, trajectory: &[Point]) -> String {
        let mut out = String::from("slot,user,path,theta,phi,re_sigma,im_sigma\n");
        for (n, &q) in trajectory.iter().enumerate() {
            for m in 0..self.users.len() {
                let link = self.link(m, n, q);
                for i in 0..link.angles.len() {
                    let s = link.response.sigma[i];
                    out.push_str(&format!(
                        "{n},{m},{i},{},{},{},{}\n",
                        link.angles.theta[i], link.angles.phi[i], s.re, s.im
                    ));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_scenario;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distance_examples() {
        assert_eq!(distance([1.0, 2.0], [1.0, 2.0], 50.0), 50.0);
        assert_relative_eq!(distance([30.0, 40.0], [0.0, 0.0], 50.0), 70.71067811865476, epsilon = 1e-12);
        assert_relative_eq!(distance([100.0, 0.0], [0.0, 0.0], 50.0), 12500f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn nominal_angle_examples() {
        let (t, p) = nominal_angles([5.0, 5.0], [5.0, 5.0], 50.0, AzimuthMode::Signed);
        assert_eq!(t, PI / 2.0);
        assert_eq!(p, 0.0);

        let (t, p) = nominal_angles([30.0, 40.0], [0.0, 0.0], 50.0, AzimuthMode::Signed);
        assert_relative_eq!(t, PI / 4.0, epsilon = 1e-12);
        assert_relative_eq!(p, 0.8f64.acos(), epsilon = 1e-12);
        assert_relative_eq!(p, 0.6435011087932844, epsilon = 1e-12);

        let (t, p) = nominal_angles([0.0, 100.0], [0.0, 0.0], 50.0, AzimuthMode::Signed);
        assert_relative_eq!(t, (50.0 / 12500f64.sqrt()).asin(), epsilon = 1e-12);
        assert_relative_eq!(t, 0.4636476090008061, epsilon = 1e-12);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn signed_azimuth_recovers_direction_arccos_folds_it() {
        let (_, signed) = nominal_angles([-30.0, 40.0], [0.0, 0.0], 50.0, AzimuthMode::Signed);
        assert_relative_eq!(signed.sin(), -0.6, epsilon = 1e-12);
        assert_relative_eq!(signed.cos(), 0.8, epsilon = 1e-12);
        let (_, folded) = nominal_angles([-30.0, 40.0], [0.0, 0.0], 50.0, AzimuthMode::Arccos);
        assert_relative_eq!(folded.sin(), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn zero_spread_gives_nominal_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = sample_path_angles(&mut rng, 0.3, 1.1, 0.0, 5);
        assert!(a.theta.iter().all(|&t| t == 0.3));
        assert!(a.phi.iter().all(|&p| p == 1.1));
    }

    #[test]
    fn path_angles_within_support_and_deterministic() {
        let delta = PI / 12.0;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = sample_path_angles(&mut rng, 0.5, -0.2, delta, 4);
        assert_eq!(a.len(), 4);
        for i in 0..4 {
            assert!((a.theta[i] - 0.5).abs() < delta / 2.0);
            assert!((a.phi[i] + 0.2).abs() < delta / 2.0);
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(a, sample_path_angles(&mut rng2, 0.5, -0.2, delta, 4));
    }

    #[test]
    fn phase_difference_examples() {
        assert_eq!(phase_difference([0.0, 0.0], 0.7, 0.3), 0.0);
        assert_relative_eq!(phase_difference([0.05, 0.0], PI / 2.0, 0.0), 0.05, epsilon = 1e-15);
        let expected = 0.1 * (PI / 4.0).sin() * (PI / 3.0).cos() + 0.2 * (PI / 4.0).sin() * (PI / 3.0).sin();
        assert_relative_eq!(phase_difference([0.1, 0.2], PI / 4.0, PI / 3.0), expected, epsilon = 1e-15);
        assert_relative_eq!(expected, 0.15782982619848626, epsilon = 1e-12);
    }

    #[test]
    fn frv_examples() {
        let angles = PathAngles {
            theta: vec![0.3, 1.0, 1.4],
            phi: vec![0.1, -2.0, 2.5],
        };
        let origin = receive_frv([0.0, 0.0], &angles, 0.1);
        assert!(origin.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
        let elsewhere = receive_frv([0.123, -0.31], &angles, 0.1);
        assert!(elsewhere.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));

        let single = PathAngles {
            theta: vec![PI / 2.0],
            phi: vec![0.0],
        };
        let flip = receive_frv([0.05, 0.0], &single, 0.1);
        assert!((flip[0] - C64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn pure_los_single_path_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = path_response(&mut rng, 4e-10, f64::INFINITY, 1);
        assert_relative_eq!(r.sigma[0].re, 4e-10f64.sqrt(), epsilon = 1e-20);
        assert_eq!(r.sigma[0].im, 0.0);
    }

    #[test]
    fn path_response_power_normalization() {
        let alpha = 2.5e-10;
        for paths in [1usize, 4] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let draws = 100_000;
            let mean: f64 = (0..draws)
                .map(|_| {
                    path_response(&mut rng, alpha, 15.0, paths)
                        .sigma
                        .iter()
                        .map(|s| s.norm_sqr())
                        .sum::<f64>()
                })
                .sum::<f64>()
                / draws as f64;
            assert!(((mean - alpha) / alpha).abs() < 0.02, "L={paths}: {mean}");
        }
    }

    #[test]
    fn path_response_deterministic() {
        let a = path_response(&mut ChaCha8Rng::seed_from_u64(7), 1e-9, 15.0, 4);
        let b = path_response(&mut ChaCha8Rng::seed_from_u64(7), 1e-9, 15.0, 4);
        assert_eq!(a, b);
    }

    #[test]
    fn single_path_at_origin_gives_sigma() {
        let angles = PathAngles {
            theta: vec![0.9],
            phi: vec![0.4],
        };
        let response = PathResponse::new(1e-9, vec![C64::new(0.3, -0.8)]);
        let h = channel_vector(&MaLayout::new(vec![[0.0, 0.0]]), &angles, &response, 0.1);
        assert_eq!(h, response.sigma);
    }

    #[test]
    fn matrix_and_sum_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let angles = sample_path_angles(&mut rng, 0.8, 0.4, 0.5, 4);
            let response = path_response(&mut rng, 1.0, 3.0, 4);
            let layout = MaLayout::new(
                (0..3)
                    .map(|_| [rng.random::<f64>() * 0.4, rng.random::<f64>() * 0.4])
                    .collect(),
            );
            let a = channel_vector(&layout, &angles, &response, 0.1);
            let b = channel_vector_matrix(&layout, &angles, &response, 0.1);
            let link = Link::new(angles.clone(), response.clone(), 1.0, 0.1);
            let c = link.channel(&layout);
            for k in 0..3 {
                assert!((a[k] - b[k]).norm() < 1e-12);
                assert!((a[k] - c[k]).norm() < 1e-12);
                let bound: f64 = response.sigma.iter().map(|s| s.norm()).sum();
                assert!(a[k].norm() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn channel_scale_is_physical() {
        let s = default_scenario();
        let model = ChannelModel::new(&s, vec![[100.0, 0.0]]);
        let layout = MaLayout::new(vec![[0.1, 0.1], [0.3, 0.3]]);
        let h = model.slot_channels(0, [0.0, 0.0], &layout);
        for hk in &h[0] {
            let p = hk.norm_sqr();
            assert!(p > 1e-13 && p < 1e-8, "{p}");
        }
    }

    #[test]
    fn model_is_deterministic() {
        let s = default_scenario();
        let a = ChannelModel::new(&s, s.users());
        let b = ChannelModel::new(&s, s.users());
        let layout = MaLayout::new(vec![[0.1, 0.2]]);
        for n in 0..s.num_slots {
            assert_eq!(
                a.slot_channels(n, [10.0, 20.0], &layout),
                b.slot_channels(n, [10.0, 20.0], &layout)
            );
        }
    }

    #[test]
    fn dump_has_header_and_rows() {
        let s = default_scenario();
        let model = ChannelModel::new(&s, s.users());
        let csv = model.dump_csv(&[[0.0, 0.0], [10.0, 0.0]]);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "slot,user,path,theta,phi,re_sigma,im_sigma");
        assert_eq!(lines.len(), 1 + 2 * 4 * 4);
    }
}
