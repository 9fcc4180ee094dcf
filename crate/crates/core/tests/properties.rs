//! Randomized invariants of the basic state and light field.

use photobio::basic_state::concentration_update;
use photobio::grid::{integral, Mesh};
use photobio::radiation::build_optical_grid;
use photobio::{solve_basic_state, NumericsConfig, SuspensionInput, TaxisSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constant_taxis_gives_the_exponential_profile(c in -1.0f64..1.0, us in 0.1f64..20.0) {
        let mesh = Mesh::uniform(101);
        let n = concentration_update(&vec![c; 101], us, &mesh);
        let k = us * c;
        for (x, v) in mesh.nodes.iter().zip(&n) {
            let exact = if k.abs() < 1e-12 { 1.0 } else { k * (k * x).exp() / k.exp_m1() };
            prop_assert!((v - exact).abs() < 1e-6 * exact.max(1.0), "{} vs {}", v, exact);
        }
    }

    #[test]
    fn optical_depth_decreases_upward(
        amps in proptest::collection::vec(0.0f64..2.0, 3),
        floor in 0.05f64..1.0,
        tau_h in 0.1f64..2.0,
    ) {
        let mesh = Mesh::uniform(51);
        let n: Vec<f64> = mesh.nodes.iter()
            .map(|&x| floor + amps[0] * x + amps[1] * (6.0 * x).sin().powi(2) + amps[2] * x * x)
            .collect();
        let grid = build_optical_grid(&n, tau_h, &mesh).unwrap();
        prop_assert_eq!(*grid.tau_nodes.last().unwrap(), 0.0);
        prop_assert!(grid.tau_nodes.windows(2).all(|w| w[0] > w[1]));
        let top = n.iter().cloned().fold(0.0, f64::max);
        prop_assert!(grid.tau_nodes[0] <= tau_h * top + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn basic_state_invariants(
        albedo in 0.0f64..0.95,
        aniso in -0.9f64..0.9,
        incidence in 0.0f64..80.0,
        us in 0.0f64..15.0,
        upsilon in 0.2f64..0.6,
    ) {
        let p = SuspensionInput {
            swim_speed: us,
            optical_depth: 0.8,
            albedo,
            aniso,
            incidence_deg: incidence,
            taxis: TaxisSpec::Upsilon(upsilon),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        // The residual is mesh truncation error and grows with Us; 201 points
        // keep it below 1e-6 across the sampled speeds.
        let s = solve_basic_state(&p, &NumericsConfig::default().with_mesh(201)).unwrap();
        prop_assert!((integral(&s.mesh, &s.n_b) - 1.0).abs() < 1e-6);
        prop_assert!(s.n_b.iter().all(|&v| v > 0.0));
        prop_assert!(s.ode_residual() < 1e-6, "{}", s.ode_residual());
        prop_assert!(s.g_total().iter().all(|&g| g > 0.0));
        let r = &s.radiation;
        for k in 0..s.mesh.len() {
            prop_assert_eq!(r.g_total[k], r.g_collimated[k] + r.g_diffuse[k]);
            prop_assert_eq!(r.q_vertical[k], r.q_collimated[k] + r.q_diffuse[k]);
        }
    }
}
