use fdot_core::continuity::{project_continuity, ContinuityRhs};
use fdot_core::grid::{
    adjoint_divergence, divergence, estimate_operator_norm, free_adjoint, free_divergence, node_dot,
};
use fdot_core::problems::{gaussian_1d, Mode};
use fdot_core::*;
use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use proptest::prelude::*;

fn diagrams() -> Vec<FundamentalDiagram> {
    vec![
        FundamentalDiagram::greenshields(2.0, 0.03).unwrap(),
        FundamentalDiagram::greenshields(1.0, 1.0).unwrap(),
        FundamentalDiagram::triangular(2.0, 1.0, 0.3).unwrap(),
        FundamentalDiagram::beta(1.5, 1.0, 0.4, 0.5, 1.5).unwrap(),
        FundamentalDiagram::smulders(1.0, 1.0, 0.35, 1.0).unwrap(),
    ]
}

fn point() -> impl Strategy<Value = PointState> {
    (-0.5f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(r, a, b)| PointState::new(r, [a, b]))
}

fn close(a: PointState, b: PointState, tol: f64) -> bool {
    a.dist2(&b).sqrt() <= tol
}

fn dot3(a: PointState, b: PointState) -> f64 {
    a.rho * b.rho + a.m[0] * b.m[0] + a.m[1] * b.m[1]
}

fn sub(a: PointState, b: PointState) -> PointState {
    PointState::new(a.rho - b.rho, [a.m[0] - b.m[0], a.m[1] - b.m[1]])
}

fn rotate(p: PointState, th: f64) -> PointState {
    let (s, c) = th.sin_cos();
    PointState::new(p.rho, [c * p.m[0] - s * p.m[1], s * p.m[0] + c * p.m[1]])
}

fn scaled(p: PointState, f: f64) -> PointState {
    // inputs scaled onto the diagram's density range
    PointState::new(p.rho * f, [p.m[0] * f, p.m[1] * f])
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, ..ProptestConfig::default() })]

    #[test]
    fn prox_kinetic_is_firmly_nonexpansive(x in point(), y in point(), alpha in 0.05f64..3.0) {
        let px = prox_kinetic(x, alpha).unwrap();
        let py = prox_kinetic(y, alpha).unwrap();
        let d = sub(px, py);
        prop_assert!(dot3(d, d) <= dot3(d, sub(x, y)) + 1e-10);
    }

    #[test]
    fn prox_kinetic_stationarity(x in point(), alpha in 0.05f64..3.0) {
        let p = prox_kinetic(x, alpha).unwrap();
        if p.rho > 1e-6 {
            let a2 = x.m[0] * x.m[0] + x.m[1] * x.m[1];
            let lhs = (p.rho - x.rho) * (alpha + p.rho).powi(2);
            prop_assert!((lhs - 0.5 * alpha * a2).abs() <= 1e-8 * (1.0 + a2));
            for c in 0..2 {
                prop_assert!((p.m[c] * (alpha + p.rho) - p.rho * x.m[c]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn projection_is_feasible_and_idempotent(x in point(), which in 0usize..5) {
        let d = &diagrams()[which];
        let x = scaled(x, d.rho_hat());
        let p = project_fd(d, x);
        prop_assert!(p.flux_norm() <= d.q(p.rho) + 1e-10 * d.critical_point().1);
        prop_assert!(p.rho >= 0.0 && p.rho <= d.rho_hat());
        prop_assert!(close(project_fd(d, p), p, 1e-10));
    }

    #[test]
    fn projection_preserves_direction(x in point(), which in 0usize..5) {
        let d = &diagrams()[which];
        let x = scaled(x, d.rho_hat());
        let p = project_fd(d, x);
        let cross = x.m[0] * p.m[1] - x.m[1] * p.m[0];
        prop_assert!(cross.abs() <= 1e-12 * (1.0 + x.flux_norm()));
        prop_assert!(x.m[0] * p.m[0] + x.m[1] * p.m[1] >= -1e-15);
    }

    #[test]
    fn projection_is_rotation_equivariant(x in point(), th in 0.0f64..6.3, which in 0usize..5) {
        let d = &diagrams()[which];
        let x = scaled(x, d.rho_hat());
        let a = project_fd(d, rotate(x, th));
        let b = rotate(project_fd(d, x), th);
        prop_assert!(close(a, b, 1e-10 * (1.0 + d.rho_hat())));
    }

    #[test]
    fn projection_beats_random_feasible_points(x in point(), which in 0usize..5, seeds in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 200)) {
        let d = &diagrams()[which];
        let x = scaled(x, d.rho_hat());
        let p = project_fd(d, x);
        let dir = if x.flux_norm() > 0.0 { [x.m[0] / x.flux_norm(), x.m[1] / x.flux_norm()] } else { [1.0, 0.0] };
        let best = x.dist2(&p);
        for (u, v) in seeds {
            let r = u * d.rho_hat();
            let s = v * d.q(r);
            let z = PointState::new(r, [s * dir[0], s * dir[1]]);
            prop_assert!(best <= x.dist2(&z) + 1e-12);
        }
    }

    #[test]
    fn fd_prox_output_is_feasible(x in point(), tau in 0.01f64..2.0, which in 0usize..5) {
        let d = &diagrams()[which];
        let x = scaled(x, d.rho_hat());
        let p = prox_kinetic_fd(x, tau, d).unwrap();
        prop_assert!(p.flux_norm() <= d.q(p.rho) + 1e-10 * d.critical_point().1);
        let free = prox_kinetic(x, tau).unwrap();
        if d.contains(free.rho, free.flux_norm()) {
            prop_assert!(close(p, free, 1e-12));
        }
    }

    #[test]
    fn fd_prox_tends_to_kinetic_prox(x in point(), tau in 0.05f64..2.0) {
        let d = FundamentalDiagram::greenshields(1e3, 1e6).unwrap();
        let a = prox_kinetic_fd(x, tau, &d).unwrap();
        let b = prox_kinetic(x, tau).unwrap();
        prop_assert!(close(a, b, 1e-6));
    }

    #[test]
    fn adjoint_identity(seed in any::<u64>(), staggered in any::<bool>(), two_d in any::<bool>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let layout = if staggered { Layout::Staggered } else { Layout::Collocated };
        let g = if two_d { Grid::new(&[5, 4], 3).unwrap() } else { Grid::new(&[7], 4).unwrap() };
        let mut x = TransportState::zeros(&g, layout);
        x.rho.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        for m in x.m.iter_mut() {
            m.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        let phi = DualField { phi: Array3::from_shape_fn(g.node_shape(layout), |_| rng.random_range(-1.0..1.0)) };
        let lhs = node_dot(&divergence(&x, &g).unwrap(), &phi.phi, &g);
        let rhs = x.dot(&adjoint_divergence(&phi, &g, layout).unwrap(), &g);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));
        let lhs = node_dot(&free_divergence(&x, &g).unwrap(), &phi.phi, &g);
        let rhs = x.dot(&free_adjoint(&phi, &g, layout).unwrap(), &g);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));
    }

    #[test]
    fn continuity_projection_is_idempotent_and_nearest(seed in any::<u64>(), staggered in any::<bool>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let layout = if staggered { Layout::Staggered } else { Layout::Collocated };
        let g = Grid::new(&[8], 4).unwrap();
        let mu = gaussian_1d(0.3, 0.1, &g).unwrap();
        let nu = gaussian_1d(0.6, 0.1, &g).unwrap();
        let rhs = ContinuityRhs::from_marginals(&g, layout, &mu, &nu).unwrap();
        let p = ProblemSpec::new(g.clone(), mu, nu, DiagramField::Uniform(problems::unconstrained_diagram())).with_layout(layout);
        let mut x = p.pinned_state();
        let noise = |v: &mut f64, rng: &mut rand_chacha::ChaCha8Rng| *v += rng.random_range(-1.0..1.0);
        x.rho.iter_mut().for_each(|v| noise(v, &mut rng));
        x.m.iter_mut().flat_map(|m| m.iter_mut()).for_each(|v| noise(v, &mut rng));
        x.copy_pinned_from(&p.pinned_state());
        let y = project_continuity(&x, &rhs, &g).unwrap();
        let z = project_continuity(&y, &rhs, &g).unwrap();
        prop_assert!(y.distance(&z, &g) <= 1e-9);
        // nearest point against feasible competitors y + (null-space direction)
        let d0 = x.distance(&y, &g);
        for _ in 0..20 {
            let mut w = TransportState::zeros(&g, layout);
            w.rho.iter_mut().for_each(|v| noise(v, &mut rng));
            w.m.iter_mut().flat_map(|m| m.iter_mut()).for_each(|v| noise(v, &mut rng));
            w.zero_pinned();
            let zero = ContinuityRhs::zeros(&g, layout);
            let n = project_continuity(&w, &zero, &g).unwrap();
            let mut c = y.clone();
            c.axpy(0.1, &n);
            prop_assert!(d0 <= x.distance(&c, &g) + 1e-12);
        }
    }
}

/// Dense `K_f` built column by column; its largest singular value is the
/// operator norm in the weighted inner products after symmetric scaling.
#[test]
fn operator_norm_matches_dense_svd() {
    for layout in [Layout::Collocated, Layout::Staggered] {
        let g = Grid::new(&[2], 2).unwrap();
        let template = TransportState::zeros(&g, layout);
        let mut entries = Vec::new();
        let mut push = |a: &Array3<f64>, field: usize| {
            for idx in a.indexed_iter().map(|(i, _)| i) {
                entries.push((field, idx));
            }
        };
        push(&template.rho, 0);
        for (a, m) in template.m.iter().enumerate() {
            push(m, a + 1);
        }
        let nodes = g.num_nodes(layout);
        let cv = g.node_volume();
        let mut k = DMatrix::<f64>::zeros(nodes, entries.len());
        for (col, (field, idx)) in entries.iter().enumerate() {
            let mut x = template.clone();
            let arr = if *field == 0 { &mut x.rho } else { &mut x.m[field - 1] };
            arr[*idx] = 1.0;
            // unit vector in the weighted norm
            let w = x.dot(&x, &g).sqrt();
            if w == 0.0 {
                continue;
            }
            let div = free_divergence(&x, &g).unwrap();
            for (row, v) in div.iter().enumerate() {
                k[(row, col)] = v * cv.sqrt() / w;
            }
        }
        let sigma = k.singular_values().iter().cloned().fold(0.0, f64::max);
        let est = estimate_operator_norm(&g, layout, 200);
        assert!((est - sigma).abs() <= 0.05 * sigma, "{layout:?}: {est} vs {sigma}");
    }
}

#[test]
fn unconstrained_problem_uses_inactive_diagram() {
    let p = problems::benchmark_1d(Mode::Unconstrained);
    let d = p.effective_diagram();
    let d = d.at(0, 0, 0);
    assert!(d.rho_hat() >= 1e6 && d.v0() >= 1e3);
    let _: Array2<f64> = p.mu.clone();
}
