//! Property tests for the structural invariants of grids, operators,
//! measures, capacities and Green functions.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wienerlab::capacity::CapacityProblem;
use wienerlab::elliptic::{assemble_stiffness, solve_spd, EllipticCoefficients, Field, Mat3};
use wienerlab::green::GreenSolver;
use wienerlab::grid::{mask, BallSpec, Grid, NodeSet, Shape};
use wienerlab::measures::{kato_norm, mass_matrix, MeasureSpec};

fn unit_square(h: f64) -> Grid {
    Grid::new(2, &[(0.0, 1.0), (0.0, 1.0)], h).unwrap()
}

fn random_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..grid.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Symmetric positive definite matrix with eigenvalues in `[lambda, big]`.
fn spd(theta: f64, lambda: f64, big: f64) -> Mat3 {
    let (c, s) = (theta.cos(), theta.sin());
    [
        [lambda * c * c + big * s * s, (lambda - big) * c * s, 0.0],
        [(lambda - big) * c * s, lambda * s * s + big * c * c, 0.0],
        [0.0, 0.0, 1.0],
    ]
}

fn dirichlet_energy(grid: &Grid, u: &[f64]) -> f64 {
    let full = NodeSet::full(grid);
    assemble_stiffness(grid, &full, &EllipticCoefficients::laplacian(grid.dim()))
        .unwrap()
        .quadratic(u)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mask_is_monotone_in_the_shape(cx in 0.2..0.8f64, cy in 0.2..0.8f64, r in 0.05..0.3f64, grow in 0.0..0.2f64) {
        let g = unit_square(1.0 / 32.0);
        let small = mask(&g, &Shape::ball(&[cx, cy], r)).unwrap();
        let large = mask(&g, &Shape::ball(&[cx, cy], r + grow)).unwrap();
        prop_assert!(small.is_subset(&large));
    }

    #[test]
    fn interior_nodes_keep_their_neighbours(cx in 0.3..0.7f64, cy in 0.3..0.7f64, r in 0.1..0.3f64) {
        let g = unit_square(1.0 / 32.0);
        let d = mask(&g, &Shape::ball(&[cx, cy], r)).unwrap();
        prop_assert!(d.boundary().is_subset(&d));
        for &i in d.interior().indices() {
            let (nbrs, _) = g.axis_neighbors(i);
            prop_assert!(nbrs.iter().all(|&j| d.contains(j)));
        }
    }

    #[test]
    fn refinement_keeps_ball_nodes(cx in 0.2..0.8f64, cy in 0.2..0.8f64, r in 0.05..0.3f64) {
        let coarse = unit_square(1.0 / 16.0);
        let fine = unit_square(1.0 / 32.0);
        let shape = Shape::ball(&[cx, cy], r);
        let fine_set = mask(&fine, &shape).unwrap();
        for &i in mask(&coarse, &shape).unwrap().indices() {
            let x = coarse.coord(i);
            let j = fine.nearest_node(&x[..2]);
            prop_assert!(fine_set.contains(j));
        }
    }

    #[test]
    fn operator_is_symmetric_elliptic_and_homogeneous(
        theta in 0.0..3.2f64, lambda in 0.2..1.0f64, spread in 1.0..4.0f64, c in 0.1..10.0f64, seed in 0u64..1000,
    ) {
        let g = unit_square(1.0 / 8.0);
        let big = lambda * spread;
        let coeffs = EllipticCoefficients::constant(2, spd(theta, lambda, big), lambda, big).unwrap();
        let full = NodeSet::full(&g);
        let k = assemble_stiffness(&g, &full, &coeffs).unwrap();
        let ks = assemble_stiffness(&g, &full, &coeffs.scaled(c)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (u, v) = (random_field(&g, &mut rng), random_field(&g, &mut rng));
        let (uv, vu) = (k.bilinear(&u, &v), k.bilinear(&v, &u));
        prop_assert!((uv - vu).abs() <= 1e-12 * uv.abs().max(vu.abs()).max(1.0));
        let a = k.quadratic(&u);
        let e = dirichlet_energy(&g, &u);
        prop_assert!(lambda * e <= a * (1.0 + 1e-12));
        prop_assert!(a <= 4.0 * big * e * (1.0 + 1e-12));
        prop_assert!((ks.quadratic(&u) - c * a).abs() <= 1e-12 * c * a);
    }

    #[test]
    fn solved_energy_matches_the_load(seed in 0u64..1000) {
        let g = unit_square(1.0 / 16.0);
        let inside = NodeSet::full(&g).interior();
        let k = assemble_stiffness(&g, &NodeSet::full(&g), &EllipticCoefficients::laplacian(2)).unwrap();
        let idx = inside.indices();
        let trip: Vec<(usize, usize, f64)> = k
            .triplets()
            .into_iter()
            .filter_map(|(i, j, v)| Some((idx.binary_search(&i).ok()?, idx.binary_search(&j).ok()?, v)))
            .collect();
        let reduced = wienerlab::elliptic::SparseSpdMatrix::from_triplets(idx.len(), &trip).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rhs: Vec<f64> = (0..idx.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let tol = 1e-10;
        let (x, _) = solve_spd(&reduced, &rhs, tol).unwrap();
        let energy = reduced.quadratic(&x);
        let work: f64 = rhs.iter().zip(&x).map(|(b, x)| b * x).sum();
        prop_assert!((energy - work).abs() <= 2.0 * tol * work.abs());
    }

    #[test]
    fn mass_matrices_are_psd_and_ordered(seed in 0u64..1000) {
        let g = unit_square(1.0 / 12.0);
        let full = NodeSet::full(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f1: Vec<f64> = (0..g.node_count()).map(|_| rng.gen_range(0.0..5.0)).collect();
        let f2: Vec<f64> = f1.iter().map(|v| v + rng.gen_range(0.0..5.0)).collect();
        let m1 = mass_matrix(&g, &full, &MeasureSpec::density(Field::from_values(&g, f1).unwrap()).unwrap()).unwrap();
        let m2 = mass_matrix(&g, &full, &MeasureSpec::density(Field::from_values(&g, f2).unwrap()).unwrap()).unwrap();
        let u = random_field(&g, &mut rng);
        let (q1, q2) = (m1.quadratic(&u), m2.quadratic(&u));
        prop_assert!(q1 >= 0.0);
        prop_assert!(q1 <= q2 * (1.0 + 1e-12));
    }

    #[test]
    fn restriction_is_idempotent(cx in 0.2..0.8f64, cy in 0.2..0.8f64, r in 0.1..0.4f64, obstacle in any::<bool>()) {
        let g = unit_square(1.0 / 16.0);
        let e = mask(&g, &Shape::ball(&[cx, cy], r)).unwrap();
        let mu = if obstacle {
            MeasureSpec::obstacle(mask(&g, &Shape::ball(&[0.5, 0.5], 0.3)).unwrap())
        } else {
            MeasureSpec::density(Field::from_fn(&g, |x| 1.0 + x[0])).unwrap()
        };
        let once = mu.restrict(&e).unwrap();
        prop_assert_eq!(once.restrict(&e).unwrap(), once);
    }

    #[test]
    fn kato_norm_grows_with_the_ball(r in 0.1..0.4f64, s in 0.2..0.95f64, seed in 0u64..1000) {
        let g = Grid::centered(3, &[0.0; 3], 0.5, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..g.node_count()).map(|_| rng.gen_range(0.0..2.0)).collect();
        let nu = MeasureSpec::density(Field::from_values(&g, f).unwrap()).unwrap();
        let big = kato_norm(&nu, &BallSpec::new(&[0.0; 3], r), None).unwrap().value;
        let small = kato_norm(&nu, &BallSpec::new(&[0.0; 3], s * r), None).unwrap().value;
        prop_assert!(small <= big * (1.0 + 1e-12));
    }

    #[test]
    fn capacitary_potentials_obey_the_maximum_principle(cx in 0.35..0.65f64, cy in 0.35..0.65f64, r in 0.05..0.15f64) {
        let g = unit_square(1.0 / 32.0);
        let omega = mask(&g, &Shape::ball(&[0.5, 0.5], 0.45)).unwrap();
        let e = mask(&g, &Shape::ball(&[cx, cy], r)).unwrap();
        let p = CapacityProblem::new(&omega, &EllipticCoefficients::laplacian(2), 1e-10).unwrap();
        let harm = p.harmonic(&e).unwrap();
        prop_assert!(harm.potential.values().iter().all(|&v| (-1e-10..=1.0 + 1e-10).contains(&v)));
        let obstacle = p.mu_capacity(&e, &MeasureSpec::obstacle(e.clone())).unwrap();
        prop_assert!((obstacle.value - harm.value).abs() <= 5e-10 * harm.value);
    }

    #[test]
    fn capacity_decreases_as_the_domain_grows(r in 0.05..0.12f64, inner in 0.2..0.3f64, outer in 0.32..0.48f64) {
        let g = unit_square(1.0 / 32.0);
        let e = mask(&g, &Shape::ball(&[0.5, 0.5], r)).unwrap();
        let lap = EllipticCoefficients::laplacian(2);
        let mu = MeasureSpec::density(Field::constant(&g, 30.0)).unwrap();
        let small = CapacityProblem::new(&mask(&g, &Shape::ball(&[0.5, 0.5], inner)).unwrap(), &lap, 1e-10).unwrap();
        let large = CapacityProblem::new(&mask(&g, &Shape::ball(&[0.5, 0.5], outer)).unwrap(), &lap, 1e-10).unwrap();
        for m in [MeasureSpec::Zero, mu] {
            let a = large.mu_capacity(&e, &m).unwrap().value;
            let b = small.mu_capacity(&e, &m).unwrap().value;
            prop_assert!(a <= b * (1.0 + 5e-10) + 1e-14);
        }
    }

    #[test]
    fn green_functions_grow_with_the_domain(yx in -0.2..0.2f64, yy in -0.2..0.2f64, inner in 0.4..0.7f64) {
        let g = Grid::centered(2, &[0.0, 0.0], 1.0, 1.0 / 32.0).unwrap();
        let lap = EllipticCoefficients::laplacian(2);
        let y = [yx, yy];
        let small = GreenSolver::new(&g, &BallSpec::new(&[0.0, 0.0], inner), &lap, 1e-10).unwrap().solve(&y, 0.05).unwrap();
        let large = GreenSolver::new(&g, &BallSpec::new(&[0.0, 0.0], 0.9), &lap, 1e-10).unwrap().solve(&y, 0.05).unwrap();
        let scale = large.field.max_abs();
        for (i, (&s, &l)) in small.field.values().iter().zip(large.field.values()).enumerate() {
            prop_assert!(s >= -1e-10 * scale, "negative at node {}", i);
            prop_assert!(s <= l + 1e-10 * scale, "node {}: {} > {}", i, s, l);
        }
    }
}

#[test]
fn green_converges_away_from_the_pole() {
    let g = Grid::centered(2, &[0.0, 0.0], 1.0, 1.0 / 128.0).unwrap();
    let solver = GreenSolver::new(&g, &BallSpec::new(&[0.0, 0.0], 1.0), &EllipticCoefficients::laplacian(2), 1e-11).unwrap();
    let y = [0.1, -0.05];
    // the far region of the largest radius, shared by all comparisons
    let far: Vec<usize> = (0..g.node_count())
        .filter(|&i| {
            let x = g.coord(i);
            ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt() >= 0.4
        })
        .collect();
    // radii stay above 3h so the averaged load is resolved
    let fields: Vec<Field> = [0.1, 0.05, 0.025].iter().map(|&rho| solver.solve(&y, rho).unwrap().field).collect();
    let scale = far.iter().map(|&i| fields[0].get(i)).fold(0.0, f64::max);
    let gaps: Vec<f64> = fields
        .windows(2)
        .map(|w| far.iter().map(|&i| (w[0].get(i) - w[1].get(i)).abs()).fold(0.0, f64::max))
        .collect();
    assert!(gaps[1] < gaps[0], "{gaps:?}");
    assert!(gaps[0] < 2e-3 * scale, "{gaps:?} against {scale}");
}
