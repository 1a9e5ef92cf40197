use super::*;
use crate::tensor::grad_check;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct evaluation with plain exponentials, no max subtraction.
fn oracle_posterior(points: &[Point], grid: &[Point], sigma: f64, margin: Option<f64>) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for x in grid {
        let mut lik = Vec::new();
        let mut nearest = f64::INFINITY;
        for z in points {
            let dist = ((x.x - z.x).powi(2) + (x.y - z.y).powi(2)).sqrt();
            nearest = nearest.min(dist);
            lik.push((-dist * dist / (2.0 * sigma * sigma)).exp());
        }
        if let Some(d) = margin {
            lik.insert(0, (-(d - nearest).powi(2) / (2.0 * sigma * sigma)).exp());
        }
        let z: f64 = lik.iter().sum();
        out.push(lik.into_iter().map(|v| v / z).collect());
    }
    out
}

fn oracle_bayes(d: &[f64], post: &[Vec<f64>], background: bool) -> f64 {
    let k = post[0].len();
    let mut loss = 0.0;
    for col in 0..k {
        let mut e = 0.0;
        for (m, row) in post.iter().enumerate() {
            e += row[col] * d[m];
        }
        let target = if background && col == 0 { 0.0 } else { 1.0 };
        loss += (target - e).abs();
    }
    loss
}

fn three_points() -> Vec<Point> {
    vec![Point::new(10.0, 14.0), Point::new(40.5, 22.0), Point::new(33.0, 57.2)]
}

fn bayes_value(density: &Tensor<f64>, post: &PosteriorMatrix) -> f64 {
    let mut tape = Tape::new();
    let d = tape.constant(density.clone()).unwrap();
    let l = bayesian_loss(&mut tape, d, post).unwrap();
    tape.value(l).data()[0]
}

#[test]
fn grid_centres() {
    assert_eq!(grid_coordinates(1, 1, 8), vec![Point::new(4.0, 4.0)]);
    assert_eq!(
        grid_coordinates(2, 2, 8),
        vec![Point::new(4.0, 4.0), Point::new(12.0, 4.0), Point::new(4.0, 12.0), Point::new(12.0, 12.0)]
    );
}

#[test]
fn single_class_and_symmetry() {
    let spec = PosteriorSpec { sigma: 8.0, margin: None };
    let p = build_posterior(&[Point::new(4.0, 4.0)], &grid_coordinates(1, 1, 8), &spec).unwrap();
    assert_eq!(p.values(), &[1.0]);
    let pts = [Point::new(0.0, 4.0), Point::new(8.0, 4.0)];
    let p = build_posterior(&pts, &grid_coordinates(1, 1, 8), &spec).unwrap();
    assert!((p.get(0, 0) - 0.5).abs() < 1e-12 && (p.get(0, 1) - 0.5).abs() < 1e-12);
}

#[test]
fn empty_scene_is_background() {
    let spec = PosteriorSpec { sigma: 8.0, margin: None };
    let p = build_posterior(&[], &grid_coordinates(3, 2, 8), &spec).unwrap();
    assert!(p.has_background());
    assert!(p.values().iter().all(|&v| v == 1.0));
    let d = Tensor::from_vec(vec![1, 3, 2], vec![0.5, 0.25, 0.0, 1.0, 0.125, 2.0]).unwrap();
    assert!((bayes_value(&d, &p) - 3.875).abs() < 1e-12);
}

#[test]
fn posterior_matches_double_loop_oracle() {
    let grid = grid_coordinates(8, 8, 8);
    let spec = PosteriorSpec { sigma: 8.0, margin: Some(9.6) };
    let p = build_posterior(&three_points(), &grid, &spec).unwrap();
    let o = oracle_posterior(&three_points(), &grid, 8.0, Some(9.6));
    for m in 0..grid.len() {
        for k in 0..4 {
            assert!((p.get(m, k) - o[m][k]).abs() < 1e-6);
        }
    }
}

#[test]
fn bayes_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = grid_coordinates(8, 8, 8);
    let d = Tensor::<f64>::uniform(vec![1, 8, 8], 0.0, 0.1, &mut rng);
    for margin in [Some(9.6), None] {
        let spec = PosteriorSpec { sigma: 8.0, margin };
        let p = build_posterior(&three_points(), &grid, &spec).unwrap();
        let o = oracle_posterior(&three_points(), &grid, 8.0, margin);
        let expect = oracle_bayes(d.data(), &o, margin.is_some());
        assert!((bayes_value(&d, &p) - expect).abs() < 1e-6);
    }
}

#[test]
fn perfect_assignment_is_zero() {
    let spec = PosteriorSpec { sigma: 8.0, margin: None };
    let grid = grid_coordinates(2, 2, 8);
    let p = build_posterior(&[Point::new(4.0, 4.0)], &grid, &spec).unwrap();
    let d = Tensor::from_vec(vec![1, 2, 2], vec![0.25f64; 4]).unwrap();
    assert!(bayes_value(&d, &p).abs() < 1e-12);
}

#[test]
fn loss_combination() {
    let mut tape = Tape::<f64>::new();
    let b = tape.constant(Tensor::scalar(2.0)).unwrap();
    let pred = tape.constant(Tensor::scalar(10.0)).unwrap();
    let c = counting_loss(&mut tape, pred, 7.0).unwrap();
    assert_eq!(tape.value(c).data(), &[3.0]);
    let total = overall_loss(&mut tape, b, c, 1.0).unwrap();
    assert_eq!(tape.value(total).data(), &[5.0]);
    let same = overall_loss(&mut tape, b, c, 0.0).unwrap();
    assert_eq!(same, b);
    let eq = counting_loss(&mut tape, pred, 10.0).unwrap();
    assert_eq!(tape.value(eq).data(), &[0.0]);
}

#[test]
fn overall_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = grid_coordinates(6, 6, 8);
    let pts = vec![Point::new(9.0, 13.0), Point::new(30.0, 20.0)];
    let p = build_posterior(&pts, &grid, &PosteriorSpec { sigma: 8.0, margin: Some(7.2) }).unwrap();
    let d = Tensor::<f64>::uniform(vec![1, 6, 6], 0.0, 0.05, &mut rng);
    let report = grad_check(
        |tape, x| {
            let b = bayesian_loss(tape, x, &p)?;
            let s = tape.sum_all(x)?;
            let c = counting_loss(tape, s, 2.0)?;
            overall_loss(tape, b, c, 0.1)
        },
        &d,
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn pixel_mse_is_zero_on_its_own_target() {
    let pts = [Point::new(20.0, 20.0)];
    let (raster, _) = gaussian_splat(&[Point::new(2.5, 2.5)], 6, 6, 1.0).unwrap();
    let mut tape = Tape::<f64>::new();
    let d = tape
        .constant(Tensor::from_vec(vec![1, 6, 6], raster.values.iter().map(|&v| v as f64).collect()).unwrap())
        .unwrap();
    let l = pixel_mse_loss(&mut tape, d, &pts, 8.0, 8).unwrap();
    assert!(tape.value(l).data()[0] < 1e-12);
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Point> {
    (0..n).map(|_| Point::new(rng.gen_range(0.0..extent), rng.gen_range(0.0..extent))).collect()
}

proptest! {
    #[test]
    fn rows_are_stochastic(seed in 0u64..1000, n in 0usize..6, sigma in 0.5f64..20.0, margin in 0.5f64..40.0, coincident in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = random_points(&mut rng, n, 2000.0);
        if coincident && n > 0 {
            pts.push(pts[0]);
        }
        let grid = grid_coordinates(5, 7, 300);
        let p = build_posterior(&pts, &grid, &PosteriorSpec { sigma, margin: Some(margin) }).unwrap();
        for m in 0..p.rows() {
            let row = p.row(m);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn translation_equivariant(seed in 0u64..1000, dx in -20i32..20, dy in -20i32..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 4, 64.0);
        let grid = grid_coordinates(8, 8, 8);
        let spec = PosteriorSpec { sigma: 8.0, margin: Some(9.6) };
        let shift = |v: &[Point]| v.iter().map(|p| Point::new(p.x + dx as f64, p.y + dy as f64)).collect::<Vec<_>>();
        let a = build_posterior(&pts, &grid, &spec).unwrap();
        let b = build_posterior(&shift(&pts), &shift(&grid), &spec).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_nonnegative_and_mass_conserved(seed in 0u64..1000, n in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, n, 48.0);
        let grid = grid_coordinates(6, 6, 8);
        let p = build_posterior(&pts, &grid, &PosteriorSpec { sigma: 8.0, margin: Some(7.2) }).unwrap();
        let d = Tensor::<f64>::uniform(vec![1, 6, 6], 0.0, 1.0, &mut rng);
        prop_assert!(bayes_value(&d, &p) >= 0.0);
        let mut expected = vec![0.0; p.cols()];
        for m in 0..p.rows() {
            for (k, e) in expected.iter_mut().enumerate() {
                *e += p.get(m, k) * d.data()[m];
            }
        }
        prop_assert!((expected.iter().sum::<f64>() - d.sum()).abs() < 1e-6);
    }
}
