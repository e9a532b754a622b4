use nerhd_core::model::AreaSample;
use nerhd_core::mq::{estimate_taus, TauGrid};
use nerhd_core::rng::rng_for;
use nerhd_core::{gee, mle, predict, FitControl, GeeConfig, PsiBase, Sample};
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;

/// Two-slope data with area effects and unequal sample sizes.
fn sample(seed: u64, m: usize) -> Sample {
    let mut rng = rng_for(seed, 0, 0);
    let areas = (0..m)
        .map(|i| {
            let n = rng.random_range(3..8);
            let slope = if i % 2 == 0 { 1.0 } else { 3.0 };
            let effect: f64 = rng.sample::<f64, _>(StandardNormal);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
            let y = x.iter().map(|xj| 2.0 + slope * xj + effect + 0.7 * rng.sample::<f64, _>(StandardNormal)).collect();
            AreaSample { id: format!("a{i}"), y, x, k: vec![1.0; n], h: 1.0, pop_size: 40, pop_mean: vec![2.5] }
        })
        .collect();
    Sample::from_areas(areas, 1).unwrap()
}

fn affine(s: &Sample, a: f64, b: f64) -> Sample {
    let areas = s
        .areas()
        .iter()
        .map(|ar| AreaSample { y: ar.y.iter().map(|v| a * v + b).collect(), ..ar.clone() })
        .collect();
    Sample::from_areas(areas, s.p()).unwrap()
}

fn close(x: &[f64], y: &[f64], tol: f64) -> bool {
    x.iter().zip(y).all(|(u, v)| (u - v).abs() <= tol * (1.0 + u.abs().max(v.abs())))
}

fn tight() -> GeeConfig {
    GeeConfig { control: FitControl { tol: 1e-10, max_iter: 500, ..FitControl::default() }, ..GeeConfig::default() }
}

#[test]
fn census_areas_predict_their_sample_mean() {
    let s = sample(3, 6);
    let census = Sample::from_areas(
        s.areas().iter().map(|a| AreaSample { pop_size: a.n(), ..a.clone() }).collect(),
        1,
    )
    .unwrap();
    let fit = gee::fit(&census, &tight(), &[0.5; 6]).unwrap();
    let got = predict::ebp_finite(&census, &fit);
    for (a, g) in census.areas().iter().zip(got) {
        assert!((a.y_mean() - g).abs() < 1e-12);
    }
}

#[test]
fn elb_taus_stay_on_the_grid_range() {
    let s = sample(8, 10);
    let grid = TauGrid::from_range(0.1, 0.9, 0.05).unwrap();
    let est = estimate_taus(&s, &grid, 1.345).unwrap();
    assert!(est.elb_tau.iter().all(|t| (0.1..=0.9).contains(t)));
    assert!(est.shrinkage.iter().all(|b| (0.0..=1.0).contains(b)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gee_predictions_follow_affine_maps_of_y(seed in 0u64..1000, a in 0.2f64..5.0, b in -20.0f64..20.0) {
        let s = sample(seed, 6);
        let taus = [0.3, 0.7, 0.5, 0.4, 0.6, 0.5];
        let cfg = tight();
        let base = gee::fit(&s, &cfg, &taus).unwrap();
        let moved = gee::fit(&affine(&s, a, b), &cfg, &taus).unwrap();
        let want: Vec<f64> = predict::ebp(&s, &base).iter().map(|v| a * v + b).collect();
        prop_assert!(close(&predict::ebp(&affine(&s, a, b), &moved), &want, 1e-6));
    }

    #[test]
    fn mle_predictions_follow_affine_maps_of_y(seed in 0u64..1000, a in 0.2f64..5.0, b in -20.0f64..20.0) {
        let s = sample(seed, 6);
        let ctl = FitControl { tol: 1e-10, max_iter: 500, ..FitControl::default() };
        let base = mle::fit_mle(&s, &ctl).unwrap();
        let moved = mle::fit_mle(&affine(&s, a, b), &ctl).unwrap();
        let want: Vec<f64> = predict::ebp(&s, &base).iter().map(|v| a * v + b).collect();
        // Ascent crawls when the area variance sits on zero, so the stopping
        // rule leaves more slack than in the GEE case.
        prop_assert!(close(&predict::ebp(&affine(&s, a, b), &moved), &want, 1e-4));
    }

    #[test]
    fn unit_order_within_areas_is_irrelevant(seed in 0u64..1000) {
        let s = sample(seed, 5);
        let reversed = Sample::from_areas(
            s.areas().iter().map(|a| AreaSample {
                y: a.y.iter().rev().copied().collect(),
                x: a.x.iter().rev().copied().collect(),
                ..a.clone()
            }).collect(),
            1,
        ).unwrap();
        let cfg = GeeConfig { psi: PsiBase::Identity, ..tight() };
        let f1 = gee::fit(&s, &cfg, &[0.5; 5]).unwrap();
        let f2 = gee::fit(&reversed, &cfg, &[0.5; 5]).unwrap();
        prop_assert!(close(&predict::ebp(&s, &f1), &predict::ebp(&reversed, &f2), 1e-8));
    }

    #[test]
    fn shrinkage_is_a_weight_that_falls_with_n(s in 1e-4f64..1e4, g in 1e-4f64..1e4, n in 1usize..200) {
        let b = predict::shrinkage(s, n, g);
        prop_assert!(b > 0.0 && b < 1.0);
        prop_assert!(predict::shrinkage(s, n + 1, g) < b);
    }
}

