use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use smc_calibrate::io::snapshot::{read_particle_table, write_particle_table};
use smc_calibrate::likelihood::{tempered_log_weight, GpCovariance, GpDiscrepancy};
use smc_calibrate::param_space::{ParamSpace, ParameterVector};
use smc_calibrate::smc::{
    bhattacharyya, ess_for_increment, importance_reweight, multinomial_resample, select_increment,
    Particle, TemperState,
};

/// Every value with a textual form: finite (including subnormals and
/// signed zeros), infinities and the canonical NaN.
fn extended() -> impl Strategy<Value = f64> {
    use prop::num::f64::{NEGATIVE, NORMAL, POSITIVE, SUBNORMAL, ZERO};
    prop_oneof![
        8 => POSITIVE | NEGATIVE | NORMAL | SUBNORMAL | ZERO,
        1 => Just(f64::INFINITY),
        1 => Just(f64::NEG_INFINITY),
        1 => Just(f64::NAN),
    ]
}

fn log_liks() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-400.0f64..0.0, 2..200)
}

proptest! {
    #[test]
    fn ess_is_non_increasing_in_gamma(ll in log_liks(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let e_lo = ess_for_increment(&ll, lo).unwrap();
        let e_hi = ess_for_increment(&ll, hi).unwrap();
        prop_assert!(e_hi <= e_lo * (1.0 + 1e-12), "ESS({lo}) = {e_lo} < ESS({hi}) = {e_hi}");
        prop_assert!(e_hi >= 1.0 - 1e-12 && e_lo <= ll.len() as f64 * (1.0 + 1e-12));
    }

    #[test]
    fn schedule_sums_to_one(
        ll in log_liks(),
        gamma_min in 0.01f64..0.6,
        frac in 0.01f64..1.0,
    ) {
        let thresh = 1.0 + frac * (ll.len() as f64 - 1.0);
        let mut temper = TemperState::default();
        while !temper.is_complete() {
            let g = select_increment(&ll, temper.cumulative, gamma_min, thresh).unwrap();
            temper.push(g).unwrap();
            prop_assert!(temper.increments.len() <= (1.0 / gamma_min).ceil() as usize);
        }
        prop_assert_eq!(temper.cumulative, 1.0);
        let total: f64 = temper.increments.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let (_, rest) = temper.increments.split_last().unwrap();
        prop_assert!(rest.iter().all(|&g| g >= gamma_min));
    }

    #[test]
    fn gp_likelihood_ignores_site_order(
        sites in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -2.0f64..2.0), 1..25),
        range in 0.05f64..2.0,
        variance in 0.1f64..3.0,
        noise in 0.01f64..1.0,
        rotate in 0usize..25,
    ) {
        let cov = GpCovariance { range, variance, noise };
        let locs: Vec<[f64; 2]> = sites.iter().map(|s| [s.0, s.1]).collect();
        let res: Vec<f64> = sites.iter().map(|s| s.2).collect();
        let base = GpDiscrepancy::new(locs.clone()).unwrap().log_likelihood(&res, &cov).unwrap();
        let mut order: Vec<usize> = (0..sites.len()).rev().collect();
        order.rotate_left(rotate % sites.len());
        let plocs = order.iter().map(|&i| locs[i]).collect();
        let pres: Vec<f64> = order.iter().map(|&i| res[i]).collect();
        let permuted = GpDiscrepancy::new(plocs).unwrap().log_likelihood(&pres, &cov).unwrap();
        prop_assert!((base - permuted).abs() <= 1e-9 * base.abs().max(1.0), "{base} vs {permuted}");
    }

    #[test]
    fn tempering_preserves_ranking(ll in log_liks(), gamma in 1e-3f64..1.0) {
        let w = importance_reweight(&ll, gamma).unwrap();
        for i in 0..ll.len() {
            for j in 0..ll.len() {
                if ll[i] < ll[j] {
                    prop_assert!(w[i] <= w[j]);
                    prop_assert!(
                        tempered_log_weight(ll[i], gamma).unwrap()
                            <= tempered_log_weight(ll[j], gamma).unwrap()
                    );
                }
            }
        }
        let total: f64 = w.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bhattacharyya_is_symmetric_and_non_negative(
        a in prop::collection::vec(-5.0f64..5.0, 1..300),
        b in prop::collection::vec(-5.0f64..5.0, 1..300),
        m in 2usize..300,
    ) {
        let ab = bhattacharyya(&a, &b, m).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, bhattacharyya(&b, &a, m).unwrap());
        prop_assert_eq!(bhattacharyya(&a, &a, m).unwrap(), 0.0);
    }

    #[test]
    fn snapshot_table_round_trips_bit_exactly(
        rows in prop::collection::vec(
            (-1e6f64..1e6, -3.0f64..1.0, extended(), 0.0f64..1.0, extended()),
            1..40,
        ),
    ) {
        let space = ParamSpace::new(vec![
            smc_calibrate::param_space::ParamSpec::new(
                "x",
                smc_calibrate::param_space::Prior::Normal { mean: 0.0, variance: 1.0 },
            ).unwrap(),
            smc_calibrate::param_space::ParamSpec::new(
                "y",
                smc_calibrate::param_space::Prior::LogUniform { base: 10.0, lower_exp: -3.0, upper_exp: 1.0 },
            ).unwrap(),
        ]).unwrap();
        let particles: Vec<Particle> = rows
            .iter()
            .map(|&(x, y, ll, w, m)| Particle {
                theta: ParameterVector::new(vec![x, y]).unwrap(),
                log_lik: ll,
                weight: w,
                metric: m,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_particle_table(&path, &space, &particles).unwrap();
        let back = read_particle_table(&path, &space).unwrap();
        prop_assert_eq!(back.len(), particles.len());
        for (a, b) in particles.iter().zip(&back) {
            prop_assert!(a.bits_eq(b), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn natural_transform_round_trips(x in -1e3f64..1e3, e in -3.0f64..1.0) {
        let space = ParamSpace::preset("psu3dice_narrow_priors").unwrap();
        let theta: Vec<f64> = space
            .params()
            .iter()
            .map(|p| if matches!(p.prior, smc_calibrate::param_space::Prior::LogUniform { .. }) { e } else { x })
            .collect();
        let back = space.from_natural(&space.to_natural(&theta)).unwrap();
        for (a, b) in theta.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}

/// Mean of `g` over resampled swarms against the weighted mean, with a
/// 3-sigma bound from the multinomial variance.
#[test]
fn resampling_is_unbiased() {
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let cases: [(&[f64], &[f64]); 3] = [
        (&[0.1, 0.2, 0.3, 0.4], &[1.0, -2.0, 0.5, 3.0]),
        (&[0.97, 0.01, 0.01, 0.01], &[0.0, 10.0, -10.0, 1.0]),
        (&[0.2; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]),
    ];
    for (w, g) in cases {
        let n = w.len();
        let trials = 20_000;
        let target: f64 = w.iter().zip(g).map(|(w, g)| w * g).sum();
        let var_g: f64 = w.iter().zip(g).map(|(w, g)| w * (g - target).powi(2)).sum();
        let mut total = 0.0;
        for _ in 0..trials {
            let idx = multinomial_resample(w, n, &mut rng).unwrap();
            total += idx.iter().map(|&i| g[i]).sum::<f64>() / n as f64;
        }
        let mean = total / trials as f64;
        let sd = (var_g / (n * trials) as f64).sqrt();
        assert!((mean - target).abs() < 3.0 * sd, "{mean} vs {target} (sd {sd})");
    }
}

#[test]
fn resampling_pair_probability() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let trials = 100_000;
    let both_first = (0..trials)
        .filter(|_| multinomial_resample(&[0.75, 0.25], 2, &mut rng).unwrap() == [0, 0])
        .count();
    let p = 0.5625;
    let sd = (p * (1.0 - p) / trials as f64).sqrt();
    let observed = both_first as f64 / trials as f64;
    assert!((observed - p).abs() < 3.0 * sd, "{observed}");
}
