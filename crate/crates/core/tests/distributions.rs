//! Sampled initial protections, sojourns and post-jump rates against their
//! closed-form laws.

mod support;

use pdmpq::pdmp::sample_inter_jump_time;
use pdmpq::{substream, Corrosion, CorrosionParams, CorrosionStateF64, JumpCause, Mode, PdmpModel};
use statrs::distribution::{ContinuousCDF, Exp, Uniform, Weibull};
use statrs::function::gamma::gamma;
use support::ks_statistic;

const SAMPLES: u64 = 50_000;

fn model() -> Corrosion {
    Corrosion::new(CorrosionParams::default()).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn initial_protection_is_weibull() {
    let m = model();
    let xs: Vec<f64> = (0..SAMPLES)
        .map(|i| {
            let z = m.sample_initial(&mut substream(11, i));
            assert_eq!(z.mode, Mode::Workshop);
            assert_eq!(z.thickness_loss, 0.0);
            z.protection
        })
        .collect();
    let expected = 11_800.0 * gamma(1.4);
    assert!(
        (mean(&xs) / expected - 1.0).abs() < 0.02,
        "mean {} vs {expected}",
        mean(&xs)
    );
    let law = Weibull::new(2.5, 11_800.0).unwrap();
    let d = ks_statistic(xs, |x| law.cdf(x));
    assert!(d < 0.01, "KS {d}");
}

#[test]
fn initial_rate_is_uniform_on_workshop_range() {
    let m = model();
    let xs: Vec<f64> = (0..SAMPLES)
        .map(|i| m.sample_initial(&mut substream(12, i)).rate)
        .collect();
    assert!(xs.iter().all(|r| (1e-6..=1e-5).contains(r)));
    let law = Uniform::new(1e-6, 1e-5).unwrap();
    let d = ks_statistic(xs, |x| law.cdf(x));
    assert!(d < 0.01, "KS {d}");
}

#[test]
fn sojourns_are_exponential_with_mean_in_hours() {
    let m = model();
    for (mode, mean_hours) in [
        (Mode::Workshop, 17_520.0),
        (Mode::Operation, 131_400.0),
        (Mode::DryDock, 8_760.0),
    ] {
        let env = m.params().env(mode).unwrap();
        // Slowest rate, no protection: the boundary is far beyond the sojourns.
        let z = CorrosionStateF64 {
            mode,
            thickness_loss: 0.0,
            protection: 0.0,
            rate: env.rate_low,
            clock: 0.0,
        };
        assert!(m.boundary_time(&z) > 10.0 * mean_hours);
        let xs: Vec<f64> = (0..SAMPLES)
            .map(|i| {
                let (s, cause) = sample_inter_jump_time(&m, &z, &mut substream(13, i)).unwrap();
                assert_eq!(cause, JumpCause::Random);
                s
            })
            .collect();
        assert!(
            (mean(&xs) / mean_hours - 1.0).abs() < 0.02,
            "{mode:?}: mean {}",
            mean(&xs)
        );
        let law = Exp::new(1.0 / mean_hours).unwrap();
        let d = ks_statistic(xs, |x| law.cdf(x));
        assert!(d < 0.01, "{mode:?}: KS {d}");
    }
}

#[test]
fn post_jump_rates_follow_the_next_environment() {
    let m = model();
    for mode in [Mode::Workshop, Mode::Operation, Mode::DryDock] {
        let next = mode.next();
        let env = m.params().env(next).unwrap();
        let pre = CorrosionStateF64 {
            mode,
            thickness_loss: 0.05,
            protection: 0.0,
            rate: 3e-6,
            clock: 100.0,
        };
        let xs: Vec<f64> = (0..SAMPLES)
            .map(|i| {
                let post = m.jump(&pre, &mut substream(14, i));
                assert_eq!(post.mode, next);
                assert_eq!(post.thickness_loss, 0.05);
                assert_eq!(post.clock, 0.0);
                post.rate
            })
            .collect();
        assert!(xs.iter().all(|r| *r >= env.rate_low && *r <= env.rate_high));
        let mid = 0.5 * (env.rate_low + env.rate_high);
        assert!((mean(&xs) / mid - 1.0).abs() < 0.02, "{next:?}: mean {}", mean(&xs));
        let law = Uniform::new(env.rate_low, env.rate_high).unwrap();
        let d = ks_statistic(xs, |x| law.cdf(x));
        assert!(d < 0.01, "{next:?}: KS {d}");
    }
}
