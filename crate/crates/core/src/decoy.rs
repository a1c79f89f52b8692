//! Asymptotic two-decoy BB84 key rate.
//!
//! Vacuum and single-photon yields are lower-bounded from the signal, decoy
//! and weak-vacuum gains; the single-photon error is upper-bounded from the
//! decoy and vacuum error counts. Key is distilled from the Y basis only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{Basis, IntensityClass};
use crate::error::{Error, Result};
use crate::linksim::{analytic_gain_qber, DecoyIntensities, GainQber, LinkParams, TallyCounts};

pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!(
            "binary entropy needs x in [0, 1], got {x}"
        )));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Lower bound on the vacuum yield.
pub fn bound_y0(q_nu: f64, q_omega: f64, nu: f64, omega: f64) -> Result<f64> {
    if nu == omega {
        return Err(Error::DegenerateDecoy(nu));
    }
    if !(nu > omega && omega >= 0.0) {
        return Err(Error::Config(format!(
            "vacuum bound needs nu > omega >= 0, got {nu}, {omega}"
        )));
    }
    let v = (nu * q_omega * omega.exp() - omega * q_nu * nu.exp()) / (nu - omega);
    Ok(v.max(0.0))
}

/// Lower bound on the single-photon yield, clamped to `[0, 1]`.
pub fn bound_y1(
    q_mu: f64,
    q_nu: f64,
    q_omega: f64,
    mu: f64,
    nu: f64,
    omega: f64,
    y0_l: f64,
) -> Result<f64> {
    DecoyIntensities::new(mu, nu, omega)?;
    let denom = mu * nu - mu * omega - nu * nu + omega * omega;
    if denom <= 0.0 {
        return Err(Error::Config(format!(
            "single-photon bound denominator {denom} <= 0"
        )));
    }
    let inner = q_nu * nu.exp()
        - q_omega * omega.exp()
        - (nu * nu - omega * omega) / (mu * mu) * (q_mu * mu.exp() - y0_l);
    Ok((mu / denom * inner).clamp(0.0, 1.0))
}

/// Upper bound on the single-photon error rate, clamped to `[0, 0.5]`.
///
/// `eq_nu` and `eq_omega` are the error-weighted gains `E*Q`.
pub fn bound_e1(eq_nu: f64, eq_omega: f64, nu: f64, omega: f64, y1_l: f64) -> Result<f64> {
    if !(y1_l > 0.0) {
        return Err(Error::UndefinedBound);
    }
    if nu == omega {
        return Err(Error::DegenerateDecoy(nu));
    }
    let v = (eq_nu * nu.exp() - eq_omega * omega.exp()) / ((nu - omega) * y1_l);
    Ok(v.clamp(0.0, 0.5))
}

/// Gains and QBERs of the three intensity classes, all measured in the Z basis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedGains {
    pub mu: GainQber,
    pub nu: GainQber,
    pub omega: GainQber,
}

impl ObservedGains {
    pub fn analytic(params: &LinkParams, intens: &DecoyIntensities) -> Result<Self> {
        let eta = params.basis_eta(Basis::Z);
        let y0 = params.y0()?;
        let g = |l| analytic_gain_qber(l, eta, y0, params.e_det);
        Ok(Self {
            mu: g(intens.mu),
            nu: g(intens.nu),
            omega: g(intens.omega),
        })
    }

    pub fn from_tally(t: &TallyCounts) -> Result<Self> {
        let get = |class| {
            t.row(class, Basis::Z)
                .map(|r| r.gain_qber())
                .ok_or_else(|| Error::Config(format!("tally has no Z-basis {class} row")))
        };
        Ok(Self {
            mu: get(IntensityClass::Signal)?,
            nu: get(IntensityClass::Decoy)?,
            omega: get(IntensityClass::Vacuum)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateBreakdown {
    pub q_mu: f64,
    pub e_mu: f64,
    pub q_nu: f64,
    pub e_nu: f64,
    pub q_omega: f64,
    pub e_omega: f64,
    pub y0_l: f64,
    pub y1_l: f64,
    pub e1_u: f64,
    pub q1_l: f64,
    /// Secret bits per sent symbol.
    pub r_per_pulse: f64,
    /// Secret bits per second.
    pub r_bps: f64,
}

/// Per-pulse and per-second key rate for given single-photon estimates.
pub fn rate_from_estimates(
    q_mu: f64,
    e_mu: f64,
    y1: f64,
    e1: f64,
    params: &LinkParams,
    intens: &DecoyIntensities,
) -> Result<(f64, f64)> {
    let q1 = y1 * intens.mu * (-intens.mu).exp();
    let sift = params.p_y_alice * params.p_y_bob;
    let raw = -q_mu * params.f_ec * binary_entropy(e_mu)? + q1 * (1.0 - binary_entropy(e1)?);
    let r_per_pulse = sift * raw.max(0.0);
    let r_bps = r_per_pulse * params.clock * params.y_receiver_factor;
    Ok((r_per_pulse, r_bps))
}

pub fn secure_key_rate(
    gains: &ObservedGains,
    params: &LinkParams,
    intens: &DecoyIntensities,
) -> Result<RateBreakdown> {
    params.validate()?;
    intens.validate()?;
    let DecoyIntensities { mu, nu, omega } = *intens;
    let y0_l = bound_y0(gains.nu.q, gains.omega.q, nu, omega)?;
    let y1_l = bound_y1(gains.mu.q, gains.nu.q, gains.omega.q, mu, nu, omega, y0_l)?;
    let e1_u = match bound_e1(
        gains.nu.e * gains.nu.q,
        gains.omega.e * gains.omega.q,
        nu,
        omega,
        y1_l,
    ) {
        Ok(e) => e,
        // no single-photon yield certified, nothing to distil
        Err(Error::UndefinedBound) => 0.5,
        Err(e) => return Err(e),
    };
    let (r_per_pulse, r_bps) = if gains.mu.q > 0.0 && y1_l > 0.0 {
        rate_from_estimates(gains.mu.q, gains.mu.e, y1_l, e1_u, params, intens)?
    } else {
        (0.0, 0.0)
    };
    Ok(RateBreakdown {
        q_mu: gains.mu.q,
        e_mu: gains.mu.e,
        q_nu: gains.nu.q,
        e_nu: gains.nu.e,
        q_omega: gains.omega.q,
        e_omega: gains.omega.e,
        y0_l,
        y1_l,
        e1_u,
        q1_l: y1_l * mu * (-mu).exp(),
        r_per_pulse,
        r_bps,
    })
}

/// Key rate at `params.loss_db` with the closed-form channel.
pub fn analytic_rate(params: &LinkParams, intens: &DecoyIntensities) -> Result<RateBreakdown> {
    secure_key_rate(&ObservedGains::analytic(params, intens)?, params, intens)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub loss_db: f64,
    pub breakdown: RateBreakdown,
    /// Signal-state QBER.
    pub qber: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub points: Vec<SweepPoint>,
}

impl Sweep {
    /// Largest swept loss that still yields a positive key rate.
    pub fn cutoff_db(&self) -> Option<f64> {
        self.points
            .iter()
            .rev()
            .find(|p| p.breakdown.r_bps > 0.0)
            .map(|p| p.loss_db)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("loss_db,q_mu,e_mu,y1_l,e1_u,r_per_pulse,r_bps\n");
        for p in &self.points {
            let b = &p.breakdown;
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                p.loss_db, b.q_mu, b.e_mu, b.y1_l, b.e1_u, b.r_per_pulse, b.r_bps
            ));
        }
        s
    }
}

/// Loss grid `loss_min, loss_min + step, ...` up to and including `loss_max`.
pub fn loss_grid(loss_min: f64, loss_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Config(format!(
            "loss step must be positive, got {step}"
        )));
    }
    if !(loss_min.is_finite() && loss_max.is_finite()) {
        return Err(Error::Config("loss range must be finite".into()));
    }
    if loss_max < loss_min {
        return Ok(Vec::new());
    }
    let n = ((loss_max - loss_min) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| loss_min + i as f64 * step).collect())
}

pub fn sweep_loss(
    loss_min: f64,
    loss_max: f64,
    step: f64,
    params: &LinkParams,
    intens: &DecoyIntensities,
) -> Result<Sweep> {
    let grid = loss_grid(loss_min, loss_max, step)?;
    let points = grid
        .into_par_iter()
        .map(|loss_db| {
            let p = LinkParams { loss_db, ..*params };
            let breakdown = analytic_rate(&p, intens)?;
            Ok(SweepPoint {
                loss_db,
                breakdown,
                qber: breakdown.e_mu,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sweep { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Yield of an n-photon state on an honest channel.
    fn true_yield(n: i32, eta: f64, y0: f64) -> f64 {
        y0 + 1.0 - (1.0 - eta).powi(n)
    }

    fn true_error(n: i32, eta: f64, y0: f64, e_det: f64) -> f64 {
        (0.5 * y0 + e_det * (1.0 - (1.0 - eta).powi(n))) / true_yield(n, eta, y0)
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(0.033).unwrap() - 0.2092205).abs() < 1e-6);
        assert!(binary_entropy(1.1).is_err());
        assert!(binary_entropy(-0.1).is_err());
    }

    fn honest(loss: f64) -> (LinkParams, DecoyIntensities, ObservedGains) {
        let p = LinkParams {
            loss_db: loss,
            ..Default::default()
        };
        let i = DecoyIntensities::default();
        let g = ObservedGains::analytic(&p, &i).unwrap();
        (p, i, g)
    }

    #[test]
    fn y0_bound_is_sound_at_fifteen_db() {
        let (p, i, g) = honest(15.0);
        let y0 = p.y0().unwrap();
        let b = bound_y0(g.nu.q, g.omega.q, i.nu, i.omega).unwrap();
        assert!(b >= 0.0 && b <= y0, "{b} vs {y0}");
    }

    #[test]
    fn y0_bound_edge_cases() {
        assert_eq!(bound_y0(0.0, 0.0, 0.16, 0.015).unwrap(), 0.0);
        assert!((bound_y0(0.3, 1e-7, 0.16, 0.0).unwrap() - 1e-7).abs() < 1e-20);
        assert!(matches!(
            bound_y0(0.1, 0.1, 0.1, 0.1),
            Err(Error::DegenerateDecoy(_))
        ));
    }

    #[test]
    fn y1_bound_is_tight_and_sound_at_fifteen_db() {
        let (p, i, g) = honest(15.0);
        let y0_l = bound_y0(g.nu.q, g.omega.q, i.nu, i.omega).unwrap();
        let y1_l = bound_y1(g.mu.q, g.nu.q, g.omega.q, i.mu, i.nu, i.omega, y0_l).unwrap();
        let y1 = true_yield(1, p.eta(), p.y0().unwrap());
        assert!((y1 - 0.0221366).abs() < 1e-6);
        assert!(y1_l <= y1 && y1_l > 0.9 * y1, "{y1_l} vs {y1}");
    }

    #[test]
    fn y1_bound_edge_cases() {
        assert_eq!(bound_y1(0.0, 0.0, 0.0, 0.4, 0.16, 0.015, 0.0).unwrap(), 0.0);
        assert!(matches!(
            bound_y1(0.01, 0.01, 0.01, 0.4, 0.16, 0.25, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn e1_bound_is_sound_at_fifteen_db() {
        let (p, i, g) = honest(15.0);
        let y0_l = bound_y0(g.nu.q, g.omega.q, i.nu, i.omega).unwrap();
        let y1_l = bound_y1(g.mu.q, g.nu.q, g.omega.q, i.mu, i.nu, i.omega, y0_l).unwrap();
        let e1_u = bound_e1(g.nu.e * g.nu.q, g.omega.e * g.omega.q, i.nu, i.omega, y1_l).unwrap();
        let e1 = true_error(1, p.eta(), p.y0().unwrap(), p.e_det);
        assert!((e1 - 0.033).abs() < 1e-3);
        assert!(e1_u >= e1);
    }

    #[test]
    fn e1_bound_edge_cases() {
        assert_eq!(bound_e1(0.0, 0.0, 0.16, 0.015, 0.01).unwrap(), 0.0);
        assert!(matches!(
            bound_e1(1e-4, 1e-6, 0.16, 0.015, 0.0),
            Err(Error::UndefinedBound)
        ));
        assert_eq!(bound_e1(1.0, 0.0, 0.16, 0.015, 1e-3).unwrap(), 0.5);
    }

    #[test]
    fn zero_signal_gain_gives_zero_rate() {
        let zero = GainQber { q: 0.0, e: 0.5 };
        let g = ObservedGains {
            mu: zero,
            nu: zero,
            omega: zero,
        };
        let b = secure_key_rate(&g, &LinkParams::default(), &DecoyIntensities::default()).unwrap();
        assert_eq!(b.r_per_pulse, 0.0);
        assert_eq!(b.r_bps, 0.0);
    }

    #[test]
    fn sixty_db_is_dark_count_limited() {
        let p = LinkParams {
            loss_db: 60.0,
            ..Default::default()
        };
        let b = analytic_rate(&p, &DecoyIntensities::default()).unwrap();
        assert_eq!(b.r_bps, 0.0);
    }

    #[test]
    fn sweep_grid_shapes() {
        let p = LinkParams::default();
        let i = DecoyIntensities::default();
        assert_eq!(sweep_loss(0.0, 60.0, 1.0, &p, &i).unwrap().points.len(), 61);
        assert_eq!(sweep_loss(15.0, 15.0, 1.0, &p, &i).unwrap().points.len(), 1);
        assert!(sweep_loss(20.0, 10.0, 1.0, &p, &i)
            .unwrap()
            .points
            .is_empty());
        assert!(matches!(
            sweep_loss(0.0, 10.0, 0.0, &p, &i),
            Err(Error::Config(_))
        ));
        assert_eq!(loss_grid(0.0, 1.0, 0.1).unwrap().len(), 11);
    }

    #[test]
    fn low_loss_qber_sits_at_misalignment_floor() {
        let s = sweep_loss(
            0.0,
            10.0,
            1.0,
            &LinkParams::default(),
            &DecoyIntensities::default(),
        )
        .unwrap();
        for p in &s.points {
            assert!((p.qber - 0.033).abs() < 0.003);
        }
    }

    #[test]
    fn sweep_csv_header() {
        let s = sweep_loss(
            0.0,
            2.0,
            1.0,
            &LinkParams::default(),
            &DecoyIntensities::default(),
        )
        .unwrap();
        let csv = s.to_csv();
        assert!(csv.starts_with("loss_db,q_mu,e_mu,y1_l,e1_u,r_per_pulse,r_bps\n"));
        assert_eq!(csv.lines().count(), 4);
        let row: Vec<f64> = csv
            .lines()
            .nth(2)
            .unwrap()
            .split(',')
            .map(|x| x.parse().unwrap())
            .collect();
        assert_eq!(row[0], 1.0);
        assert_eq!(row[6], s.points[1].breakdown.r_bps);
    }

    proptest! {
        #[test]
        fn bounds_never_overestimate(
            loss in 0.0..50.0f64, e_det in 0.0..0.05f64, dark in 0.0..1e3f64
        ) {
            let p = LinkParams { loss_db: loss, e_det, dark_rate: dark, ..Default::default() };
            let i = DecoyIntensities::default();
            let b = analytic_rate(&p, &i).unwrap();
            let y0 = p.y0().unwrap();
            let y1 = true_yield(1, p.eta(), y0);
            let e1 = true_error(1, p.eta(), y0, e_det);
            prop_assert!(b.y0_l <= y0 * (1.0 + 1e-9) + 1e-18);
            prop_assert!(b.y1_l <= y1);
            prop_assert!(b.e1_u >= e1 * (1.0 - 1e-9));
            let (_, r_true) = rate_from_estimates(b.q_mu, b.e_mu, y1, e1, &p, &i).unwrap();
            prop_assert!(b.r_bps <= r_true);
        }

        #[test]
        fn rate_monotone_in_loss_and_misalignment(
            l1 in 0.0..60.0f64, dl in 0.0..10.0f64, e1 in 0.0..0.08f64, de in 0.0..0.05f64
        ) {
            let i = DecoyIntensities::default();
            let base = LinkParams { loss_db: l1, e_det: e1, ..Default::default() };
            let r = analytic_rate(&base, &i).unwrap().r_bps;
            let lossier = analytic_rate(&LinkParams { loss_db: l1 + dl, ..base }, &i).unwrap().r_bps;
            let noisier = analytic_rate(&LinkParams { e_det: e1 + de, ..base }, &i).unwrap().r_bps;
            prop_assert!(lossier <= r * (1.0 + 1e-12));
            prop_assert!(noisier <= r * (1.0 + 1e-12));
        }
    }
}
