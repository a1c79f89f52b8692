//! Coherent-state algebra for the two-laser transmitter.
//!
//! Three slave pulses seeded by one master pulse share a random global phase
//! `phi1` and carry programmed relative phases `phi12`, `phi23`. The
//! neighbouring pulses of the previous and next triplets are offset by the
//! independent random phases `phi_rp` and `phi_rf`. A one-bin-delay
//! interferometer then mixes consecutive pulses:
//!
//! ```text
//! in : L_P  R_P  E   L   R        (a3_prev a1 a2 a3 a1_next)
//! out:      R_P  E   L   R        each = (previous + current) / 2
//! ```
//!
//! The optical carrier `e^{i w t}` is common to every bin and dropped; all
//! phases are relative to the frame.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::{Add, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// An optical phase in radians, stored reduced to `[0, 2π)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Phase(f64);

impl Phase {
    pub const ZERO: Phase = Phase(0.0);
    pub const HALF_PI: Phase = Phase(PI / 2.0);
    pub const PI: Phase = Phase(PI);
    pub const THREE_HALVES_PI: Phase = Phase(1.5 * PI);

    /// Reduces `radians` modulo 2π. Non-finite input stays non-finite.
    pub fn new(radians: f64) -> Self {
        let r = radians.rem_euclid(TAU);
        // rem_euclid rounds tiny negative values up to exactly 2π
        Phase(if r >= TAU { 0.0 } else { r })
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    /// Shortest arc length to `other`, in `[0, π]`.
    pub fn distance(self, other: Phase) -> f64 {
        let d = (self.0 - other.0).abs();
        d.min(TAU - d)
    }

    pub fn approx_eq(self, other: Phase, tol: f64) -> bool {
        self.distance(other) <= tol
    }

    /// Unit phasor `e^{i phi}`.
    pub fn phasor(self) -> Complex64 {
        Complex64::from_polar(1.0, self.0)
    }
}

impl Add for Phase {
    type Output = Phase;
    fn add(self, rhs: Phase) -> Phase {
        Phase::new(self.0 + rhs.0)
    }
}

impl Sub for Phase {
    type Output = Phase;
    fn sub(self, rhs: Phase) -> Phase {
        Phase::new(self.0 - rhs.0)
    }
}

impl Neg for Phase {
    type Output = Phase;
    fn neg(self) -> Phase {
        Phase::new(-self.0)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}π", self.0 / PI)
    }
}

/// Complex field amplitude of one time bin, in units of √(mean photon number).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoherentAmplitude {
    pub re: f64,
    pub im: f64,
}

impl CoherentAmplitude {
    pub const VACUUM: CoherentAmplitude = CoherentAmplitude { re: 0.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn from_polar(r: f64, phi: Phase) -> Self {
        Complex64::from_polar(r, phi.radians()).into()
    }

    pub fn magnitude(self) -> f64 {
        self.re.hypot(self.im)
    }

    /// `|alpha|^2`, the mean photon number of the bin.
    pub fn mean_photon_number(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    pub fn as_complex(self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    /// Euclidean distance in the complex plane.
    pub fn distance(self, other: CoherentAmplitude) -> f64 {
        (self.as_complex() - other.as_complex()).norm()
    }
}

impl From<Complex64> for CoherentAmplitude {
    fn from(c: Complex64) -> Self {
        Self { re: c.re, im: c.im }
    }
}

/// Five bins around one encoding triplet, before the interferometer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseFrame {
    /// Last pulse of the preceding triplet (bin L_P).
    pub a3_prev: CoherentAmplitude,
    /// Bin R_P.
    pub a1: CoherentAmplitude,
    /// Bin E.
    pub a2: CoherentAmplitude,
    /// Bin L.
    pub a3: CoherentAmplitude,
    /// First pulse of the following triplet (bin R).
    pub a1_next: CoherentAmplitude,
}

/// The four interfered output bins of one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFrame {
    pub rp: CoherentAmplitude,
    pub e: CoherentAmplitude,
    pub l: CoherentAmplitude,
    pub r: CoherentAmplitude,
}

/// Non-negative magnitude plus phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarForm {
    pub r: f64,
    pub phi: Phase,
}

impl PolarForm {
    pub fn to_amplitude(self) -> CoherentAmplitude {
        CoherentAmplitude::from_polar(self.r, self.phi)
    }
}

/// Splits an amplitude into magnitude and phase. The phase of the vacuum is 0.
pub fn amplitude_to_polar(alpha: CoherentAmplitude) -> Result<PolarForm> {
    ensure_finite("re", alpha.re)?;
    ensure_finite("im", alpha.im)?;
    let r = alpha.magnitude();
    let phi = if r == 0.0 {
        Phase::ZERO
    } else {
        Phase::new(alpha.im.atan2(alpha.re))
    };
    Ok(PolarForm { r, phi })
}

/// Builds the five input bins from the laser amplitude and the phase settings.
pub fn make_frame(
    amplitude: f64,
    phi1: Phase,
    phi12: Phase,
    phi23: Phase,
    phi_rp: Phase,
    phi_rf: Phase,
) -> Result<PulseFrame> {
    ensure_finite("amplitude", amplitude)?;
    if amplitude < 0.0 {
        return Err(Error::Domain(format!(
            "amplitude must be non-negative, got {amplitude}"
        )));
    }
    for (name, p) in [
        ("phi1", phi1),
        ("phi12", phi12),
        ("phi23", phi23),
        ("phi_rp", phi_rp),
        ("phi_rf", phi_rf),
    ] {
        ensure_finite(name, p.radians())?;
    }

    let at = |phase: f64| CoherentAmplitude::from_polar(amplitude, Phase::new(phase));
    let p1 = phi1.radians();
    let p12 = phi12.radians();
    let p23 = phi23.radians();
    Ok(PulseFrame {
        a3_prev: at(p1 + phi_rp.radians()),
        a1: at(p1),
        a2: at(p1 + p12),
        a3: at(p1 + p12 + p23),
        a1_next: at(p1 + p12 + p23 + phi_rf.radians()),
    })
}

/// Ideal lossless 50:50 interferometer with a one-bin delay: each output bin
/// is the half-sum of the bin before it and itself.
pub fn amzi_transform(frame: &PulseFrame) -> OutputFrame {
    let mix = |prev: CoherentAmplitude, cur: CoherentAmplitude| {
        CoherentAmplitude::from(0.5 * (prev.as_complex() + cur.as_complex()))
    };
    OutputFrame {
        rp: mix(frame.a3_prev, frame.a1),
        e: mix(frame.a1, frame.a2),
        l: mix(frame.a2, frame.a3),
        r: mix(frame.a3, frame.a1_next),
    }
}

/// Early/late relative phase `(phi12 + phi23) / 2`, reduced to `[0, 2π)`.
///
/// This equals `arg(l) - arg(e)` of the interferometer output when the signed
/// amplitudes `cos(phi12/2)` and `cos(phi23/2)` share a sign; when they do
/// not, the extracted difference is offset by π.
pub fn relative_phase_el(phi12: Phase, phi23: Phase) -> Phase {
    Phase::new(0.5 * (phi12.radians() + phi23.radians()))
}

/// Signed magnitude and phase of one interfered bin, as the half-angle closed
/// form gives them: `r = A cos(delta/2)` may be negative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignedPolar {
    pub r: f64,
    pub phi: f64,
}

impl SignedPolar {
    pub fn to_amplitude(self) -> CoherentAmplitude {
        Complex64::from_polar(self.r, self.phi).into()
    }

    /// Folds the sign into the phase so that `r >= 0`.
    pub fn to_polar(self) -> PolarForm {
        if self.r < 0.0 {
            PolarForm {
                r: -self.r,
                phi: Phase::new(self.phi + PI),
            }
        } else {
            PolarForm {
                r: self.r,
                phi: Phase::new(self.phi),
            }
        }
    }
}

/// Closed-form half-angle expressions for the four output bins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedFormBins {
    pub rp: SignedPolar,
    pub e: SignedPolar,
    pub l: SignedPolar,
    pub r: SignedPolar,
}

pub fn closed_form_bins(
    amplitude: f64,
    phi1: Phase,
    phi12: Phase,
    phi23: Phase,
    phi_rp: Phase,
    phi_rf: Phase,
) -> ClosedFormBins {
    let p1 = phi1.radians();
    let p12 = phi12.radians();
    let p23 = phi23.radians();
    let prp = phi_rp.radians();
    let prf = phi_rf.radians();
    ClosedFormBins {
        rp: SignedPolar {
            r: amplitude * (prp / 2.0).cos(),
            phi: prp / 2.0 + p1,
        },
        e: SignedPolar {
            r: amplitude * (p12 / 2.0).cos(),
            phi: p1 + p12 / 2.0,
        },
        l: SignedPolar {
            r: amplitude * (p23 / 2.0).cos(),
            phi: p1 + p12 + p23 / 2.0,
        },
        r: SignedPolar {
            r: amplitude * (prf / 2.0).cos(),
            phi: prf / 2.0 + p1 + p12 + p23,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn phase_reduces_modulo_two_pi() {
        assert_eq!(Phase::new(TAU), Phase::ZERO);
        assert_eq!(Phase::new(-1e-18), Phase::ZERO);
        assert!(close(Phase::new(-PI / 2.0).radians(), 1.5 * PI, 1e-15));
        assert!(close(Phase::new(5.0 * PI).radians(), PI, 1e-14));
        assert!(Phase::new(0.0).approx_eq(Phase::new(TAU - 1e-13), 1e-12));
    }

    #[test]
    fn polar_of_axes() {
        let p = amplitude_to_polar(CoherentAmplitude::new(1.0, 0.0)).unwrap();
        assert_eq!(p.r, 1.0);
        assert_eq!(p.phi, Phase::ZERO);

        let p = amplitude_to_polar(CoherentAmplitude::new(0.0, 1.0)).unwrap();
        assert_eq!(p.r, 1.0);
        assert!(close(p.phi.radians(), PI / 2.0, 1e-15));
    }

    #[test]
    fn polar_of_half_sum_with_quarter_turn() {
        // (1 + e^{i pi/2}) / 2
        let p = amplitude_to_polar(CoherentAmplitude::new(0.5, 0.5)).unwrap();
        assert!(close(p.r, std::f64::consts::FRAC_1_SQRT_2, 1e-12));
        assert!(close(p.r, (PI / 4.0).cos(), 1e-15));
        assert!(close(p.phi.radians(), PI / 4.0, 1e-15));
    }

    #[test]
    fn polar_of_vacuum_has_zero_phase() {
        let p = amplitude_to_polar(CoherentAmplitude::VACUUM).unwrap();
        assert_eq!(p.r, 0.0);
        assert_eq!(p.phi, Phase::ZERO);
    }

    #[test]
    fn polar_rejects_non_finite() {
        assert!(matches!(
            amplitude_to_polar(CoherentAmplitude::new(f64::NAN, 0.0)),
            Err(Error::Domain(_))
        ));
        assert!(amplitude_to_polar(CoherentAmplitude::new(0.0, f64::INFINITY)).is_err());
    }

    #[test]
    fn frame_with_zero_phases_is_uniform() {
        let f = make_frame(
            1.0,
            Phase::ZERO,
            Phase::ZERO,
            Phase::ZERO,
            Phase::ZERO,
            Phase::ZERO,
        )
        .unwrap();
        for a in [f.a3_prev, f.a1, f.a2, f.a3, f.a1_next] {
            assert_eq!(a, CoherentAmplitude::new(1.0, 0.0));
        }
    }

    #[test]
    fn frame_accumulates_phi12() {
        let f = make_frame(
            1.0,
            Phase::ZERO,
            Phase::PI,
            Phase::ZERO,
            Phase::ZERO,
            Phase::ZERO,
        )
        .unwrap();
        for a in [f.a1, f.a3_prev] {
            assert!(a.distance(CoherentAmplitude::new(1.0, 0.0)) < 1e-15);
        }
        for a in [f.a2, f.a3, f.a1_next] {
            assert!(a.distance(CoherentAmplitude::new(-1.0, 0.0)) < 1e-15);
        }
    }

    #[test]
    fn frame_global_rotation() {
        let f = make_frame(
            2.0,
            Phase::HALF_PI,
            Phase::ZERO,
            Phase::ZERO,
            Phase::ZERO,
            Phase::ZERO,
        )
        .unwrap();
        for a in [f.a3_prev, f.a1, f.a2, f.a3, f.a1_next] {
            assert!(a.distance(CoherentAmplitude::new(0.0, 2.0)) < 1e-15);
        }
    }

    #[test]
    fn frame_rejects_bad_amplitude() {
        let z = Phase::ZERO;
        assert!(make_frame(-1.0, z, z, z, z, z).is_err());
        assert!(make_frame(f64::NAN, z, z, z, z, z).is_err());
        assert!(make_frame(1.0, Phase::new(f64::INFINITY), z, z, z, z).is_err());
    }

    #[test]
    fn z_bit_zero_suppresses_late_bin() {
        let f = make_frame(
            1.0,
            Phase::ZERO,
            Phase::ZERO,
            Phase::PI,
            Phase::ZERO,
            Phase::ZERO,
        )
        .unwrap();
        let out = amzi_transform(&f);
        assert!(close(out.e.magnitude(), 1.0, 1e-15));
        assert!(out.l.magnitude() < 1e-15);
    }

    #[test]
    fn y_state_splits_intensity_evenly() {
        let f = make_frame(
            1.0,
            Phase::ZERO,
            Phase::HALF_PI,
            Phase::HALF_PI,
            Phase::ZERO,
            Phase::ZERO,
        )
        .unwrap();
        let out = amzi_transform(&f);
        assert!(close(out.e.magnitude(), SQRT_HALF, 1e-15));
        assert!(close(out.l.magnitude(), SQRT_HALF, 1e-15));
        assert!(close(out.e.mean_photon_number(), 0.5, 1e-15));
        let pe = amplitude_to_polar(out.e).unwrap();
        let pl = amplitude_to_polar(out.l).unwrap();
        assert!((pl.phi - pe.phi).approx_eq(Phase::HALF_PI, 1e-12));
    }

    #[test]
    fn relative_phase_examples() {
        assert!(relative_phase_el(Phase::HALF_PI, Phase::HALF_PI).approx_eq(Phase::HALF_PI, 1e-15));
        assert_eq!(relative_phase_el(Phase::ZERO, Phase::ZERO), Phase::ZERO);
        assert!(
            relative_phase_el(Phase::THREE_HALVES_PI, Phase::THREE_HALVES_PI)
                .approx_eq(Phase::THREE_HALVES_PI, 1e-15)
        );
    }

    #[test]
    fn opposite_signed_bins_offset_relative_phase_by_pi() {
        // cos(pi/4) > 0 but cos(3pi/4) < 0
        let f = make_frame(
            1.0,
            Phase::ZERO,
            Phase::HALF_PI,
            Phase::THREE_HALVES_PI,
            Phase::ZERO,
            Phase::ZERO,
        )
        .unwrap();
        let out = amzi_transform(&f);
        let d = amplitude_to_polar(out.l).unwrap().phi - amplitude_to_polar(out.e).unwrap().phi;
        let closed = relative_phase_el(Phase::HALF_PI, Phase::THREE_HALVES_PI);
        assert!(d.approx_eq(closed + Phase::PI, 1e-12));
    }

    fn phase() -> impl Strategy<Value = Phase> {
        (0.0..TAU).prop_map(Phase::new)
    }

    proptest! {
        #[test]
        fn output_magnitudes_follow_half_angle_cosines(
            a in 0.0..3.0f64, p1 in phase(), p12 in phase(), p23 in phase(),
            prp in phase(), prf in phase()
        ) {
            let out = amzi_transform(&make_frame(a, p1, p12, p23, prp, prf).unwrap());
            prop_assert!(close(out.e.magnitude(), a * (p12.radians() / 2.0).cos().abs(), 1e-12));
            prop_assert!(close(out.l.magnitude(), a * (p23.radians() / 2.0).cos().abs(), 1e-12));
            prop_assert!(close(out.rp.magnitude(), a * (prp.radians() / 2.0).cos().abs(), 1e-12));
            prop_assert!(close(out.r.magnitude(), a * (prf.radians() / 2.0).cos().abs(), 1e-12));
            let cf = closed_form_bins(a, p1, p12, p23, prp, prf);
            prop_assert!(cf.e.to_amplitude().distance(out.e) < 1e-12);
            prop_assert!(cf.l.to_amplitude().distance(out.l) < 1e-12);
            prop_assert!(cf.r.to_amplitude().distance(out.r) < 1e-12);
            prop_assert!(cf.rp.to_amplitude().distance(out.rp) < 1e-12);
        }

        #[test]
        fn energy_bounded_by_two_inputs(a in 0.0..3.0f64, p12 in phase(), p23 in phase()) {
            let out = amzi_transform(
                &make_frame(a, Phase::ZERO, p12, p23, Phase::ZERO, Phase::ZERO).unwrap());
            let energy = out.e.mean_photon_number() + out.l.mean_photon_number();
            prop_assert!(energy <= 2.0 * a * a * (1.0 + 1e-12));
        }

        #[test]
        fn global_phase_covariance(
            a in 0.1..3.0f64, p1 in phase(), d in phase(), p12 in phase(), p23 in phase(),
            prp in phase(), prf in phase()
        ) {
            let base = amzi_transform(&make_frame(a, p1, p12, p23, prp, prf).unwrap());
            let rot = amzi_transform(&make_frame(a, p1 + d, p12, p23, prp, prf).unwrap());
            let w = d.phasor();
            for (x, y) in [(base.rp, rot.rp), (base.e, rot.e), (base.l, rot.l), (base.r, rot.r)] {
                prop_assert!(CoherentAmplitude::from(x.as_complex() * w).distance(y) < 1e-12);
            }
        }

        #[test]
        fn relative_phase_matches_extraction_when_signs_agree(
            a in 0.1..3.0f64, p1 in phase(), p12 in phase(), p23 in phase()
        ) {
            let se = (p12.radians() / 2.0).cos();
            let sl = (p23.radians() / 2.0).cos();
            prop_assume!(se.abs() * a > 1e-6 && sl.abs() * a > 1e-6);
            let out = amzi_transform(
                &make_frame(a, p1, p12, p23, Phase::ZERO, Phase::ZERO).unwrap());
            let d = amplitude_to_polar(out.l).unwrap().phi - amplitude_to_polar(out.e).unwrap().phi;
            let expected = if se.signum() == sl.signum() {
                relative_phase_el(p12, p23)
            } else {
                relative_phase_el(p12, p23) + Phase::PI
            };
            prop_assert!(d.approx_eq(expected, 1e-9));
        }

        #[test]
        fn polar_round_trip(re in -5.0..5.0f64, im in -5.0..5.0f64) {
            let a = CoherentAmplitude::new(re, im);
            let back = amplitude_to_polar(a).unwrap().to_amplitude();
            prop_assert!(back.distance(a) < 1e-12);
        }
    }
}
