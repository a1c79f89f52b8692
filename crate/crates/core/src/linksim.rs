//! Alice's output, the lossy channel and Bob's passive-basis receiver.
//!
//! Gains and error rates are available in closed form (weak-coherent source,
//! Poissonian click statistics, linearised dark counts) and by frame-level
//! Monte Carlo. The Monte Carlo only tallies frames where Bob's basis matches
//! Alice's; the rest are counted as discarded.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{Basis, IntensityClass};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Channel loss in dB.
    pub loss_db: f64,
    pub det_efficiency: f64,
    /// Dark-count rate per detector, Hz.
    pub dark_rate: f64,
    /// Detection window per time bin, seconds.
    pub window: f64,
    pub detectors: u32,
    /// Symbol rate, Hz.
    pub clock: f64,
    pub p_y_alice: f64,
    pub p_y_bob: f64,
    /// Lumped misalignment / interference error.
    pub e_det: f64,
    /// Error-correction inefficiency.
    pub f_ec: f64,
    /// Fraction of Y-basis light that reaches the one interfered bin Bob reads.
    pub y_receiver_factor: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            loss_db: 15.0,
            det_efficiency: 0.7,
            dark_rate: 50.0,
            window: 300e-12,
            detectors: 2,
            clock: 2.0e9 / 3.0,
            p_y_alice: 0.9,
            p_y_bob: 0.9,
            e_det: 0.033,
            f_ec: 1.16,
            y_receiver_factor: 0.5,
        }
    }
}

fn probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be a probability, got {p}"
        )))
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss_db.is_finite() && self.loss_db >= 0.0) {
            return Err(Error::Config(format!(
                "loss_db must be >= 0, got {}",
                self.loss_db
            )));
        }
        probability("det_efficiency", self.det_efficiency)?;
        probability("p_y_alice", self.p_y_alice)?;
        probability("p_y_bob", self.p_y_bob)?;
        probability("e_det", self.e_det)?;
        probability("y_receiver_factor", self.y_receiver_factor)?;
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::Config(format!(
                "dark_rate must be >= 0, got {}",
                self.dark_rate
            )));
        }
        if !(self.window.is_finite() && self.window >= 0.0) {
            return Err(Error::Config(format!(
                "window must be >= 0, got {}",
                self.window
            )));
        }
        if !(self.clock.is_finite() && self.clock > 0.0) {
            return Err(Error::Config(format!(
                "clock must be positive, got {}",
                self.clock
            )));
        }
        if !(self.f_ec.is_finite() && self.f_ec >= 1.0) {
            return Err(Error::Config(format!(
                "f_ec must be >= 1, got {}",
                self.f_ec
            )));
        }
        Ok(())
    }

    /// Overall transmittance including detector efficiency.
    pub fn eta(&self) -> f64 {
        transmittance(self.loss_db, self.det_efficiency)
    }

    pub fn y0(&self) -> Result<f64> {
        dark_prob(self.dark_rate, self.window, self.detectors)
    }

    /// Transmittance seen by a matched-basis measurement in `basis`.
    pub fn basis_eta(&self, basis: Basis) -> f64 {
        match basis {
            Basis::Z => self.eta(),
            Basis::Y => self.eta() * self.y_receiver_factor,
        }
    }
}

/// Mean photon numbers of the three intensity classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoyIntensities {
    pub mu: f64,
    pub nu: f64,
    pub omega: f64,
}

impl Default for DecoyIntensities {
    fn default() -> Self {
        Self {
            mu: 0.4,
            nu: 0.16,
            omega: 0.015,
        }
    }
}

impl DecoyIntensities {
    pub fn new(mu: f64, nu: f64, omega: f64) -> Result<Self> {
        let d = Self { mu, nu, omega };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { mu, nu, omega } = *self;
        if !(mu.is_finite() && nu.is_finite() && omega.is_finite()) {
            return Err(Error::Config("intensities must be finite".into()));
        }
        if !(mu > nu && nu > omega && omega >= 0.0) {
            return Err(Error::Config(format!(
                "intensities must satisfy mu > nu > omega >= 0, got {mu}, {nu}, {omega}"
            )));
        }
        if nu + omega >= mu {
            return Err(Error::Config(format!(
                "intensities must satisfy nu + omega < mu, got {nu} + {omega} >= {mu}"
            )));
        }
        Ok(())
    }

    pub fn of(&self, class: IntensityClass) -> f64 {
        match class {
            IntensityClass::Signal => self.mu,
            IntensityClass::Decoy => self.nu,
            IntensityClass::Vacuum => self.omega,
        }
    }
}

/// Gain (detection probability per sent state) and error rate among detections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainQber {
    pub q: f64,
    pub e: f64,
}

pub fn transmittance(loss_db: f64, det_efficiency: f64) -> f64 {
    det_efficiency * 10f64.powf(-loss_db / 10.0)
}

/// Probability of at least one dark click per symbol, linearised.
pub fn dark_prob(dark_rate: f64, window: f64, detectors: u32) -> Result<f64> {
    if dark_rate < 0.0 || window < 0.0 {
        return Err(Error::Domain(
            "dark rate and window must be non-negative".into(),
        ));
    }
    let y0 = f64::from(detectors) * dark_rate * window;
    if y0 > 0.1 {
        return Err(Error::ModelValidity(format!(
            "dark-count probability {y0} is too large for the linearised model"
        )));
    }
    Ok(y0)
}

pub fn analytic_gain_qber(lambda: f64, eta: f64, y0: f64, e_det: f64) -> GainQber {
    let signal = -(-eta * lambda).exp_m1();
    let q = y0 + signal;
    let e = if q > 0.0 {
        (0.5 * y0 + e_det * signal) / q
    } else {
        0.5
    };
    GainQber { q, e }
}

/// The four states Alice prepares, as (class, basis) slots.
pub const STATE_SLOTS: [(IntensityClass, Basis); 4] = [
    (IntensityClass::Signal, Basis::Z),
    (IntensityClass::Decoy, Basis::Z),
    (IntensityClass::Vacuum, Basis::Z),
    (IntensityClass::Signal, Basis::Y),
];

/// Probabilities of preparing each of [`STATE_SLOTS`]. Bit values are uniform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMix {
    pub z_signal: f64,
    pub z_decoy: f64,
    pub z_vacuum: f64,
    pub y_signal: f64,
}

impl StateMix {
    /// Y signals with probability `p_y`, the Z remainder split evenly over
    /// the three intensity classes.
    pub fn from_y_probability(p_y: f64) -> Self {
        let z = (1.0 - p_y) / 3.0;
        Self {
            z_signal: z,
            z_decoy: z,
            z_vacuum: z,
            y_signal: p_y,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.z_signal, self.z_decoy, self.z_vacuum, self.y_signal]
    }

    pub fn validate(&self) -> Result<()> {
        let probs = self.as_array();
        for p in probs {
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return Err(Error::Config(format!(
                    "state probability {p} out of [0, 1]"
                )));
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "state probabilities sum to {total}, not 1"
            )));
        }
        Ok(())
    }
}

impl Default for StateMix {
    fn default() -> Self {
        Self::from_y_probability(0.9)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyRow {
    pub class: Option<IntensityClass>,
    pub basis: Option<Basis>,
    pub sent: u64,
    pub detected: u64,
    pub errors: u64,
}

impl TallyRow {
    pub fn gain(&self) -> f64 {
        if self.sent == 0 {
            0.0
        } else {
            self.detected as f64 / self.sent as f64
        }
    }

    pub fn qber(&self) -> f64 {
        if self.detected == 0 {
            0.5
        } else {
            self.errors as f64 / self.detected as f64
        }
    }

    pub fn gain_qber(&self) -> GainQber {
        GainQber {
            q: self.gain(),
            e: self.qber(),
        }
    }
}

/// Matched-basis counts for each prepared state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyCounts {
    pub frames: u64,
    /// Frames where Bob measured in the other basis.
    pub discarded: u64,
    pub rows: [TallyRow; 4],
}

impl Default for TallyCounts {
    fn default() -> Self {
        let mut rows = [TallyRow::default(); 4];
        for (row, (class, basis)) in rows.iter_mut().zip(STATE_SLOTS) {
            row.class = Some(class);
            row.basis = Some(basis);
        }
        Self {
            frames: 0,
            discarded: 0,
            rows,
        }
    }
}

impl TallyCounts {
    pub fn merge(mut self, other: TallyCounts) -> TallyCounts {
        self.frames += other.frames;
        self.discarded += other.discarded;
        for (a, b) in self.rows.iter_mut().zip(other.rows.iter()) {
            a.sent += b.sent;
            a.detected += b.detected;
            a.errors += b.errors;
        }
        self
    }

    pub fn row(&self, class: IntensityClass, basis: Basis) -> Option<&TallyRow> {
        self.rows
            .iter()
            .find(|r| r.class == Some(class) && r.basis == Some(basis))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,basis,sent,detected,errors,gain,qber\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{:e},{:e}\n",
                r.class.map(|c| c.as_str()).unwrap_or(""),
                r.basis.map(|b| b.to_string()).unwrap_or_default(),
                r.sent,
                r.detected,
                r.errors,
                r.gain(),
                r.qber()
            ));
        }
        s
    }
}

/// Analytic matched-basis gain and QBER for one prepared state.
pub fn expected_gain_qber(
    params: &LinkParams,
    intens: &DecoyIntensities,
    class: IntensityClass,
    basis: Basis,
) -> Result<GainQber> {
    Ok(analytic_gain_qber(
        intens.of(class),
        params.basis_eta(basis),
        params.y0()?,
        params.e_det,
    ))
}

pub fn gain_qber_csv(rows: &[(IntensityClass, Basis, GainQber)]) -> String {
    let mut s = String::from("class,basis,q,e\n");
    for (c, b, g) in rows {
        s.push_str(&format!("{},{},{:e},{:e}\n", c.as_str(), b, g.q, g.e));
    }
    s
}

struct FrameModel {
    cumulative: [f64; 3],
    p_signal: [f64; 4],
    y0: f64,
    e_det: f64,
    p_y_bob: f64,
}

impl FrameModel {
    fn new(params: &LinkParams, intens: &DecoyIntensities, mix: &StateMix) -> Result<Self> {
        let p = mix.as_array();
        let mut p_signal = [0.0; 4];
        for (ps, (class, basis)) in p_signal.iter_mut().zip(STATE_SLOTS) {
            *ps = -(-params.basis_eta(basis) * intens.of(class)).exp_m1();
        }
        Ok(Self {
            cumulative: [p[0], p[0] + p[1], p[0] + p[1] + p[2]],
            p_signal,
            y0: params.y0()?,
            e_det: params.e_det,
            p_y_bob: params.p_y_bob,
        })
    }

    fn run(&self, rng: &mut ChaCha8Rng, frames: u64) -> TallyCounts {
        let mut t = TallyCounts {
            frames,
            ..TallyCounts::default()
        };
        for _ in 0..frames {
            let u: f64 = rng.gen();
            let slot = if u < self.cumulative[0] {
                0
            } else if u < self.cumulative[1] {
                1
            } else if u < self.cumulative[2] {
                2
            } else {
                3
            };
            let alice_y = slot == 3;
            let bob_y = rng.gen::<f64>() < self.p_y_bob;
            if alice_y != bob_y {
                t.discarded += 1;
                continue;
            }
            let row = &mut t.rows[slot];
            row.sent += 1;
            let signal = rng.gen::<f64>() < self.p_signal[slot];
            let dark = rng.gen::<f64>() < self.y0;
            if !(signal || dark) {
                continue;
            }
            row.detected += 1;
            let error = if signal && !dark {
                rng.gen::<f64>() < self.e_det
            } else {
                // dark-only or double click: random bit assignment
                rng.gen::<bool>()
            };
            if error {
                row.errors += 1;
            }
        }
        t
    }
}

fn check_mc_inputs(
    n_frames: u64,
    params: &LinkParams,
    intens: &DecoyIntensities,
    mix: &StateMix,
) -> Result<()> {
    if n_frames == 0 {
        return Err(Error::Config("n_frames must be positive".into()));
    }
    params.validate()?;
    intens.validate()?;
    mix.validate()
}

/// Frame-level Monte Carlo over the worker pool. Deterministic given `seed`.
pub fn simulate_frames_mc(
    n_frames: u64,
    params: &LinkParams,
    intens: &DecoyIntensities,
    mix: &StateMix,
    seed: u64,
) -> Result<TallyCounts> {
    simulate_frames_partitioned(
        n_frames,
        params,
        intens,
        mix,
        seed,
        rayon::current_num_threads(),
    )
}

/// As [`simulate_frames_mc`] with an explicit partition count. The result is
/// identical for every `partitions >= 1`.
pub fn simulate_frames_partitioned(
    n_frames: u64,
    params: &LinkParams,
    intens: &DecoyIntensities,
    mix: &StateMix,
    seed: u64,
    partitions: usize,
) -> Result<TallyCounts> {
    check_mc_inputs(n_frames, params, intens, mix)?;
    let model = FrameModel::new(params, intens, mix)?;
    Ok(rng::run_partitioned(
        n_frames,
        seed,
        partitions,
        |rng, range| model.run(rng, range.end - range.start),
        TallyCounts::merge,
    ))
}

/// One empirical-vs-analytic comparison, with the deviation in binomial sigmas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub class: IntensityClass,
    pub basis: Basis,
    pub metric: String,
    pub empirical: f64,
    pub analytic: f64,
    pub sigma: f64,
    pub z: f64,
}

impl Deviation {
    pub fn within(&self, sigmas: f64) -> bool {
        self.z.abs() < sigmas
    }
}

fn deviation(
    class: IntensityClass,
    basis: Basis,
    metric: &str,
    empirical: f64,
    analytic: f64,
    trials: u64,
) -> Deviation {
    let sigma = if trials == 0 {
        0.0
    } else {
        (analytic * (1.0 - analytic) / trials as f64).sqrt()
    };
    let diff = empirical - analytic;
    let z = if sigma > 0.0 {
        diff / sigma
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Deviation {
        class,
        basis,
        metric: metric.to_string(),
        empirical,
        analytic,
        sigma,
        z,
    }
}

/// Gain and QBER deviations of every tallied state from the closed form.
pub fn compare_with_analytic(
    tally: &TallyCounts,
    params: &LinkParams,
    intens: &DecoyIntensities,
) -> Result<Vec<Deviation>> {
    let mut out = Vec::with_capacity(8);
    for row in &tally.rows {
        let (Some(class), Some(basis)) = (row.class, row.basis) else {
            continue;
        };
        let expected = expected_gain_qber(params, intens, class, basis)?;
        out.push(deviation(
            class,
            basis,
            "gain",
            row.gain(),
            expected.q,
            row.sent,
        ));
        out.push(deviation(
            class,
            basis,
            "qber",
            row.qber(),
            expected.e,
            row.detected,
        ));
    }
    Ok(out)
}
