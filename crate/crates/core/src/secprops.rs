//! Statistical checks of the transmitter's leakage properties.
//!
//! The R and R_P output bins mix an encoded pulse with a freshly
//! phase-randomised neighbour. Their amplitudes must not depend on the
//! encoding, and the phases between E/L and the random neighbours should
//! look padded by the random phase.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{
    encode_symbol, Basis, Bit, DecoyTable, EncodingSymbol, IntensityClass, PhasePair,
};
use crate::error::{Error, Result};
use crate::photonics::{amzi_transform, make_frame, CoherentAmplitude, Phase};
use crate::rng::run_partitioned;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakagePhases {
    /// Phase between the late bin and the following random pulse.
    pub phi_lr: Phase,
    /// Phase between the early bin and the preceding random pulse.
    pub phi_erp: Phase,
}

/// Amplitude of the R output bin: `(A/2) e^{i(φ1+φ12+φ23)} (1 + e^{iφ_rf})`.
pub fn r_bin_amplitude(
    pp: PhasePair,
    phi1: Phase,
    phi_rf: Phase,
    amplitude: f64,
) -> CoherentAmplitude {
    let base = phi1.radians() + pp.phi12.radians() + pp.phi23.radians();
    let one = Phase::new(base).phasor();
    let two = Phase::new(base + phi_rf.radians()).phasor();
    (0.5 * amplitude * (one + two)).into()
}

pub fn leakage_phases(pp: PhasePair, phi_rp: Phase, phi_rf: Phase) -> LeakagePhases {
    LeakagePhases {
        phi_lr: Phase::new(0.5 * (phi_rf.radians() + pp.phi23.radians())),
        phi_erp: Phase::new(0.5 * (phi_rp.radians() - pp.phi12.radians())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayleighResult {
    pub n: usize,
    /// Mean resultant length.
    pub r_bar: f64,
    pub z: f64,
    pub p_value: f64,
}

pub const RAYLEIGH_MIN_SAMPLES: usize = 100;

/// Rayleigh test against circular uniformity.
pub fn circular_uniformity_stat(samples: &[Phase]) -> Result<RayleighResult> {
    let n = samples.len();
    if n < RAYLEIGH_MIN_SAMPLES {
        return Err(Error::SampleSize {
            required: RAYLEIGH_MIN_SAMPLES,
            got: n,
        });
    }
    let (c, s) = samples.iter().fold((0.0, 0.0), |(c, s), p| {
        let (sin, cos) = p.radians().sin_cos();
        (c + cos, s + sin)
    });
    let nf = n as f64;
    let r_bar = (c * c + s * s).sqrt() / nf;
    let z = nf * r_bar * r_bar;
    let p = (-z).exp() * (1.0 + (2.0 * z - z * z) / (4.0 * nf));
    let p_value = if p > 0.0 { p.min(1.0) } else { 0.0 };
    Ok(RayleighResult {
        n,
        r_bar,
        z,
        p_value,
    })
}

/// Plug-in mutual information, in bits, between a bit and a phase histogrammed
/// into `bins` equal sectors.
pub fn mutual_information_bits(bits: &[Bit], phases: &[Phase], bins: usize) -> Result<f64> {
    if bits.len() != phases.len() {
        return Err(Error::Config(format!(
            "{} bits but {} phases",
            bits.len(),
            phases.len()
        )));
    }
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if bits.is_empty() {
        return Err(Error::SampleSize {
            required: 1,
            got: 0,
        });
    }
    let mut joint = vec![[0u64; 2]; bins];
    for (b, p) in bits.iter().zip(phases) {
        let k = ((p.radians() / TAU * bins as f64) as usize).min(bins - 1);
        joint[k][b.as_u8() as usize] += 1;
    }
    let n = bits.len() as f64;
    let mut bit_tot = [0u64; 2];
    for row in &joint {
        bit_tot[0] += row[0];
        bit_tot[1] += row[1];
    }
    let mut mi = 0.0;
    for row in &joint {
        let bin_tot = (row[0] + row[1]) as f64;
        for b in 0..2 {
            if row[b] > 0 {
                let pj = row[b] as f64 / n;
                mi += pj * (pj * n * n / (bin_tot * bit_tot[b] as f64)).log2();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Source of random-pulse phases for the leakage tests.
pub trait LeakageSampler: Sync {
    fn name(&self) -> &str;
    /// Draws `(φ_rp, φ_rf)` for one frame carrying `pp`.
    fn draw(&self, rng: &mut ChaCha8Rng, pp: PhasePair) -> (Phase, Phase);

    fn leakage(&self, rng: &mut ChaCha8Rng, pp: PhasePair) -> LeakagePhases {
        let (rp, rf) = self.draw(rng, pp);
        leakage_phases(pp, rp, rf)
    }
}

/// Gain-switched neighbours: both random phases uniform on `[0, 2π)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformPad;

impl LeakageSampler for UniformPad {
    fn name(&self) -> &str {
        "uniform"
    }

    fn draw(&self, rng: &mut ChaCha8Rng, _pp: PhasePair) -> (Phase, Phase) {
        (
            Phase::new(rng.gen_range(0.0..TAU)),
            Phase::new(rng.gen_range(0.0..TAU)),
        )
    }
}

/// Poorly randomised neighbours: phases uniform only on `[0, width)`.
#[derive(Clone, Copy, Debug)]
pub struct NarrowPad {
    pub width: f64,
}

impl LeakageSampler for NarrowPad {
    fn name(&self) -> &str {
        "narrow"
    }

    fn draw(&self, rng: &mut ChaCha8Rng, _pp: PhasePair) -> (Phase, Phase) {
        let w = self.width.clamp(f64::MIN_POSITIVE, TAU);
        (
            Phase::new(rng.gen_range(0.0..w)),
            Phase::new(rng.gen_range(0.0..w)),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Draws for the exact amplitude checks.
    pub exact_draws: u64,
    /// Draws per statistical test.
    pub samples: u64,
    pub amplitude: f64,
    /// Rayleigh significance level.
    pub alpha: f64,
    pub mi_bins: usize,
    pub mi_max_bits: f64,
    pub amplitude_tol: f64,
    /// Pad width of the negative-control sampler, in radians.
    pub control_width: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            exact_draws: 10_000,
            samples: 100_000,
            amplitude: 1.0,
            alpha: 0.01,
            mi_bins: 32,
            mi_max_bits: 0.01,
            amplitude_tol: 1e-12,
            control_width: 1.0,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.samples as usize) < RAYLEIGH_MIN_SAMPLES {
            return Err(Error::Config(format!(
                "verify samples must be >= {RAYLEIGH_MIN_SAMPLES}, got {}",
                self.samples
            )));
        }
        if self.exact_draws == 0 {
            return Err(Error::Config("verify exact_draws must be positive".into()));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::Config(format!(
                "amplitude {} out of range",
                self.amplitude
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} out of (0, 1)", self.alpha)));
        }
        if self.mi_bins == 0 {
            return Err(Error::Config("mi_bins must be positive".into()));
        }
        if !(self.control_width > 0.0 && self.control_width <= TAU) {
            return Err(Error::Config(format!(
                "control_width {} out of (0, 2π]",
                self.control_width
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    /// Only gating properties decide the overall verdict.
    pub gating: bool,
    pub passed: bool,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub threshold: f64,
    pub samples: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub passed: bool,
    pub properties: Vec<PropertyResult>,
}

impl VerificationReport {
    pub fn get(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyResult> {
        self.properties.iter().filter(|p| p.gating && !p.passed)
    }
}

fn sub_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn collect<T: Send, F>(n: u64, seed: u64, f: F) -> Vec<T>
where
    F: Fn(&mut ChaCha8Rng) -> T + Sync,
{
    run_partitioned(
        n,
        seed,
        rayon::current_num_threads(),
        |rng, range| range.map(|_| f(rng)).collect::<Vec<T>>(),
        |mut a, b| {
            a.extend(b);
            a
        },
    )
}

/// Largest deviation of a random bin's amplitude across the four BB84
/// encodings, over random laser and neighbour phases.
pub fn max_random_bin_spread(cfg: &VerifyConfig, seed: u64) -> Result<(f64, f64)> {
    let pairs = PhasePair::bb84();
    let draws = collect(cfg.exact_draws, seed, |rng| {
        let p1 = Phase::new(rng.gen_range(0.0..TAU));
        let rp = Phase::new(rng.gen_range(0.0..TAU));
        let rf = Phase::new(rng.gen_range(0.0..TAU));
        (p1, rp, rf)
    });
    let mut spread_r: f64 = 0.0;
    let mut spread_rp: f64 = 0.0;
    for (p1, rp, rf) in draws {
        let mut outs = Vec::with_capacity(4);
        for pp in pairs {
            let frame = make_frame(cfg.amplitude, p1, pp.phi12, pp.phi23, rp, rf)?;
            outs.push(amzi_transform(&frame));
        }
        for o in &outs[1..] {
            spread_r = spread_r.max(o.r.distance(outs[0].r));
            spread_rp = spread_rp.max(o.rp.distance(outs[0].rp));
        }
    }
    Ok((spread_r, spread_rp))
}

/// Largest gap between `|r_R|` and `A|cos(φ_rf/2)|` over all encodings.
pub fn max_intensity_link_error(cfg: &VerifyConfig, seed: u64) -> Result<f64> {
    let pairs = PhasePair::bb84();
    let draws = collect(cfg.exact_draws, seed, |rng| {
        (
            Phase::new(rng.gen_range(0.0..TAU)),
            Phase::new(rng.gen_range(0.0..TAU)),
        )
    });
    let mut worst: f64 = 0.0;
    for (p1, rf) in draws {
        let want = cfg.amplitude * (0.5 * rf.radians()).cos().abs();
        for pp in pairs {
            let frame = make_frame(cfg.amplitude, p1, pp.phi12, pp.phi23, Phase::ZERO, rf)?;
            worst = worst.max((amzi_transform(&frame).r.magnitude() - want).abs());
        }
    }
    Ok(worst)
}

/// Leakage phases for `n` frames all carrying `pp`.
pub fn sample_leakage(
    sampler: &dyn LeakageSampler,
    pp: PhasePair,
    n: u64,
    seed: u64,
) -> Vec<LeakagePhases> {
    collect(n, seed, |rng| sampler.leakage(rng, pp))
}

/// Encoded bit and `φ_LR` for `n` frames carrying uniformly random signal symbols.
pub fn sample_bit_leakage(
    sampler: &dyn LeakageSampler,
    n: u64,
    seed: u64,
) -> Result<(Vec<Bit>, Vec<Phase>)> {
    let table = DecoyTable::new(None, None)?;
    let draws = collect(n, seed, |rng| {
        let basis = if rng.gen::<bool>() {
            Basis::Y
        } else {
            Basis::Z
        };
        let bit = Bit::from_bool(rng.gen());
        let sym = EncodingSymbol::new(basis, bit, IntensityClass::Signal)
            .and_then(|s| encode_symbol(&s, &table))
            .map(|pp| sampler.leakage(rng, pp).phi_lr);
        sym.map(|phi| (bit, phi))
    });
    let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(draws.into_iter().unzip())
}

fn rayleigh_property(
    name: String,
    phases: &[Phase],
    alpha: f64,
    seed: u64,
    gating: bool,
) -> Result<PropertyResult> {
    let r = circular_uniformity_stat(phases)?;
    Ok(PropertyResult {
        name,
        gating,
        passed: r.p_value > alpha,
        statistic: r.z,
        p_value: Some(r.p_value),
        threshold: alpha,
        samples: phases.len() as u64,
        seed,
    })
}

fn phase_label(p: Phase) -> &'static str {
    let q = (p.radians() / (0.5 * PI)).round() as i64 % 4;
    ["0", "pi/2", "pi", "3pi/2"][q as usize]
}

/// Runs the whole leakage suite with the gain-switched sampler.
pub fn run_verification(cfg: &VerifyConfig) -> Result<VerificationReport> {
    run_verification_with(cfg, &UniformPad)
}

/// Runs the leakage suite with `sampler` supplying the random-pulse phases.
pub fn run_verification_with(
    cfg: &VerifyConfig,
    sampler: &dyn LeakageSampler,
) -> Result<VerificationReport> {
    cfg.validate()?;
    let mut props = Vec::new();
    let mut k = 0u64;
    let mut next_seed = || {
        k += 1;
        sub_seed(cfg.seed, k)
    };

    let s = next_seed();
    let (spread_r, spread_rp) = max_random_bin_spread(cfg, s)?;
    for (name, v) in [("r_bin_equality", spread_r), ("rp_bin_equality", spread_rp)] {
        props.push(PropertyResult {
            name: name.into(),
            gating: true,
            passed: v <= cfg.amplitude_tol,
            statistic: v,
            p_value: None,
            threshold: cfg.amplitude_tol,
            samples: cfg.exact_draws,
            seed: s,
        });
    }

    let s = next_seed();
    let link = max_intensity_link_error(cfg, s)?;
    props.push(PropertyResult {
        name: "r_bin_intensity_link".into(),
        gating: true,
        passed: link <= cfg.amplitude_tol,
        statistic: link,
        p_value: None,
        threshold: cfg.amplitude_tol,
        samples: cfg.exact_draws,
        seed: s,
    });

    let quarter = [
        Phase::ZERO,
        Phase::HALF_PI,
        Phase::PI,
        Phase::THREE_HALVES_PI,
    ];
    for phi23 in quarter {
        let s = next_seed();
        let pp = PhasePair::new(Phase::ZERO, phi23);
        let lr: Vec<Phase> = sample_leakage(sampler, pp, cfg.samples, s)
            .into_iter()
            .map(|l| l.phi_lr)
            .collect();
        let label = phase_label(phi23);
        props.push(rayleigh_property(
            format!("phi_lr_uniform[phi23={label}]"),
            &lr,
            cfg.alpha,
            s,
            true,
        )?);
        let doubled: Vec<Phase> = lr.iter().map(|p| Phase::new(2.0 * p.radians())).collect();
        props.push(rayleigh_property(
            format!("phi_lr_doubled_uniform[phi23={label}]"),
            &doubled,
            cfg.alpha,
            s,
            false,
        )?);
    }
    for phi12 in quarter {
        let s = next_seed();
        let pp = PhasePair::new(phi12, Phase::ZERO);
        let erp: Vec<Phase> = sample_leakage(sampler, pp, cfg.samples, s)
            .into_iter()
            .map(|l| l.phi_erp)
            .collect();
        let label = phase_label(phi12);
        props.push(rayleigh_property(
            format!("phi_erp_uniform[phi12={label}]"),
            &erp,
            cfg.alpha,
            s,
            true,
        )?);
        let doubled: Vec<Phase> = erp.iter().map(|p| Phase::new(2.0 * p.radians())).collect();
        props.push(rayleigh_property(
            format!("phi_erp_doubled_uniform[phi12={label}]"),
            &doubled,
            cfg.alpha,
            s,
            false,
        )?);
    }

    let s = next_seed();
    let (bits, lr) = sample_bit_leakage(sampler, cfg.samples, s)?;
    let mi = mutual_information_bits(&bits, &lr, cfg.mi_bins)?;
    props.push(PropertyResult {
        name: "bit_phi_lr_mutual_information".into(),
        gating: true,
        passed: mi < cfg.mi_max_bits,
        statistic: mi,
        p_value: None,
        threshold: cfg.mi_max_bits,
        samples: cfg.samples,
        seed: s,
    });

    // the suite must be able to see a badly randomised source
    let s = next_seed();
    let control = NarrowPad {
        width: cfg.control_width,
    };
    let lr: Vec<Phase> = sample_leakage(
        &control,
        PhasePair::new(Phase::ZERO, Phase::HALF_PI),
        cfg.samples,
        s,
    )
    .into_iter()
    .map(|l| l.phi_lr)
    .collect();
    let r = circular_uniformity_stat(&lr)?;
    props.push(PropertyResult {
        name: "negative_control_rejected".into(),
        gating: true,
        passed: r.p_value <= cfg.alpha,
        statistic: r.z,
        p_value: Some(r.p_value),
        threshold: cfg.alpha,
        samples: cfg.samples,
        seed: s,
    });

    let passed = props.iter().all(|p| !p.gating || p.passed);
    Ok(VerificationReport {
        seed: cfg.seed,
        passed,
        properties: props,
    })
}
