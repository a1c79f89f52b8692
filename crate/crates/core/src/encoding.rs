//! Logical BB84/decoy symbols, their phase-pair realisation and the drive
//! waveform schedule that produces them.
//!
//! Phase pairs follow the four-state table
//!
//! | state | phi12 | phi23 |
//! |-------|-------|-------|
//! | Z, 0  | 0     | π     |
//! | Z, 1  | π     | 0     |
//! | Y, 0  | π/2   | π/2   |
//! | Y, 1  | 3π/2  | 3π/2  |
//!
//! Z-basis decoys dim the occupied bin by raising its relative phase towards
//! π while the empty bin stays at π.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::photonics::Phase;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Z,
    Y,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Z => "Z",
            Basis::Y => "Y",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bit {
    Zero,
    One,
}

impl Bit {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Bit::One
        } else {
            Bit::Zero
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Bit::Zero => 0,
            Bit::One => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityClass {
    Signal,
    Decoy,
    Vacuum,
}

impl IntensityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            IntensityClass::Signal => "signal",
            IntensityClass::Decoy => "decoy",
            IntensityClass::Vacuum => "vacuum",
        }
    }
}

impl fmt::Display for IntensityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A logical symbol Alice may prepare. Decoys exist only in the Z basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodingSymbol {
    basis: Basis,
    bit: Bit,
    class: IntensityClass,
}

impl EncodingSymbol {
    pub fn new(basis: Basis, bit: Bit, class: IntensityClass) -> Result<Self> {
        if basis == Basis::Y && class != IntensityClass::Signal {
            return Err(Error::InvalidSymbol(format!(
                "{class} states are only prepared in the Z basis"
            )));
        }
        Ok(Self { basis, bit, class })
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn bit(&self) -> Bit {
        self.bit
    }

    pub fn class(&self) -> IntensityClass {
        self.class
    }

    /// All six symbols the protocol prepares.
    pub fn all() -> Vec<EncodingSymbol> {
        let mut v = Vec::with_capacity(8);
        for bit in [Bit::Zero, Bit::One] {
            for class in [
                IntensityClass::Signal,
                IntensityClass::Decoy,
                IntensityClass::Vacuum,
            ] {
                v.push(EncodingSymbol {
                    basis: Basis::Z,
                    bit,
                    class,
                });
            }
            v.push(EncodingSymbol {
                basis: Basis::Y,
                bit,
                class: IntensityClass::Signal,
            });
        }
        v
    }
}

/// Token form `<basis><bit><class>`, e.g. `Z0s`, `Y1s`, `Z1d`, `Z0v`.
impl fmt::Display for EncodingSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.class {
            IntensityClass::Signal => 's',
            IntensityClass::Decoy => 'd',
            IntensityClass::Vacuum => 'v',
        };
        write!(f, "{}{}{}", self.basis, self.bit.as_u8(), c)
    }
}

impl FromStr for EncodingSymbol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse {
            line: 0,
            message: format!("bad symbol token {s:?}, expected <Z|Y><0|1><s|d|v>"),
        };
        let mut chars = s.chars();
        let (Some(b), Some(v), Some(c), None) =
            (chars.next(), chars.next(), chars.next(), chars.next())
        else {
            return Err(bad());
        };
        let basis = match b {
            'Z' => Basis::Z,
            'Y' => Basis::Y,
            _ => return Err(bad()),
        };
        let bit = match v {
            '0' => Bit::Zero,
            '1' => Bit::One,
            _ => return Err(bad()),
        };
        let class = match c {
            's' => IntensityClass::Signal,
            'd' => IntensityClass::Decoy,
            'v' => IntensityClass::Vacuum,
            _ => return Err(bad()),
        };
        EncodingSymbol::new(basis, bit, class)
    }
}

/// Parses a whitespace-separated symbol stream. `#` starts a comment.
/// Errors carry the 1-based line number.
pub fn parse_symbol_stream(text: &str) -> Result<Vec<EncodingSymbol>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("");
        for tok in content.split_whitespace() {
            let sym = tok.parse::<EncodingSymbol>().map_err(|e| match e {
                Error::Parse { message, .. } => Error::Parse {
                    line: idx + 1,
                    message,
                },
                Error::InvalidSymbol(m) => {
                    Error::InvalidSymbol(format!("line {}: {tok}: {m}", idx + 1))
                }
                other => other,
            })?;
            out.push(sym);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePair {
    pub phi12: Phase,
    pub phi23: Phase,
}

impl PhasePair {
    pub fn new(phi12: Phase, phi23: Phase) -> Self {
        Self { phi12, phi23 }
    }

    pub fn approx_eq(&self, other: &PhasePair, tol: f64) -> bool {
        self.phi12.approx_eq(other.phi12, tol) && self.phi23.approx_eq(other.phi23, tol)
    }

    /// The four signal-state pairs in the order Z0, Z1, Y0, Y1.
    pub fn bb84() -> [PhasePair; 4] {
        [
            PhasePair::new(Phase::ZERO, Phase::PI),
            PhasePair::new(Phase::PI, Phase::ZERO),
            PhasePair::new(Phase::HALF_PI, Phase::HALF_PI),
            PhasePair::new(Phase::THREE_HALVES_PI, Phase::THREE_HALVES_PI),
        ]
    }
}

/// Mean-photon-number fraction of the signal level for each dimmed class.
/// The signal class is always 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoyTable {
    pub decoy: Option<f64>,
    pub vacuum: Option<f64>,
}

impl DecoyTable {
    pub fn new(decoy: Option<f64>, vacuum: Option<f64>) -> Result<Self> {
        for (name, f) in [("decoy", decoy), ("vacuum", vacuum)] {
            if let Some(f) = f {
                check_fraction(name, f)?;
            }
        }
        Ok(Self { decoy, vacuum })
    }

    /// Fractions `nu/mu` and `omega/mu`. A zero vacuum intensity has no phase
    /// realisation and leaves the vacuum entry empty.
    pub fn from_mean_photon_numbers(mu: f64, nu: f64, omega: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::Config(format!(
                "signal intensity must be positive, got {mu}"
            )));
        }
        let frac = |x: f64| if x > 0.0 { Some(x / mu) } else { None };
        Self::new(frac(nu), frac(omega))
    }

    pub fn fraction(&self, class: IntensityClass) -> Option<f64> {
        match class {
            IntensityClass::Signal => Some(1.0),
            IntensityClass::Decoy => self.decoy,
            IntensityClass::Vacuum => self.vacuum,
        }
    }
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if f.is_finite() && f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} fraction must be in (0, 1], got {f}"
        )))
    }
}

/// Relative phase that leaves a fraction `fraction` of the full mean photon
/// number in an interfered bin: `2 acos(sqrt(fraction))`.
pub fn intensity_to_phase(fraction: f64) -> Result<Phase> {
    check_fraction("intensity", fraction)?;
    Ok(Phase::new(2.0 * fraction.sqrt().acos()))
}

pub fn encode_symbol(sym: &EncodingSymbol, table: &DecoyTable) -> Result<PhasePair> {
    match (sym.basis, sym.class) {
        (Basis::Y, IntensityClass::Signal) => Ok(match sym.bit {
            Bit::Zero => PhasePair::new(Phase::HALF_PI, Phase::HALF_PI),
            Bit::One => PhasePair::new(Phase::THREE_HALVES_PI, Phase::THREE_HALVES_PI),
        }),
        (Basis::Y, class) => Err(Error::InvalidSymbol(format!(
            "{class} states are only prepared in the Z basis"
        ))),
        (Basis::Z, IntensityClass::Signal) => Ok(match sym.bit {
            Bit::Zero => PhasePair::new(Phase::ZERO, Phase::PI),
            Bit::One => PhasePair::new(Phase::PI, Phase::ZERO),
        }),
        (Basis::Z, class) => {
            let f = table.fraction(class).ok_or_else(|| {
                Error::Config(format!("decoy table has no entry for the {class} class"))
            })?;
            let dim = intensity_to_phase(f)?;
            Ok(match sym.bit {
                Bit::Zero => PhasePair::new(dim, Phase::PI),
                Bit::One => PhasePair::new(Phase::PI, dim),
            })
        }
    }
}

/// Transient frequency shift and its duration on the master drive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChirpParams {
    delta_nu: f64,
    delta_t: f64,
}

impl ChirpParams {
    pub fn new(delta_nu: f64, delta_t: f64) -> Result<Self> {
        ensure_finite("delta_nu", delta_nu)?;
        ensure_finite("delta_t", delta_t)?;
        if delta_t <= 0.0 {
            return Err(Error::Domain(format!(
                "delta_t must be positive, got {delta_t}"
            )));
        }
        Ok(Self { delta_nu, delta_t })
    }

    pub fn delta_nu(&self) -> f64 {
        self.delta_nu
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }
}

/// Phase picked up by photons emitted after a frequency excursion.
pub fn chirp_phase(p: &ChirpParams) -> Phase {
    Phase::new(TAU * p.delta_nu * p.delta_t)
}

/// Linear phase-vs-voltage response of the master perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub v_pi: f64,
}

impl Default for CalibrationCurve {
    fn default() -> Self {
        Self { v_pi: 0.8 }
    }
}

impl CalibrationCurve {
    pub fn new(v_pi: f64) -> Result<Self> {
        let c = Self { v_pi };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.v_pi.is_finite() && self.v_pi > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "v_pi must be positive, got {}",
                self.v_pi
            )))
        }
    }

    /// Slope of the phase response in rad/V.
    pub fn slope(&self) -> f64 {
        PI / self.v_pi
    }
}

pub fn voltage_for_phase(phi: Phase, cal: &CalibrationCurve) -> f64 {
    phi.radians() / PI * cal.v_pi
}

pub fn phase_for_voltage(volts: f64, cal: &CalibrationCurve) -> Phase {
    Phase::new(volts * cal.slope())
}

/// Amplitude of one interfered pulse when a single perturbation of `volts`
/// sets the relative phase of the two contributing slave pulses.
pub fn predicted_pulse_amplitude(volts: f64, cal: &CalibrationCurve, amplitude: f64) -> f64 {
    amplitude * (PI * volts / (2.0 * cal.v_pi)).cos().abs()
}

/// Drive timing. All values in Hz or seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingParams {
    pub master_rate: f64,
    pub slave_rate: f64,
    pub perturbation_width: f64,
    pub perturbation_separation: f64,
    pub amzi_delay: f64,
    pub master_on_time: f64,
    pub slave_on_time: f64,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            master_rate: 2.0e9 / 3.0,
            slave_rate: 2.0e9,
            perturbation_width: 150e-12,
            perturbation_separation: 450e-12,
            amzi_delay: 500e-12,
            master_on_time: 1.4e-9,
            slave_on_time: 300e-12,
        }
    }
}

const REL_TOL: f64 = 1e-9;

impl TimingParams {
    pub fn master_period(&self) -> f64 {
        1.0 / self.master_rate
    }

    pub fn slave_period(&self) -> f64 {
        1.0 / self.slave_rate
    }

    /// Offsets of the two perturbations from the start of their master window.
    /// The pair is symmetric about the second slave onset.
    pub fn perturbation_offsets(&self) -> [f64; 2] {
        let mid = self.slave_period();
        let half = 0.5 * self.perturbation_separation + 0.5 * self.perturbation_width;
        [mid - half, mid - half + self.perturbation_separation]
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("master_rate", self.master_rate),
            ("slave_rate", self.slave_rate),
            ("perturbation_width", self.perturbation_width),
            ("perturbation_separation", self.perturbation_separation),
            ("amzi_delay", self.amzi_delay),
            ("master_on_time", self.master_on_time),
            ("slave_on_time", self.slave_on_time),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if (self.slave_rate - 3.0 * self.master_rate).abs() > REL_TOL * self.slave_rate {
            return Err(Error::Config(format!(
                "slave_rate ({}) must be three times master_rate ({})",
                self.slave_rate, self.master_rate
            )));
        }
        if (self.amzi_delay - self.slave_period()).abs() > REL_TOL * self.amzi_delay {
            return Err(Error::Config(format!(
                "amzi_delay ({}) must equal the slave period ({})",
                self.amzi_delay,
                self.slave_period()
            )));
        }
        if self.slave_on_time > self.slave_period() {
            return Err(Error::Config(
                "slave_on_time exceeds the slave period".into(),
            ));
        }
        let needed = 2.0 * self.slave_period() + self.slave_on_time;
        if self.master_on_time < needed || self.master_on_time > self.master_period() {
            return Err(Error::Config(format!(
                "master_on_time ({}) must cover three slave pulses ({needed}) and fit the master period ({})",
                self.master_on_time,
                self.master_period()
            )));
        }
        let [p1, p2] = self.perturbation_offsets();
        let t = self.slave_period();
        let w = self.perturbation_width;
        if !(p1 > 0.0 && p1 + w < t && p2 > t && p2 + w < 2.0 * t) {
            return Err(Error::Config(format!(
                "perturbations (width {w}, separation {}) do not fit between slave onsets",
                self.perturbation_separation
            )));
        }
        Ok(())
    }
}

/// Gate level used for laser drive events.
pub const DRIVE_ON_LEVEL: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    MasterDrive,
    MasterPerturbation,
    SlaveDrive,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::MasterDrive => "master_drive",
            Channel::MasterPerturbation => "master_perturbation",
            Channel::SlaveDrive => "slave_drive",
        }
    }
}

impl FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "master_drive" => Ok(Channel::MasterDrive),
            "master_perturbation" => Ok(Channel::MasterPerturbation),
            "slave_drive" => Ok(Channel::SlaveDrive),
            _ => Err(Error::Parse {
                line: 0,
                message: format!("unknown channel {s:?}"),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub channel: Channel,
    pub start: f64,
    pub duration: f64,
    pub level: f64,
}

impl ScheduleEvent {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveformSchedule {
    pub timing: TimingParams,
    pub events: Vec<ScheduleEvent>,
}

const HEADER_TAG: &str = "# dmqkd-schedule v1";

impl WaveformSchedule {
    pub fn symbol_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.channel == Channel::MasterDrive)
            .count()
    }

    /// Time covered by the schedule: one master period per symbol.
    pub fn span(&self) -> f64 {
        self.symbol_count() as f64 * self.timing.master_period()
    }

    pub fn events_on(&self, channel: Channel) -> impl Iterator<Item = &ScheduleEvent> {
        self.events.iter().filter(move |e| e.channel == channel)
    }

    /// Line-oriented text form: a header carrying the timing, then one
    /// `channel start_s duration_s level_V` line per event.
    pub fn to_text(&self) -> String {
        let t = &self.timing;
        let mut s = format!(
            "{HEADER_TAG} master_rate={:e} slave_rate={:e} perturbation_width={:e} \
             perturbation_separation={:e} amzi_delay={:e} master_on_time={:e} slave_on_time={:e}\n",
            t.master_rate,
            t.slave_rate,
            t.perturbation_width,
            t.perturbation_separation,
            t.amzi_delay,
            t.master_on_time,
            t.slave_on_time
        );
        for e in &self.events {
            s.push_str(&format!(
                "{} {:e} {:e} {:e}\n",
                e.channel.as_str(),
                e.start,
                e.duration,
                e.level
            ));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty schedule".into(),
        })?;
        let rest = header
            .strip_prefix(HEADER_TAG)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("expected header starting with {HEADER_TAG:?}"),
            })?;
        let mut timing = TimingParams::default();
        let mut seen = 0;
        for kv in rest.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("bad header field {kv:?}"),
            })?;
            let v: f64 = v.parse().map_err(|_| Error::Parse {
                line: 1,
                message: format!("bad number in header field {kv:?}"),
            })?;
            let slot = match k {
                "master_rate" => &mut timing.master_rate,
                "slave_rate" => &mut timing.slave_rate,
                "perturbation_width" => &mut timing.perturbation_width,
                "perturbation_separation" => &mut timing.perturbation_separation,
                "amzi_delay" => &mut timing.amzi_delay,
                "master_on_time" => &mut timing.master_on_time,
                "slave_on_time" => &mut timing.slave_on_time,
                _ => {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("unknown header field {k:?}"),
                    })
                }
            };
            *slot = v;
            seen += 1;
        }
        if seen != 7 {
            return Err(Error::Parse {
                line: 1,
                message: format!("header must carry all 7 timing fields, found {seen}"),
            });
        }

        let mut events = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 4 fields, found {}", fields.len()),
                });
            }
            let channel = fields[0].parse::<Channel>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("unknown channel {:?}", fields[0]),
            })?;
            let num = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad number {s:?}"),
                })
            };
            events.push(ScheduleEvent {
                channel,
                start: num(fields[1])?,
                duration: num(fields[2])?,
                level: num(fields[3])?,
            });
        }
        Ok(Self { timing, events })
    }
}

/// Lays out one master window per symbol: the master gate, three slave gates
/// one slave period apart and two perturbations whose levels set
/// `(phi12, phi23)`.
pub fn compile_schedule(
    symbols: &[EncodingSymbol],
    timing: &TimingParams,
    cal: &CalibrationCurve,
    table: &DecoyTable,
) -> Result<WaveformSchedule> {
    if symbols.is_empty() {
        return Err(Error::Config("symbol sequence is empty".into()));
    }
    timing.validate()?;
    cal.validate()?;

    let pairs = symbols
        .iter()
        .map(|s| encode_symbol(s, table))
        .collect::<Result<Vec<_>>>()?;
    Ok(compile_phase_pairs(&pairs, timing, cal))
}

/// Schedule for already-encoded phase pairs. `timing` and `cal` must be valid.
pub fn compile_phase_pairs(
    pairs: &[PhasePair],
    timing: &TimingParams,
    cal: &CalibrationCurve,
) -> WaveformSchedule {
    let offsets = timing.perturbation_offsets();
    let slave_period = timing.slave_period();
    let mut events = Vec::with_capacity(pairs.len() * 6);
    for (k, pp) in pairs.iter().enumerate() {
        let t0 = k as f64 / timing.master_rate;
        events.push(ScheduleEvent {
            channel: Channel::MasterDrive,
            start: t0,
            duration: timing.master_on_time,
            level: DRIVE_ON_LEVEL,
        });
        for j in 0..3 {
            events.push(ScheduleEvent {
                channel: Channel::SlaveDrive,
                start: t0 + j as f64 * slave_period,
                duration: timing.slave_on_time,
                level: DRIVE_ON_LEVEL,
            });
        }
        for (off, phi) in offsets.iter().zip([pp.phi12, pp.phi23]) {
            events.push(ScheduleEvent {
                channel: Channel::MasterPerturbation,
                start: t0 + off,
                duration: timing.perturbation_width,
                level: voltage_for_phase(phi, cal),
            });
        }
    }
    events.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.channel.cmp(&b.channel)));
    WaveformSchedule {
        timing: *timing,
        events,
    }
}

fn malformed(message: String) -> Error {
    Error::Parse { line: 0, message }
}

/// Recovers the per-symbol phase pairs from a schedule.
pub fn decompile_schedule(
    sched: &WaveformSchedule,
    timing: &TimingParams,
    cal: &CalibrationCurve,
) -> Result<Vec<PhasePair>> {
    cal.validate()?;
    for (i, e) in sched.events.iter().enumerate() {
        if !(e.start.is_finite() && e.duration.is_finite() && e.level.is_finite()) {
            return Err(malformed(format!("event {i} has non-finite fields")));
        }
        if e.duration <= 0.0 {
            return Err(malformed(format!("event {i} has non-positive duration")));
        }
        if i > 0 && sched.events[i - 1].start > e.start {
            return Err(malformed(format!("event {i} is out of time order")));
        }
    }
    for ch in [
        Channel::MasterDrive,
        Channel::MasterPerturbation,
        Channel::SlaveDrive,
    ] {
        let mut prev: Option<&ScheduleEvent> = None;
        for e in sched.events_on(ch) {
            if let Some(p) = prev {
                if e.start < p.end() {
                    return Err(malformed(format!(
                        "overlapping {} events at {:e} s and {:e} s",
                        ch.as_str(),
                        p.start,
                        e.start
                    )));
                }
            }
            prev = Some(e);
        }
    }

    let windows: Vec<&ScheduleEvent> = sched.events_on(Channel::MasterDrive).collect();
    if windows.is_empty() {
        return Err(malformed("schedule has no master_drive events".into()));
    }
    let mut claimed = 0usize;
    let mut pairs = Vec::with_capacity(windows.len());
    for (k, w) in windows.iter().enumerate() {
        let inside = |e: &&ScheduleEvent| e.start >= w.start && e.end() <= w.end();
        let slaves: Vec<&ScheduleEvent> = sched
            .events_on(Channel::SlaveDrive)
            .filter(inside)
            .collect();
        let perts: Vec<&ScheduleEvent> = sched
            .events_on(Channel::MasterPerturbation)
            .filter(inside)
            .collect();
        if slaves.len() != 3 || perts.len() != 2 {
            return Err(malformed(format!(
                "master window {k} holds {} slave and {} perturbation events, expected 3 and 2",
                slaves.len(),
                perts.len()
            )));
        }
        for (p, (lo, hi)) in perts.iter().zip([
            (slaves[0].start, slaves[1].start),
            (slaves[1].start, slaves[2].start),
        ]) {
            if !(p.start > lo && p.end() < hi) {
                return Err(malformed(format!(
                    "perturbation at {:e} s in window {k} is not between slave onsets",
                    p.start
                )));
            }
            if (p.duration - timing.perturbation_width).abs() > 1e-6 * timing.perturbation_width {
                return Err(malformed(format!(
                    "perturbation at {:e} s has width {:e} s, expected {:e} s",
                    p.start, p.duration, timing.perturbation_width
                )));
            }
        }
        claimed += 1 + slaves.len() + perts.len();
        pairs.push(PhasePair::new(
            phase_for_voltage(perts[0].level, cal),
            phase_for_voltage(perts[1].level, cal),
        ));
    }
    if claimed != sched.events.len() {
        return Err(malformed(format!(
            "{} events lie outside every master window",
            sched.events.len() - claimed
        )));
    }
    Ok(pairs)
}
