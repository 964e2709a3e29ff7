use std::fmt;

/// Non-negative time quantity held as integer picoseconds so that literals
/// survive a print/parse round trip exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeSpan {
    picos: i64,
}

pub(crate) const UNITS: [(&str, i64); 4] = [("s", 1_000_000_000_000), ("ms", 1_000_000_000), ("us", 1_000_000), ("ns", 1_000)];

impl TimeSpan {
    pub const ZERO: TimeSpan = TimeSpan { picos: 0 };

    pub fn from_picos(picos: i64) -> Self {
        TimeSpan { picos }
    }

    pub fn from_nanos(ns: i64) -> Self {
        TimeSpan { picos: ns * 1_000 }
    }

    pub fn from_micros(us: i64) -> Self {
        TimeSpan { picos: us * 1_000_000 }
    }

    pub fn picos(self) -> i64 {
        self.picos
    }

    pub fn seconds(self) -> f64 {
        self.picos as f64 / 1e12
    }

    pub fn is_positive(self) -> bool {
        self.picos > 0
    }
}

impl fmt::Display for TimeSpan {
    /// Largest unit in which the value is an integer; sub-nanosecond
    /// remainders are written as decimal nanoseconds.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.picos == 0 {
            return write!(f, "0s");
        }
        for (unit, scale) in UNITS {
            if self.picos % scale == 0 {
                return write!(f, "{}{}", self.picos / scale, unit);
            }
        }
        let whole = self.picos / 1_000;
        let frac = format!("{:03}", self.picos % 1_000);
        write!(f, "{}.{}ns", whole, frac.trim_end_matches('0'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Angle {
    Pi,
    HalfPi,
    Degrees(f64),
    /// Whatever the drive rotates in the given duration (`auto`).
    Drive,
}

impl Angle {
    /// Fixed rotation angle; `None` for [`Angle::Drive`].
    pub fn radians(self) -> Option<f64> {
        match self {
            Angle::Pi => Some(std::f64::consts::PI),
            Angle::HalfPi => Some(std::f64::consts::FRAC_PI_2),
            Angle::Degrees(d) => Some(d.to_radians()),
            Angle::Drive => None,
        }
    }
}

impl fmt::Display for Angle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Angle::Pi => write!(f, "pi"),
            Angle::HalfPi => write!(f, "pi/2"),
            Angle::Degrees(d) => write!(f, "{d}deg"),
            Angle::Drive => write!(f, "auto"),
        }
    }
}

/// Drive phase, restricted to the four quadrature axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    PlusX,
    PlusY,
    MinusX,
    MinusY,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::PlusX, Phase::PlusY, Phase::MinusX, Phase::MinusY];

    /// Azimuth of the drive axis in the rotating frame.
    pub fn angle(self) -> f64 {
        use std::f64::consts::{FRAC_PI_2, PI};
        match self {
            Phase::PlusX => 0.0,
            Phase::PlusY => FRAC_PI_2,
            Phase::MinusX => PI,
            Phase::MinusY => 3.0 * FRAC_PI_2,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Phase::PlusX => "+x",
            Phase::PlusY => "+y",
            Phase::MinusX => "-x",
            Phase::MinusY => "-y",
        }
    }

    pub fn from_token(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.token() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Echo,
    Mz,
    Charge,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Echo => "echo",
            Channel::Mz => "mz",
            Channel::Charge => "charge",
        }
    }

    pub fn from_token(s: &str) -> Option<Channel> {
        match s {
            "echo" => Some(Channel::Echo),
            "mz" => Some(Channel::Mz),
            "charge" => Some(Channel::Charge),
            _ => None,
        }
    }
}

/// A time that is either written out or refers to the sweep variable.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeRef {
    Literal(TimeSpan),
    Var(String),
}

impl fmt::Display for TimeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeRef::Literal(t) => t.fmt(f),
            TimeRef::Var(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseStmt {
    pub angle: Angle,
    pub phase: Phase,
    /// `None` means "auto": derived from the Rabi frequency at compile time.
    pub duration: Option<TimeRef>,
    /// Absolute start time. Positioned pulses are laid over the sequential
    /// schedule instead of advancing the clock.
    pub at: Option<TimeRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayStmt {
    pub duration: TimeRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquireStmt {
    pub channel: Channel,
    pub window: Option<TimeSpan>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepDecl {
    pub name: String,
    pub start: TimeSpan,
    pub stop: TimeSpan,
    pub steps: u32,
}

impl SweepDecl {
    /// Evenly spaced grid including both end points. Each value is a single
    /// correctly rounded division, so grid points that are whole multiples
    /// of a picosecond come out identical to the corresponding literal.
    pub fn values(&self) -> Vec<f64> {
        let n = self.steps as i128;
        if n <= 1 {
            return vec![self.start.seconds(); self.steps as usize];
        }
        let (a, b) = (self.start.picos() as i128, self.stop.picos() as i128);
        (0..n)
            .map(|i| {
                let num = a * (n - 1) + (b - a) * i;
                num as f64 / ((n - 1) as f64 * 1e12)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Pulse(PulseStmt),
    Delay(DelayStmt),
    Acquire(AcquireStmt),
    Sweep(SweepDecl),
}

/// Parsed sequence. Equality is structural: source line numbers are
/// carried for diagnostics only.
#[derive(Debug, Clone, Default)]
pub struct SequenceAst {
    pub statements: Vec<Statement>,
    pub lines: Vec<usize>,
}

impl PartialEq for SequenceAst {
    fn eq(&self, other: &Self) -> bool {
        self.statements == other.statements
    }
}

impl SequenceAst {
    pub fn new(statements: Vec<Statement>) -> Self {
        let lines = (1..=statements.len()).collect();
        SequenceAst { statements, lines }
    }

    pub fn sweep(&self) -> Option<&SweepDecl> {
        self.statements.iter().find_map(|s| match s {
            Statement::Sweep(d) => Some(d),
            _ => None,
        })
    }

    pub fn line_of(&self, index: usize) -> usize {
        self.lines.get(index).copied().unwrap_or(0)
    }

    pub fn acquisitions(&self) -> impl Iterator<Item = &AcquireStmt> {
        self.statements.iter().filter_map(|s| match s {
            Statement::Acquire(a) => Some(a),
            _ => None,
        })
    }
}
