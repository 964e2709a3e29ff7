use super::ast::*;
use super::SeqError;
use crate::spincore::Environment;

/// Slack for floating point comparisons between event edges, far below the
/// 1 ps literal resolution.
const EDGE_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    /// Rotation by `angle` (radians) about the drive axis `phase`, spread
    /// uniformly over `duration`.
    Pulse {
        angle: f64,
        phase: Phase,
        duration: f64,
    },
    FreeEvolution {
        duration: f64,
    },
    Acquisition {
        channel: Channel,
        window: f64,
    },
}

impl EventKind {
    pub fn duration(&self) -> f64 {
        match *self {
            EventKind::Pulse { duration, .. } => duration,
            EventKind::FreeEvolution { duration } => duration,
            EventKind::Acquisition { window, .. } => window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub start: f64,
    pub kind: EventKind,
}

impl Event {
    pub fn end(&self) -> f64 {
        self.start + self.kind.duration()
    }
}

/// Absolute-time schedule. Events tile `[0, total_duration]` without gaps
/// or overlaps; idle time is an explicit `FreeEvolution` event.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub events: Vec<Event>,
    pub total_duration: f64,
    pub sweep_index: Option<usize>,
}

impl Timeline {
    /// Checks the tiling invariant. Zero-width acquisitions may share a
    /// start time with their neighbours.
    pub fn check_gap_free(&self) -> Result<(), String> {
        let mut cursor = 0.0_f64;
        for (i, e) in self.events.iter().enumerate() {
            if e.start < 0.0 {
                return Err(format!("event {i} starts before zero"));
            }
            if (e.start - cursor).abs() > EDGE_EPS * (1.0 + cursor) {
                return Err(format!("event {i} starts at {} but previous ended at {cursor}", e.start));
            }
            if e.kind.duration() < 0.0 {
                return Err(format!("event {i} has negative duration"));
            }
            cursor = e.end();
        }
        if (cursor - self.total_duration).abs() > EDGE_EPS * (1.0 + cursor) {
            return Err(format!("events end at {cursor}, total is {}", self.total_duration));
        }
        Ok(())
    }

    pub fn acquisitions(&self) -> impl Iterator<Item = (usize, &Event)> {
        self.events.iter().enumerate().filter(|(_, e)| matches!(e.kind, EventKind::Acquisition { .. }))
    }

    pub fn pulse_count(&self) -> usize {
        self.events.iter().filter(|e| matches!(e.kind, EventKind::Pulse { .. })).count()
    }
}

#[derive(Debug, Clone)]
struct Span {
    start: f64,
    end: f64,
    angle: f64,
    phase: Phase,
    line: usize,
}

impl Span {
    fn rate(&self) -> f64 {
        self.angle / (self.end - self.start)
    }
}

struct Resolver<'a> {
    sweep: Option<&'a SweepDecl>,
    value: Option<f64>,
}

impl Resolver<'_> {
    fn resolve(&self, r: &TimeRef, line: usize) -> Result<f64, SeqError> {
        match r {
            TimeRef::Literal(t) => Ok(t.seconds()),
            TimeRef::Var(name) => match (self.sweep, self.value) {
                (Some(s), Some(v)) if s.name == *name => Ok(v),
                _ => Err(SeqError::compile(line, format!("unresolved variable '{name}'"))),
            },
        }
    }
}

fn pulse_duration(p: &PulseStmt, env: &Environment, resolver: &Resolver, line: usize) -> Result<f64, SeqError> {
    let d = match (&p.duration, p.angle.radians()) {
        (Some(t), _) => resolver.resolve(t, line)?,
        (None, Some(a)) => a.abs() / env.rabi_rate(),
        (None, None) => return Err(SeqError::compile(line, "angle 'auto' needs an explicit duration")),
    };
    if !(d > 0.0 && d.is_finite()) {
        return Err(SeqError::compile(line, "pulse duration must be positive"));
    }
    Ok(d)
}

/// Compiles one instance of the sequence. `sweep_value` must be given if
/// and only if the sequence declares a sweep.
pub fn compile(ast: &SequenceAst, env: &Environment, sweep_value: Option<f64>) -> Result<Timeline, SeqError> {
    let sweep = ast.sweep();
    if let Some(s) = sweep {
        check_sweep(ast, s)?;
    }
    match (sweep, sweep_value) {
        (Some(s), None) => return Err(SeqError::compile(0, format!("sequence sweeps '{}' but no value was supplied", s.name))),
        (None, Some(_)) => return Err(SeqError::compile(0, "a sweep value was supplied but the sequence declares no sweep")),
        (_, Some(v)) if !v.is_finite() || v < 0.0 => {
            return Err(SeqError::compile(0, format!("sweep value {v} must be finite and >= 0")))
        }
        _ => {}
    }
    let resolver = Resolver { sweep, value: sweep_value };

    let mut pulses: Vec<Span> = Vec::new();
    let mut positioned: Vec<Span> = Vec::new();
    let mut acquisitions: Vec<(f64, Channel, f64, usize)> = Vec::new();
    let mut clock = 0.0_f64;

    for (idx, stmt) in ast.statements.iter().enumerate() {
        let line = ast.line_of(idx);
        match stmt {
            Statement::Sweep(_) => {}
            Statement::Pulse(p) => {
                let d = pulse_duration(p, env, &resolver, line)?;
                let angle = p.angle.radians().unwrap_or(env.rabi_rate() * d);
                match &p.at {
                    None => {
                        pulses.push(Span { start: clock, end: clock + d, angle, phase: p.phase, line });
                        clock += d;
                    }
                    Some(at) => {
                        let start = resolver.resolve(at, line)?;
                        if start < 0.0 {
                            return Err(SeqError::compile(line, "pulse position must be >= 0"));
                        }
                        positioned.push(Span { start, end: start + d, angle, phase: p.phase, line });
                    }
                }
            }
            Statement::Delay(d) => {
                let v = resolver.resolve(&d.duration, line)?;
                if !(v > 0.0) {
                    return Err(SeqError::compile(line, format!("delay must be positive, got {v} s")));
                }
                clock += v;
            }
            Statement::Acquire(a) => {
                let w = a.window.map_or(0.0, TimeSpan::seconds);
                acquisitions.push((clock, a.channel, w, line));
                clock += w;
            }
        }
    }
    let total = clock;

    for p in &positioned {
        if p.end > total + EDGE_EPS * (1.0 + total) {
            return Err(SeqError::compile(
                p.line,
                format!("positioned pulse ends at {} s, after the sequence end {} s", p.end, total),
            ));
        }
        for &(a, _, w, _) in &acquisitions {
            let inside = if w > 0.0 {
                p.start < a + w - EDGE_EPS && a < p.end - EDGE_EPS
            } else {
                p.start + EDGE_EPS < a && a < p.end - EDGE_EPS
            };
            if inside {
                return Err(SeqError::compile(p.line, "positioned pulse overlaps an acquisition"));
            }
        }
    }
    pulses.extend(positioned);
    let pulses = merge_overlapping(pulses)?;

    // (start, order, kind); acquisitions sort ahead of a pulse starting at
    // the same instant.
    let mut items: Vec<(f64, u8, EventKind)> = pulses
        .iter()
        .map(|p| {
            let kind = EventKind::Pulse { angle: p.angle, phase: p.phase, duration: p.end - p.start };
            (p.start, 1, kind)
        })
        .collect();
    items.extend(acquisitions.iter().map(|&(t, channel, window, _)| (t, 0, EventKind::Acquisition { channel, window })));
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut events = Vec::with_capacity(items.len() * 2 + 1);
    let mut cursor = 0.0_f64;
    for (start, _, kind) in items {
        let gap = start - cursor;
        if gap > EDGE_EPS * (1.0 + cursor) {
            events.push(Event { start: cursor, kind: EventKind::FreeEvolution { duration: gap } });
            cursor = start;
        }
        events.push(Event { start: cursor, kind });
        cursor += kind.duration();
    }
    let tail = total - cursor;
    if tail > EDGE_EPS * (1.0 + cursor) {
        events.push(Event { start: cursor, kind: EventKind::FreeEvolution { duration: tail } });
        cursor += tail;
    }

    Ok(Timeline { events, total_duration: cursor, sweep_index: None })
}

/// Pulses that overlap in time are one drive window: same phase and drive
/// rate are required, and the merged pulse spans the union.
fn merge_overlapping(mut spans: Vec<Span>) -> Result<Vec<Span>, SeqError> {
    spans.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut out: Vec<Span> = Vec::with_capacity(spans.len());
    for s in spans {
        if let Some(last) = out.last_mut() {
            if s.start < last.end - EDGE_EPS {
                if s.phase != last.phase {
                    return Err(SeqError::compile(
                        s.line,
                        format!("pulse overlaps the pulse from line {} with a different phase", last.line),
                    ));
                }
                let (r1, r2) = (last.rate(), s.rate());
                if (r1 - r2).abs() > 1e-9 * r1.abs().max(r2.abs()) {
                    return Err(SeqError::compile(
                        s.line,
                        format!("pulse overlaps the pulse from line {} with a different drive rate", last.line),
                    ));
                }
                if s.end > last.end {
                    last.end = s.end;
                }
                last.angle = r1 * (last.end - last.start);
                continue;
            }
        }
        out.push(s);
    }
    Ok(out)
}

fn check_sweep(ast: &SequenceAst, s: &SweepDecl) -> Result<(), SeqError> {
    let line = ast.statements.iter().position(|st| matches!(st, Statement::Sweep(_))).map_or(0, |i| ast.line_of(i));
    if s.steps == 0 {
        return Err(SeqError::compile(line, format!("sweep '{}' has zero steps", s.name)));
    }
    if s.steps > 1 && s.start >= s.stop {
        return Err(SeqError::compile(line, format!("sweep '{}' must run from a smaller to a larger value", s.name)));
    }
    Ok(())
}

/// Compiles every point of the declared sweep (or the single instance of a
/// sweep-free sequence), returning `(sweep value, timeline)` pairs.
pub fn compile_sweep(ast: &SequenceAst, env: &Environment) -> Result<Vec<(Option<f64>, Timeline)>, SeqError> {
    match ast.sweep() {
        None => Ok(vec![(None, compile(ast, env, None)?)]),
        Some(s) => {
            check_sweep(ast, s)?;
            s.values()
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    let mut tl = compile(ast, env, Some(v))?;
                    tl.sweep_index = Some(i);
                    Ok((Some(v), tl))
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn env() -> Environment {
        Environment::default()
    }

    #[test]
    fn inversion_recovery_total_duration() {
        let src = "pulse pi +x dur=600ns\ndelay 100us\npulse pi/2 +x dur=300ns\ndelay 1us\npulse pi +x dur=600ns\ndelay 1us\nacquire echo";
        let tl = compile(&parse(src).unwrap(), &env(), None).unwrap();
        let expected = 600e-9 + 1e-4 + 300e-9 + 1e-6 + 600e-9 + 1e-6;
        assert!((tl.total_duration - expected).abs() < 1e-18, "{}", tl.total_duration);
        tl.check_gap_free().unwrap();
        assert_eq!(tl.events.len(), 7);
        assert_eq!(tl.pulse_count(), 3);
    }

    #[test]
    fn single_explicit_pulse() {
        let tl = compile(&parse("pulse pi +x dur=480ns; acquire mz").unwrap(), &env(), None).unwrap();
        assert_eq!(tl.events.len(), 2);
        assert!((tl.total_duration - 480e-9).abs() < 1e-20);
        match tl.events[0].kind {
            EventKind::Pulse { angle, duration, .. } => {
                assert_eq!(angle, std::f64::consts::PI);
                assert_eq!(duration, 480e-9);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn auto_duration_follows_rabi_frequency() {
        let tl = compile(&parse("pulse pi/2 +y\nacquire mz").unwrap(), &env(), None).unwrap();
        assert!((tl.total_duration - 240e-9).abs() < 1e-18);
        let fast = Environment { rabi_frequency: 2.0 * env().rabi_frequency, ..env() };
        let tl = compile(&parse("pulse pi/2 +y\nacquire mz").unwrap(), &fast, None).unwrap();
        assert!((tl.total_duration - 120e-9).abs() < 1e-18);
    }

    #[test]
    fn drive_angle_rotates_by_rabi_rate_times_swept_duration() {
        let ast = parse("sweep t from 240ns to 720ns steps 3\npulse auto +x dur=t\nacquire mz").unwrap();
        let angles: Vec<f64> = compile_sweep(&ast, &env())
            .unwrap()
            .iter()
            .map(|(_, tl)| match tl.events[0].kind {
                EventKind::Pulse { angle, .. } => angle,
                _ => panic!(),
            })
            .collect();
        let pi = std::f64::consts::PI;
        for (got, want) in angles.iter().zip([pi / 2.0, pi, 1.5 * pi]) {
            assert!((got - want).abs() < 1e-12, "{angles:?}");
        }
        let err = parse("pulse auto +x\nacquire mz").unwrap_err();
        assert!(err.to_string().contains("needs an explicit dur"), "{err}");
    }

    #[test]
    fn sweep_substitution_and_errors() {
        let ast = parse("sweep tau from 10us to 30us steps 3\npulse pi/2 +x\ndelay tau\nacquire mz").unwrap();
        let all = compile_sweep(&ast, &env()).unwrap();
        let vals: Vec<f64> = all.iter().map(|(v, _)| v.unwrap()).collect();
        assert_eq!(vals, vec![10e-6, 20e-6, 30e-6]);
        assert_eq!(all[2].1.sweep_index, Some(2));
        assert!(compile(&ast, &env(), None).is_err());

        let bad = parse("pulse pi/2 +x\ndelay tau\nacquire mz").unwrap();
        let err = compile(&bad, &env(), None).unwrap_err();
        assert!(err.to_string().contains("unresolved variable"), "{err}");
        assert!(err.to_string().contains("line 2"), "{err}");

        let zero = parse("sweep tau from 10us to 30us steps 0\ndelay tau\nacquire mz").unwrap();
        let err = compile_sweep(&zero, &env()).unwrap_err();
        assert!(err.to_string().contains("zero steps"), "{err}");
    }

    #[test]
    fn positioned_pulse_merges_with_overlap() {
        // readout fully on top of the first pulse: union stays a pi/2
        let src = "sweep t from 0s to 2us steps 3\ndelay 1us\npulse pi/2 +x\ndelay 5us\npulse pi/2 +x at=t\nacquire mz";
        let ast = parse(src).unwrap();
        let tl = compile(&ast, &env(), Some(1e-6)).unwrap();
        tl.check_gap_free().unwrap();
        assert_eq!(tl.pulse_count(), 1);
        // half overlap: union is 360 ns at the pi/2 rate
        let tl = compile(&ast, &env(), Some(1.12e-6)).unwrap();
        let angles: Vec<f64> = tl
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Pulse { angle, .. } => Some(angle),
                _ => None,
            })
            .collect();
        assert_eq!(angles.len(), 1);
        assert!((angles[0] - 0.75 * std::f64::consts::PI).abs() < 1e-9);
        // disjoint
        let tl = compile(&ast, &env(), Some(3e-6)).unwrap();
        assert_eq!(tl.pulse_count(), 2);
        tl.check_gap_free().unwrap();
    }

    #[test]
    fn overlapping_pulses_with_different_phase_fail() {
        let src = "pulse pi/2 +x\ndelay 1us\npulse pi/2 +y at=100ns\nacquire mz";
        assert!(compile(&parse(src).unwrap(), &env(), None).is_err());
    }

    #[test]
    fn positioned_pulse_past_end_fails() {
        let src = "pulse pi/2 +x\ndelay 1us\npulse pi/2 +x at=2us\nacquire mz";
        assert!(compile(&parse(src).unwrap(), &env(), None).is_err());
    }
}
