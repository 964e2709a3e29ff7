use super::ast::*;
use super::SeqError;

struct Token<'a> {
    text: &'a str,
    column: usize,
}

/// Splits one statement into whitespace-separated tokens carrying their
/// 1-based column in the source line.
fn tokenize(stmt: &str, offset: usize) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in stmt.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push(Token { text: &stmt[s..i], column: offset + s + 1 });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Token { text: &stmt[s..], column: offset + s + 1 });
    }
    out
}

struct Ctx {
    line: usize,
}

impl Ctx {
    fn err(&self, column: usize, message: impl Into<String>) -> SeqError {
        SeqError::Parse { line: self.line, column, message: message.into() }
    }
}

/// Parses a time literal such as `80us`, `1.5ns` or `2ms` into picoseconds
/// without going through floating point.
pub(crate) fn parse_time(text: &str) -> Result<TimeSpan, String> {
    if text.starts_with('-') {
        return Err(format!("negative duration '{text}'"));
    }
    let normalized = text.replace('µ', "u");
    let split = normalized
        .find(|c: char| c.is_ascii_alphabetic())
        .ok_or_else(|| format!("time literal '{text}' is missing a unit (ns, us, ms, s)"))?;
    let (num, unit) = normalized.split_at(split);
    let scale = UNITS
        .iter()
        .find(|(u, _)| u.eq_ignore_ascii_case(unit))
        .map(|(_, s)| *s)
        .ok_or_else(|| format!("unknown time unit '{unit}' (expected ns, us, ms or s)"))?;
    let num = num.strip_prefix('+').unwrap_or(num);
    let (int_part, frac_part) = num.split_once('.').unwrap_or((num, ""));
    if int_part.is_empty() && frac_part.is_empty()
        || !int_part.bytes().all(|b| b.is_ascii_digit())
        || !frac_part.bytes().all(|b| b.is_ascii_digit())
    {
        return Err(format!("malformed number in time literal '{text}'"));
    }
    let digits = scale.ilog10() as usize;
    let frac_trimmed = frac_part.trim_end_matches('0');
    if frac_trimmed.len() > digits {
        return Err(format!("time literal '{text}' is finer than 1 ps resolution"));
    }
    let int_val: i64 =
        if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| format!("time literal '{text}' out of range"))? };
    let frac_val: i64 = if frac_trimmed.is_empty() {
        0
    } else {
        let padded = format!("{frac_trimmed:0<digits$}");
        padded.parse().map_err(|_| format!("time literal '{text}' out of range"))?
    };
    int_val
        .checked_mul(scale)
        .and_then(|v| v.checked_add(frac_val))
        .map(TimeSpan::from_picos)
        .ok_or_else(|| format!("time literal '{text}' out of range"))
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_') && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_angle(tok: &Token, ctx: &Ctx) -> Result<Angle, SeqError> {
    let lower = tok.text.to_ascii_lowercase();
    match lower.as_str() {
        "pi" => return Ok(Angle::Pi),
        "pi/2" => return Ok(Angle::HalfPi),
        "auto" => return Ok(Angle::Drive),
        _ => {}
    }
    if let Some(num) = lower.strip_suffix("deg") {
        if let Ok(v) = num.parse::<f64>() {
            if v.is_finite() {
                return Ok(Angle::Degrees(v));
            }
        }
    }
    Err(ctx.err(tok.column, format!("bad angle '{}' (expected pi, pi/2, <number>deg or auto)", tok.text)))
}

fn time_at(text: &str, column: usize, ctx: &Ctx) -> Result<TimeSpan, SeqError> {
    let t = parse_time(text).map_err(|m| ctx.err(column, m))?;
    if !t.is_positive() {
        return Err(ctx.err(column, format!("duration must be positive, got '{text}'")));
    }
    Ok(t)
}

fn time_or_var(text: &str, column: usize, ctx: &Ctx, allow_zero: bool) -> Result<TimeRef, SeqError> {
    if text.starts_with('-') {
        return Err(ctx.err(column, format!("negative duration '{text}'")));
    }
    if text.starts_with(|c: char| c.is_ascii_digit() || c == '.' || c == '+') {
        let t = parse_time(text).map_err(|m| ctx.err(column, m))?;
        if !allow_zero && !t.is_positive() {
            return Err(ctx.err(column, format!("duration must be positive, got '{text}'")));
        }
        return Ok(TimeRef::Literal(t));
    }
    if is_identifier(text) {
        return Ok(TimeRef::Var(text.to_string()));
    }
    Err(ctx.err(column, format!("expected a time literal or variable name, found '{text}'")))
}

fn parse_pulse(toks: &[Token], ctx: &Ctx) -> Result<PulseStmt, SeqError> {
    let kw = &toks[0];
    let angle_tok = toks.get(1).ok_or_else(|| ctx.err(kw.column, "pulse needs an angle and a phase"))?;
    let angle = parse_angle(angle_tok, ctx)?;
    let phase_tok = toks.get(2).ok_or_else(|| ctx.err(angle_tok.column, "pulse needs a phase (+x, +y, -x, -y)"))?;
    let phase = Phase::from_token(&phase_tok.text.to_ascii_lowercase())
        .ok_or_else(|| ctx.err(phase_tok.column, format!("unknown phase '{}' (expected +x, +y, -x or -y)", phase_tok.text)))?;
    let mut duration = None;
    let mut at = None;
    let mut seen_dur = false;
    for tok in &toks[3..] {
        let Some((key, value)) = tok.text.split_once('=') else {
            return Err(ctx.err(tok.column, format!("unexpected token '{}'", tok.text)));
        };
        let vcol = tok.column + key.len() + 1;
        match key.to_ascii_lowercase().as_str() {
            "dur" if !seen_dur => {
                seen_dur = true;
                if !value.eq_ignore_ascii_case("auto") {
                    duration = Some(time_or_var(value, vcol, ctx, false)?);
                }
            }
            "at" if at.is_none() => at = Some(time_or_var(value, vcol, ctx, true)?),
            "dur" | "at" => return Err(ctx.err(tok.column, format!("option '{key}' given twice"))),
            _ => return Err(ctx.err(tok.column, format!("unknown pulse option '{key}'"))),
        }
    }
    if angle == Angle::Drive && duration.is_none() {
        return Err(ctx.err(angle_tok.column, "angle 'auto' needs an explicit dur=<time>|<var>"));
    }
    Ok(PulseStmt { angle, phase, duration, at })
}

fn parse_delay(toks: &[Token], ctx: &Ctx) -> Result<DelayStmt, SeqError> {
    let kw = &toks[0];
    let tok = toks.get(1).ok_or_else(|| ctx.err(kw.column, "delay needs a duration"))?;
    if let Some(extra) = toks.get(2) {
        return Err(ctx.err(extra.column, format!("unexpected token '{}'", extra.text)));
    }
    Ok(DelayStmt { duration: time_or_var(tok.text, tok.column, ctx, false)? })
}

fn parse_acquire(toks: &[Token], ctx: &Ctx) -> Result<AcquireStmt, SeqError> {
    let kw = &toks[0];
    let tok = toks.get(1).ok_or_else(|| ctx.err(kw.column, "acquire needs a channel (echo, mz, charge)"))?;
    let channel = Channel::from_token(&tok.text.to_ascii_lowercase())
        .ok_or_else(|| ctx.err(tok.column, format!("unknown channel '{}' (expected echo, mz or charge)", tok.text)))?;
    let mut window = None;
    for tok in &toks[2..] {
        match tok.text.split_once('=') {
            Some((k, v)) if k.eq_ignore_ascii_case("window") && window.is_none() => {
                window = Some(time_at(v, tok.column + k.len() + 1, ctx)?);
            }
            _ => return Err(ctx.err(tok.column, format!("unexpected token '{}'", tok.text))),
        }
    }
    Ok(AcquireStmt { channel, window })
}

fn parse_sweep(toks: &[Token], ctx: &Ctx) -> Result<SweepDecl, SeqError> {
    // sweep <name> from <time> to <time> steps <n>
    let kw = &toks[0];
    if toks.len() != 8 {
        let col = toks.last().map_or(kw.column, |t| t.column);
        return Err(ctx.err(col, "expected 'sweep <name> from <time> to <time> steps <n>'"));
    }
    let name = &toks[1];
    if !is_identifier(name.text) || is_keyword(name.text) {
        return Err(ctx.err(name.column, format!("invalid sweep variable name '{}'", name.text)));
    }
    for (i, word) in [(2, "from"), (4, "to"), (6, "steps")] {
        if !toks[i].text.eq_ignore_ascii_case(word) {
            return Err(ctx.err(toks[i].column, format!("expected '{word}', found '{}'", toks[i].text)));
        }
    }
    let bound = |t: &Token| -> Result<TimeSpan, SeqError> { parse_time(t.text).map_err(|m| ctx.err(t.column, m)) };
    let start = bound(&toks[3])?;
    let stop = bound(&toks[5])?;
    let steps: u32 = toks[7]
        .text
        .parse()
        .map_err(|_| ctx.err(toks[7].column, format!("steps must be a non-negative integer, found '{}'", toks[7].text)))?;
    Ok(SweepDecl { name: name.text.to_string(), start, stop, steps })
}

fn is_keyword(s: &str) -> bool {
    ["pulse", "delay", "acquire", "sweep", "from", "to", "steps", "auto"].iter().any(|k| k.eq_ignore_ascii_case(s))
}

/// Parses sequence source text. One statement per line (or `;`-separated);
/// `#` starts a comment.
pub fn parse(source: &str) -> Result<SequenceAst, SeqError> {
    let mut ast = SequenceAst::default();
    let mut sweep_line = None;

    for (idx, raw_line) in source.lines().enumerate() {
        let ctx = Ctx { line: idx + 1 };
        let code = raw_line.split('#').next().unwrap_or("");
        let mut offset = 0;
        for stmt in code.split(';') {
            let toks = tokenize(stmt, offset);
            offset += stmt.len() + 1;
            let Some(kw) = toks.first() else { continue };
            let statement = match kw.text.to_ascii_lowercase().as_str() {
                "pulse" => Statement::Pulse(parse_pulse(&toks, &ctx)?),
                "delay" => Statement::Delay(parse_delay(&toks, &ctx)?),
                "acquire" => Statement::Acquire(parse_acquire(&toks, &ctx)?),
                "sweep" => {
                    if let Some(first) = sweep_line {
                        return Err(ctx.err(kw.column, format!("duplicate sweep declaration (first declared on line {first})")));
                    }
                    sweep_line = Some(ctx.line);
                    Statement::Sweep(parse_sweep(&toks, &ctx)?)
                }
                other => {
                    return Err(ctx.err(kw.column, format!("unknown statement '{other}'")));
                }
            };
            ast.statements.push(statement);
            ast.lines.push(ctx.line);
        }
    }

    if ast.acquisitions().next().is_none() {
        let line = source.lines().count().max(1);
        return Err(SeqError::Parse { line, column: 1, message: "sequence has no acquire statement".into() });
    }
    Ok(ast)
}
