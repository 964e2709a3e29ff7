use std::fmt::Write as _;

use super::ast::*;

/// Canonical source text: lowercase keywords, one statement per line,
/// durations in their largest exact unit. Comments are not preserved.
pub fn print(ast: &SequenceAst) -> String {
    let mut out = String::new();
    for stmt in &ast.statements {
        match stmt {
            Statement::Pulse(p) => {
                let _ = write!(out, "pulse {} {}", p.angle, p.phase.token());
                if let Some(d) = &p.duration {
                    let _ = write!(out, " dur={d}");
                }
                if let Some(at) = &p.at {
                    let _ = write!(out, " at={at}");
                }
            }
            Statement::Delay(d) => {
                let _ = write!(out, "delay {}", d.duration);
            }
            Statement::Acquire(a) => {
                let _ = write!(out, "acquire {}", a.channel.as_str());
                if let Some(w) = a.window {
                    let _ = write!(out, " window={w}");
                }
            }
            Statement::Sweep(s) => {
                let _ = write!(out, "sweep {} from {} to {} steps {}", s.name, s.start, s.stop, s.steps);
            }
        }
        out.push('\n');
    }
    out
}
