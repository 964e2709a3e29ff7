//! Generators over the sequence grammar, shared by the property tests and
//! the acceptance harness.

use proptest::prelude::*;

use spintrap::seqlang::*;

fn span() -> impl Strategy<Value = TimeSpan> {
    prop_oneof![
        (1i64..5_000).prop_map(TimeSpan::from_nanos),
        (1i64..5_000).prop_map(TimeSpan::from_micros),
        (1i64..10_000_000).prop_map(TimeSpan::from_picos),
    ]
}

fn var() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["tau", "t", "t_2", "wait"]).prop_map(str::to_string)
}

fn time_ref() -> impl Strategy<Value = TimeRef> {
    prop_oneof![3 => span().prop_map(TimeRef::Literal), 1 => var().prop_map(TimeRef::Var)]
}

fn phase() -> impl Strategy<Value = Phase> {
    prop::sample::select(Phase::ALL.to_vec())
}

fn pulse() -> impl Strategy<Value = PulseStmt> {
    let fixed = prop_oneof![
        Just(Angle::Pi),
        Just(Angle::HalfPi),
        (-720.0f64..720.0).prop_map(Angle::Degrees),
        (1u32..360).prop_map(|d| Angle::Degrees(d as f64)),
    ];
    let fixed = (fixed, phase(), prop::option::of(time_ref()), prop::option::of(time_ref()))
        .prop_map(|(angle, phase, duration, at)| PulseStmt { angle, phase, duration, at });
    let drive = (phase(), time_ref(), prop::option::of(time_ref())).prop_map(|(phase, d, at)| PulseStmt {
        angle: Angle::Drive,
        phase,
        duration: Some(d),
        at,
    });
    prop_oneof![4 => fixed, 1 => drive]
}

fn statement() -> impl Strategy<Value = Statement> {
    let channel = prop::sample::select(vec![Channel::Echo, Channel::Mz, Channel::Charge]);
    prop_oneof![
        pulse().prop_map(Statement::Pulse),
        time_ref().prop_map(|duration| Statement::Delay(DelayStmt { duration })),
        (channel, prop::option::of(span())).prop_map(|(channel, window)| Statement::Acquire(AcquireStmt { channel, window })),
    ]
}

pub fn sequence() -> impl Strategy<Value = SequenceAst> {
    let sweep = (var(), span(), span(), 1u32..500)
        .prop_map(|(name, start, stop, steps)| Statement::Sweep(SweepDecl { name, start, stop, steps }));
    (prop::option::of(sweep), prop::collection::vec(statement(), 0..12)).prop_map(|(sweep, body)| {
        let mut stmts: Vec<Statement> = sweep.into_iter().collect();
        stmts.extend(body);
        stmts.push(Statement::Acquire(AcquireStmt { channel: Channel::Echo, window: None }));
        SequenceAst::new(stmts)
    })
}
