//! The pool interpreter: unique decomposition into evaluation contexts,
//! pure and ad-hoc reduction, thread and channel rules, bidirectional
//! forwarding, and a deterministic seeded scheduler with optional per-step
//! monitors (re-typechecking, DF-reducibility, canonical-form audits).
//!
//! Communication is synchronous: a send and its matching receive rewrite
//! both threads in one step. A forwarder thread is transparent; a value
//! crosses a whole chain of forwarders in one rendezvous, and a close
//! handshake retires the entire chain.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ast::{CaseArm, Endpoint, Expr, ExprKind, LetBinder, Polarity, SessionType, ViewType};
use crate::dfcheck::{self, Collection, StepShape};
use crate::session::{self, SessionEnv};
use crate::typecheck::{self, canonical_agrees, CheckedProgram, Checker, Signature};

// ---------------------------------------------------------------------
// pools and channel stores
// ---------------------------------------------------------------------

/// Thread pool: tid 0 is the main thread and is always present.
#[derive(Clone, Debug)]
pub struct Pool {
    pub threads: BTreeMap<u64, Expr>,
    next_tid: u64,
}

impl Pool {
    pub fn new(main: Expr) -> Pool {
        let mut threads = BTreeMap::new();
        threads.insert(0, main);
        Pool {
            threads,
            next_tid: 1,
        }
    }

    pub fn spawn(&mut self, e: Expr) -> u64 {
        let tid = self.next_tid;
        self.next_tid += 1;
        self.threads.insert(tid, e);
        tid
    }

    pub fn main(&self) -> &Expr {
        self.threads.get(&0).expect("main thread present")
    }

    pub fn is_final(&self) -> bool {
        self.threads.len() == 1 && self.main().is_value()
    }

    /// One channel set per thread, in tid order.
    pub fn rch(&self) -> Collection {
        Collection::new(
            self.threads
                .values()
                .map(|e| e.resources().as_set())
                .collect(),
        )
    }
}

#[derive(Clone, Debug)]
pub struct ChanState {
    /// Session state as seen from the positive endpoint.
    pub session: SessionType,
    pub pos_live: bool,
    pub neg_live: bool,
}

/// Live channels, keyed by id. A channel enters at creation and leaves at
/// the close handshake; its session advances one constructor per transfer.
#[derive(Clone, Debug, Default)]
pub struct ChannelStore {
    pub chans: BTreeMap<u64, ChanState>,
    next_id: u64,
}

impl ChannelStore {
    pub fn new() -> ChannelStore {
        ChannelStore {
            chans: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn create(&mut self, session: SessionType) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.chans.insert(
            id,
            ChanState {
                session,
                pos_live: true,
                neg_live: true,
            },
        );
        id
    }

    pub fn remove(&mut self, id: u64) {
        self.chans.remove(&id);
    }

    pub fn is_empty(&self) -> bool {
        self.chans.is_empty()
    }

    /// Viewtypes for all live endpoints, for typing resource constants.
    pub fn resource_types(&self) -> BTreeMap<Endpoint, ViewType> {
        let mut out = BTreeMap::new();
        for (id, st) in &self.chans {
            if st.pos_live {
                out.insert(Endpoint::pos(*id), ViewType::ChPos(st.session.clone()));
            }
            if st.neg_live {
                out.insert(Endpoint::neg(*id), ViewType::ChNeg(st.session.clone()));
            }
        }
        out
    }

    fn advance_value(&mut self, id: u64, env: &SessionEnv) -> Result<(), RuntimeError> {
        let st = self
            .chans
            .get_mut(&id)
            .ok_or_else(|| RuntimeError::internal(format!("channel {id} not live")))?;
        let head = session::unfold_head(&st.session, env)
            .map_err(|e| RuntimeError::internal(format!("channel {id}: {e}")))?;
        match head {
            SessionType::Send(_, rest) | SessionType::Recv(_, rest) => {
                st.session = *rest;
                Ok(())
            }
            other => Err(RuntimeError::internal(format!(
                "channel {id} transfers at non-transfer session {other}"
            ))),
        }
    }

    fn advance_tag(
        &mut self,
        id: u64,
        tag_index: usize,
        env: &SessionEnv,
    ) -> Result<(), RuntimeError> {
        let st = self
            .chans
            .get_mut(&id)
            .ok_or_else(|| RuntimeError::internal(format!("channel {id} not live")))?;
        let head = session::unfold_head(&st.session, env)
            .map_err(|e| RuntimeError::internal(format!("channel {id}: {e}")))?;
        match head {
            SessionType::Branch(_, arms) => {
                let (_, cont) = arms.get(tag_index).ok_or_else(|| {
                    RuntimeError::internal(format!("channel {id}: tag {tag_index} out of range"))
                })?;
                st.session = cont.clone();
                Ok(())
            }
            other => Err(RuntimeError::internal(format!(
                "channel {id} selects a tag at non-branch session {other}"
            ))),
        }
    }
}

// ---------------------------------------------------------------------
// decomposition
// ---------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum Frame {
    ConstArg {
        name: String,
        done: Vec<Expr>,
        rest: Vec<Expr>,
    },
    IfCond {
        then_e: Expr,
        else_e: Expr,
    },
    PairLeft {
        right: Expr,
    },
    PairRight {
        left: Expr,
    },
    FstF,
    SndF,
    LetPairRhs {
        x1: String,
        x2: String,
        body: Expr,
    },
    LetRhs {
        binder: LetBinder,
        body: Expr,
    },
    AppFun {
        arg: Expr,
    },
    AppArg {
        fun: Expr,
    },
    CaseScrut {
        arms: Vec<CaseArm>,
    },
}

/// An evaluation context: a spine of frames, outermost first.
#[derive(Clone, Debug, Default)]
pub struct EvalContext {
    pub frames: Vec<Frame>,
}

impl EvalContext {
    /// Plug an expression back into the hole.
    pub fn plug(&self, hole: Expr) -> Expr {
        let mut e = hole;
        for f in self.frames.iter().rev() {
            e = match f.clone() {
                Frame::ConstArg { name, done, rest } => {
                    let mut args = done;
                    args.push(e);
                    args.extend(rest);
                    Expr::synth(ExprKind::ConstApp(name, args))
                }
                Frame::IfCond { then_e, else_e } => Expr::synth(ExprKind::If(
                    Arc::new(e),
                    Arc::new(then_e),
                    Arc::new(else_e),
                )),
                Frame::PairLeft { right } => Expr::pair(e, right),
                Frame::PairRight { left } => Expr::pair(left, e),
                Frame::FstF => Expr::synth(ExprKind::Fst(Arc::new(e))),
                Frame::SndF => Expr::synth(ExprKind::Snd(Arc::new(e))),
                Frame::LetPairRhs { x1, x2, body } => {
                    Expr::synth(ExprKind::LetPair(x1, x2, Arc::new(e), Arc::new(body)))
                }
                Frame::LetRhs { binder, body } => {
                    Expr::synth(ExprKind::Let(binder, Arc::new(e), Arc::new(body)))
                }
                Frame::AppFun { arg } => Expr::app(e, arg),
                Frame::AppArg { fun } => Expr::app(fun, e),
                Frame::CaseScrut { arms } => Expr::synth(ExprKind::Case(Arc::new(e), arms)),
            };
        }
        e
    }
}

/// What sits at the hole of a non-value expression.
#[derive(Clone, Debug)]
pub enum Redex {
    Pure(Expr),
    AdHoc {
        name: String,
        args: Vec<Expr>,
    },
    /// `thread_create(v)`
    Spawn {
        fun: Expr,
    },
    /// `chneg_create(v)`
    NewChannel {
        fun: Expr,
    },
    /// `chneg_create2(v)`
    NewChannelPair {
        fun: Expr,
    },
    /// `service_request(v)`
    RequestService {
        service: Expr,
    },
}

/// A channel operation waiting for its dual.
#[derive(Clone, Debug)]
pub enum PartialRedex {
    /// `close(ch)` or `channeg_close(~ch)`.
    Close { ep: Endpoint },
    /// Offers a value: `send(ch, v)` or `channeg_recv(~ch, v)`.
    Give { ep: Endpoint, value: Expr },
    /// Awaits a value: `recv(ch)` or `channeg_send(~ch)`.
    Take { ep: Endpoint },
    /// Tag selection on a branch session.
    Select {
        ep: Endpoint,
        def: String,
        tag: String,
        tag_index: usize,
    },
    /// Tag dispatch, waiting for the dual side to select.
    CaseWait { ep: Endpoint, arms: Vec<CaseArm> },
    /// `chposneg_link(ch1, ~ch2)`: a transparent forwarder.
    Link { pos: Endpoint, neg: Endpoint },
}

impl PartialRedex {
    pub fn describe(&self) -> String {
        match self {
            PartialRedex::Close { ep } => format!("close on {ep}"),
            PartialRedex::Give { ep, .. } => format!("sending on {ep}"),
            PartialRedex::Take { ep } => format!("receiving on {ep}"),
            PartialRedex::Select { ep, tag, .. } => format!("selecting `{tag}` on {ep}"),
            PartialRedex::CaseWait { ep, .. } => format!("dispatching on {ep}"),
            PartialRedex::Link { pos, neg } => format!("forwarding between {pos} and {neg}"),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Decomposition {
    Value,
    Redex(EvalContext, Redex),
    Blocked(EvalContext, PartialRedex),
}

#[derive(Clone, Debug)]
pub enum RuntimeError {
    /// A non-value expression with no redex: a soundness bug.
    Stuck {
        detail: String,
    },
    /// An ad-hoc constant applied outside its domain.
    Undefined {
        detail: String,
    },
    Internal(String),
}

impl RuntimeError {
    fn internal(msg: impl Into<String>) -> RuntimeError {
        RuntimeError::Internal(msg.into())
    }
}

impl fmt::Display for RuntimeError {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            RuntimeError::Stuck { detail } => write!(f, "stuck expression: {detail}"),
            RuntimeError::Undefined { detail } => {
                write!(f, "undefined constant application: {detail}")
            }
            RuntimeError::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

const ADHOC_CONSTS: &[&str] = &[
    "add", "sub", "mul", "div", "mod", "lt", "le", "gt", "ge", "eq", "ne", "randbit",
];

fn endpoint_of(e: &Expr) -> Result<Endpoint, RuntimeError> {
    match &e.kind {
        ExprKind::ResConst(ep) => Ok(*ep),
        other => Err(RuntimeError::Stuck {
            detail: format!("expected a channel endpoint, found {other:?}"),
        }),
    }
}

/// Unique decomposition of a closed expression: a value, a context around
/// a redex, or a context around a partial redex awaiting its dual.
///
/// One pass over the expression; only the siblings along the hole path
/// are cloned into context frames.
pub fn decompose(e: &Expr, sig: &Signature) -> Result<Decomposition, RuntimeError> {
    match walk(e, sig)? {
        Walk::Value => Ok(Decomposition::Value),
        Walk::Redex(mut frames, r) => {
            frames.reverse();
            Ok(Decomposition::Redex(EvalContext { frames }, r))
        }
        Walk::Blocked(mut frames, p) => {
            frames.reverse();
            Ok(Decomposition::Blocked(EvalContext { frames }, p))
        }
    }
}

/// Frames come back innermost-first.
enum Walk {
    Value,
    Redex(Vec<Frame>, Redex),
    Blocked(Vec<Frame>, PartialRedex),
}

impl Walk {
    fn push(self, frame: impl FnOnce() -> Frame) -> Walk {
        match self {
            Walk::Value => Walk::Value,
            Walk::Redex(mut frames, r) => {
                frames.push(frame());
                Walk::Redex(frames, r)
            }
            Walk::Blocked(mut frames, p) => {
                frames.push(frame());
                Walk::Blocked(frames, p)
            }
        }
    }

    fn is_value(&self) -> bool {
        matches!(self, Walk::Value)
    }
}

fn walk(e: &Expr, sig: &Signature) -> Result<Walk, RuntimeError> {
    match &e.kind {
        ExprKind::ResConst(_)
        | ExprKind::Int(_)
        | ExprKind::Bool(_)
        | ExprKind::Unit
        | ExprKind::Lam(..)
        | ExprKind::Var(_) => Ok(Walk::Value),
        ExprKind::FixVar(x) => Err(RuntimeError::Stuck {
            detail: format!("free fix-variable `{x}` at runtime"),
        }),
        ExprKind::Pair(a, b) => {
            let wa = walk(a, sig)?;
            if !wa.is_value() {
                return Ok(wa.push(|| Frame::PairLeft {
                    right: (**b).clone(),
                }));
            }
            let wb = walk(b, sig)?;
            if !wb.is_value() {
                return Ok(wb.push(|| Frame::PairRight {
                    left: (**a).clone(),
                }));
            }
            Ok(Walk::Value)
        }
        ExprKind::Fst(inner) => {
            let w = walk(inner, sig)?;
            if !w.is_value() {
                return Ok(w.push(|| Frame::FstF));
            }
            Ok(Walk::Redex(Vec::new(), Redex::Pure(e.clone())))
        }
        ExprKind::Snd(inner) => {
            let w = walk(inner, sig)?;
            if !w.is_value() {
                return Ok(w.push(|| Frame::SndF));
            }
            Ok(Walk::Redex(Vec::new(), Redex::Pure(e.clone())))
        }
        ExprKind::If(c, t, f) => {
            let w = walk(c, sig)?;
            if !w.is_value() {
                return Ok(w.push(|| Frame::IfCond {
                    then_e: (**t).clone(),
                    else_e: (**f).clone(),
                }));
            }
            Ok(Walk::Redex(Vec::new(), Redex::Pure(e.clone())))
        }
        ExprKind::LetPair(x1, x2, rhs, body) => {
            let w = walk(rhs, sig)?;
            if !w.is_value() {
                return Ok(w.push(|| Frame::LetPairRhs {
                    x1: x1.clone(),
                    x2: x2.clone(),
                    body: (**body).clone(),
                }));
            }
            Ok(Walk::Redex(Vec::new(), Redex::Pure(e.clone())))
        }
        ExprKind::Let(binder, rhs, body) => {
            let w = walk(rhs, sig)?;
            if !w.is_value() {
                return Ok(w.push(|| Frame::LetRhs {
                    binder: binder.clone(),
                    body: (**body).clone(),
                }));
            }
            Ok(Walk::Redex(Vec::new(), Redex::Pure(e.clone())))
        }
        ExprKind::App(f, a) => {
            let wf = walk(f, sig)?;
            if !wf.is_value() {
                return Ok(wf.push(|| Frame::AppFun { arg: (**a).clone() }));
            }
            let wa = walk(a, sig)?;
            if !wa.is_value() {
                return Ok(wa.push(|| Frame::AppArg { fun: (**f).clone() }));
            }
            Ok(Walk::Redex(Vec::new(), Redex::Pure(e.clone())))
        }
        ExprKind::Fix(..) => Ok(Walk::Redex(Vec::new(), Redex::Pure(e.clone()))),
        ExprKind::Case(scrut, arms) => {
            let w = walk(scrut, sig)?;
            if !w.is_value() {
                return Ok(w.push(|| Frame::CaseScrut { arms: arms.clone() }));
            }
            let ep = endpoint_of(scrut)?;
            Ok(Walk::Blocked(
                Vec::new(),
                PartialRedex::CaseWait {
                    ep,
                    arms: arms.clone(),
                },
            ))
        }
        ExprKind::ConstApp(name, args) => {
            for (i, a) in args.iter().enumerate() {
                let w = walk(a, sig)?;
                if !w.is_value() {
                    return Ok(w.push(|| Frame::ConstArg {
                        name: name.clone(),
                        done: args[..i].to_vec(),
                        rest: args[i + 1..].to_vec(),
                    }));
                }
            }
            if crate::ast::is_constructor_const(name) {
                return Ok(Walk::Value);
            }
            match classify_const(Vec::new(), name.clone(), args.clone(), sig)? {
                Decomposition::Redex(_, r) => Ok(Walk::Redex(Vec::new(), r)),
                Decomposition::Blocked(_, p) => Ok(Walk::Blocked(Vec::new(), p)),
                Decomposition::Value => Ok(Walk::Value),
            }
        }
    }
}

fn classify_const(
    frames: Vec<Frame>,
    name: String,
    mut args: Vec<Expr>,
    sig: &Signature,
) -> Result<Decomposition, RuntimeError> {
    let ctx = EvalContext { frames };
    let blocked = |ctx, p| Ok(Decomposition::Blocked(ctx, p));
    match name.as_str() {
        "close" | "channeg_close" => {
            let ep = endpoint_of(&args[0])?;
            blocked(ctx, PartialRedex::Close { ep })
        }
        "send" | "channeg_recv" => {
            let value = args.pop().expect("two args");
            let ep = endpoint_of(&args[0])?;
            blocked(ctx, PartialRedex::Give { ep, value })
        }
        "recv" | "channeg_send" => {
            let ep = endpoint_of(&args[0])?;
            blocked(ctx, PartialRedex::Take { ep })
        }
        "chposneg_link" => {
            let pos = endpoint_of(&args[0])?;
            let neg = endpoint_of(&args[1])?;
            if pos.pol != Polarity::Pos || neg.pol != Polarity::Neg {
                return Err(RuntimeError::internal("link endpoints have wrong polarity"));
            }
            if pos.id == neg.id {
                return Err(RuntimeError::internal(
                    "link applied to the two ends of one channel",
                ));
            }
            blocked(ctx, PartialRedex::Link { pos, neg })
        }
        "thread_create" => Ok(Decomposition::Redex(
            ctx,
            Redex::Spawn {
                fun: args.pop().expect("one arg"),
            },
        )),
        "chneg_create" => Ok(Decomposition::Redex(
            ctx,
            Redex::NewChannel {
                fun: args.pop().expect("one arg"),
            },
        )),
        "chneg_create2" => Ok(Decomposition::Redex(
            ctx,
            Redex::NewChannelPair {
                fun: args.pop().expect("one arg"),
            },
        )),
        "service_request" => Ok(Decomposition::Redex(
            ctx,
            Redex::RequestService {
                service: args.pop().expect("one arg"),
            },
        )),
        _ if ADHOC_CONSTS.contains(&name.as_str()) => {
            Ok(Decomposition::Redex(ctx, Redex::AdHoc { name, args }))
        }
        _ => {
            if let Some(sel) = sig.selector(&name) {
                let ep = endpoint_of(&args[0])?;
                return blocked(
                    ctx,
                    PartialRedex::Select {
                        ep,
                        def: sel.def.clone(),
                        tag: sel.tag.clone(),
                        tag_index: sel.tag_index,
                    },
                );
            }
            Err(RuntimeError::Stuck {
                detail: format!("constant `{name}` has no reduction rule"),
            })
        }
    }
}

// ---------------------------------------------------------------------
// reduction
// ---------------------------------------------------------------------

/// Reduce a pure redex to its reduct.
pub fn reduce_pure(e: &Expr) -> Result<Expr, RuntimeError> {
    let stuck = |detail: String| Err(RuntimeError::Stuck { detail });
    match &e.kind {
        ExprKind::If(c, t, f) => match c.kind {
            ExprKind::Bool(true) => Ok((**t).clone()),
            ExprKind::Bool(false) => Ok((**f).clone()),
            _ => stuck("if on a non-boolean".to_string()),
        },
        ExprKind::Fst(p) => match &p.kind {
            ExprKind::Pair(a, _) => Ok((**a).clone()),
            _ => stuck("fst of a non-pair".to_string()),
        },
        ExprKind::Snd(p) => match &p.kind {
            ExprKind::Pair(_, b) => Ok((**b).clone()),
            _ => stuck("snd of a non-pair".to_string()),
        },
        ExprKind::LetPair(x1, x2, rhs, body) => match &rhs.kind {
            ExprKind::Pair(a, b) => {
                let mut theta = BTreeMap::new();
                theta.insert(x1.clone(), (**a).clone());
                theta.insert(x2.clone(), (**b).clone());
                Ok(body.subst(&theta))
            }
            _ => stuck("let-pair of a non-pair".to_string()),
        },
        ExprKind::Let(binder, rhs, body) => match binder {
            LetBinder::Unit => Ok((**body).clone()),
            LetBinder::Name(x) => {
                let mut theta = BTreeMap::new();
                theta.insert(x.clone(), (**rhs).clone());
                Ok(body.subst(&theta))
            }
        },
        ExprKind::App(f, a) => match &f.kind {
            ExprKind::Lam(_, x, _, body) => {
                let mut theta = BTreeMap::new();
                theta.insert(x.clone(), (**a).clone());
                Ok(body.subst(&theta))
            }
            _ => stuck("application of a non-function value".to_string()),
        },
        ExprKind::Fix(f, _, v) => {
            let mut theta = BTreeMap::new();
            theta.insert(f.clone(), e.clone());
            Ok(v.subst(&theta))
        }
        other => stuck(format!("not a pure redex: {other:?}")),
    }
}

/// Reduce an ad-hoc redex (arithmetic, comparison, random bit).
pub fn reduce_adhoc(name: &str, args: &[Expr], rng: &mut ChaCha8Rng) -> Result<Expr, RuntimeError> {
    let int = |e: &Expr| match e.kind {
        ExprKind::Int(n) => Ok(n),
        _ => Err(RuntimeError::Undefined {
            detail: format!("`{name}` expects integers"),
        }),
    };
    match name {
        "randbit" => Ok(Expr::int(rng.gen_range(0..=1))),
        "add" => Ok(Expr::int(int(&args[0])?.wrapping_add(int(&args[1])?))),
        "sub" => Ok(Expr::int(int(&args[0])?.wrapping_sub(int(&args[1])?))),
        "mul" => Ok(Expr::int(int(&args[0])?.wrapping_mul(int(&args[1])?))),
        "div" => int(&args[0])?
            .checked_div(int(&args[1])?)
            .map(Expr::int)
            .ok_or(RuntimeError::Undefined {
                detail: "division by zero".to_string(),
            }),
        "mod" => int(&args[0])?
            .checked_rem(int(&args[1])?)
            .map(Expr::int)
            .ok_or(RuntimeError::Undefined {
                detail: "modulo by zero".to_string(),
            }),
        "lt" => Ok(Expr::boolean(int(&args[0])? < int(&args[1])?)),
        "le" => Ok(Expr::boolean(int(&args[0])? <= int(&args[1])?)),
        "gt" => Ok(Expr::boolean(int(&args[0])? > int(&args[1])?)),
        "ge" => Ok(Expr::boolean(int(&args[0])? >= int(&args[1])?)),
        "eq" => Ok(Expr::boolean(int(&args[0])? == int(&args[1])?)),
        "ne" => Ok(Expr::boolean(int(&args[0])? != int(&args[1])?)),
        _ => Err(RuntimeError::Undefined {
            detail: format!("`{name}` is not an ad-hoc constant"),
        }),
    }
}

// ---------------------------------------------------------------------
// enabled steps
// ---------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum StepInstance {
    /// PR0: a pure or ad-hoc reduction inside one thread.
    Local { tid: u64 },
    /// PR1: thread creation.
    Spawn { tid: u64 },
    /// PR2: a finished non-main thread disappears.
    Exit { tid: u64 },
    /// PR3: channel creation.
    NewChannel { tid: u64 },
    /// PR3 via a service value.
    RequestService { tid: u64 },
    /// The unsafe two-channel creation.
    NewChannelPair { tid: u64 },
    /// A rendezvous, possibly across a chain of forwarders.
    Comm(CommInstance),
}

#[derive(Clone, Debug, PartialEq)]
pub enum CommKind {
    Close,
    Value,
    Tag { tag_index: usize, tag: String },
}

#[derive(Clone, Debug)]
pub struct CommInstance {
    pub kind: CommKind,
    /// Giver / selector side for value and tag transfers.
    pub from: (u64, Endpoint),
    /// Taker / dispatcher side.
    pub to: (u64, Endpoint),
    pub linkers: Vec<u64>,
    /// Channel ids crossed, from the `from` side to the `to` side.
    pub chain: Vec<u64>,
}

impl StepInstance {
    pub fn tids(&self) -> Vec<u64> {
        match self {
            StepInstance::Local { tid }
            | StepInstance::Spawn { tid }
            | StepInstance::Exit { tid }
            | StepInstance::NewChannel { tid }
            | StepInstance::RequestService { tid }
            | StepInstance::NewChannelPair { tid } => vec![*tid],
            StepInstance::Comm(c) => {
                let mut t = vec![c.from.0];
                t.extend(&c.linkers);
                t.push(c.to.0);
                t
            }
        }
    }

    fn order_key(&self) -> (u8, Vec<u64>, u64) {
        match self {
            StepInstance::Local { tid } => (0, vec![*tid], 0),
            StepInstance::Spawn { tid } => (1, vec![*tid], 0),
            StepInstance::NewChannel { tid } => (2, vec![*tid], 0),
            StepInstance::RequestService { tid } => (3, vec![*tid], 0),
            StepInstance::NewChannelPair { tid } => (4, vec![*tid], 0),
            StepInstance::Exit { tid } => (5, vec![*tid], 0),
            StepInstance::Comm(c) => (6, self.tids(), c.chain[0]),
        }
    }

    /// Communication steps are the ones an adversarial scheduler delays.
    pub fn is_comm(&self) -> bool {
        matches!(self, StepInstance::Comm(_))
    }
}

/// A thread's contribution to step enumeration: its decomposition with
/// the payloads stripped, cheap to recompute and to keep cached.
#[derive(Clone, Debug, PartialEq)]
pub enum ThreadStatus {
    FinishedUnit,
    FinishedOther,
    Local,
    Spawn,
    NewChannel,
    NewChannelPair,
    RequestService,
    Close {
        ep: Endpoint,
    },
    Give {
        ep: Endpoint,
    },
    Take {
        ep: Endpoint,
    },
    Select {
        ep: Endpoint,
        tag: String,
        tag_index: usize,
    },
    CaseWait {
        ep: Endpoint,
    },
    Link {
        pos: Endpoint,
        neg: Endpoint,
    },
}

/// Classify a thread without building evaluation contexts or cloning
/// subexpressions.
pub fn status_of(e: &Expr, sig: &Signature) -> Result<ThreadStatus, RuntimeError> {
    if let Some(found) = status_walk(e, sig)? {
        return Ok(found);
    }
    Ok(if matches!(e.kind, ExprKind::Unit) {
        ThreadStatus::FinishedUnit
    } else {
        ThreadStatus::FinishedOther
    })
}

/// `None` means the expression is a value.
fn status_walk(e: &Expr, sig: &Signature) -> Result<Option<ThreadStatus>, RuntimeError> {
    match &e.kind {
        ExprKind::ResConst(_)
        | ExprKind::Int(_)
        | ExprKind::Bool(_)
        | ExprKind::Unit
        | ExprKind::Lam(..)
        | ExprKind::Var(_) => Ok(None),
        ExprKind::FixVar(x) => Err(RuntimeError::Stuck {
            detail: format!("free fix-variable `{x}` at runtime"),
        }),
        ExprKind::Pair(a, b) => {
            if let Some(s) = status_walk(a, sig)? {
                return Ok(Some(s));
            }
            status_walk(b, sig)
        }
        ExprKind::Fst(inner) | ExprKind::Snd(inner) => {
            if let Some(s) = status_walk(inner, sig)? {
                return Ok(Some(s));
            }
            Ok(Some(ThreadStatus::Local))
        }
        ExprKind::If(c, ..) => {
            if let Some(s) = status_walk(c, sig)? {
                return Ok(Some(s));
            }
            Ok(Some(ThreadStatus::Local))
        }
        ExprKind::LetPair(_, _, rhs, _) | ExprKind::Let(_, rhs, _) => {
            if let Some(s) = status_walk(rhs, sig)? {
                return Ok(Some(s));
            }
            Ok(Some(ThreadStatus::Local))
        }
        ExprKind::App(f, a) => {
            if let Some(s) = status_walk(f, sig)? {
                return Ok(Some(s));
            }
            if let Some(s) = status_walk(a, sig)? {
                return Ok(Some(s));
            }
            Ok(Some(ThreadStatus::Local))
        }
        ExprKind::Fix(..) => Ok(Some(ThreadStatus::Local)),
        ExprKind::Case(scrut, _) => {
            if let Some(s) = status_walk(scrut, sig)? {
                return Ok(Some(s));
            }
            Ok(Some(ThreadStatus::CaseWait {
                ep: endpoint_of(scrut)?,
            }))
        }
        ExprKind::ConstApp(name, args) => {
            for a in args {
                if let Some(s) = status_walk(a, sig)? {
                    return Ok(Some(s));
                }
            }
            if crate::ast::is_constructor_const(name) {
                return Ok(None);
            }
            let st = match name.as_str() {
                "close" | "channeg_close" => ThreadStatus::Close {
                    ep: endpoint_of(&args[0])?,
                },
                "send" | "channeg_recv" => ThreadStatus::Give {
                    ep: endpoint_of(&args[0])?,
                },
                "recv" | "channeg_send" => ThreadStatus::Take {
                    ep: endpoint_of(&args[0])?,
                },
                "chposneg_link" => ThreadStatus::Link {
                    pos: endpoint_of(&args[0])?,
                    neg: endpoint_of(&args[1])?,
                },
                "thread_create" => ThreadStatus::Spawn,
                "chneg_create" => ThreadStatus::NewChannel,
                "chneg_create2" => ThreadStatus::NewChannelPair,
                "service_request" => ThreadStatus::RequestService,
                _ if ADHOC_CONSTS.contains(&name.as_str()) => ThreadStatus::Local,
                _ => match sig.selector(name) {
                    Some(sel) => ThreadStatus::Select {
                        ep: endpoint_of(&args[0])?,
                        tag: sel.tag.clone(),
                        tag_index: sel.tag_index,
                    },
                    None => {
                        return Err(RuntimeError::Stuck {
                            detail: format!("constant `{name}` has no reduction rule"),
                        })
                    }
                },
            };
            Ok(Some(st))
        }
    }
}

enum BlockedRole<'a> {
    Terminal(&'a ThreadStatus),
    LinkSide { other: Endpoint },
}

/// Assemble rule instances from per-thread statuses (in tid order).
pub fn assemble_instances(statuses: &BTreeMap<u64, ThreadStatus>) -> Vec<StepInstance> {
    let mut out = Vec::new();
    let mut blocked_at: BTreeMap<Endpoint, (u64, BlockedRole)> = BTreeMap::new();
    let mut terminals: Vec<(Endpoint, u64)> = Vec::new();

    for (&tid, status) in statuses {
        match status {
            ThreadStatus::FinishedUnit => {
                if tid > 0 {
                    out.push(StepInstance::Exit { tid });
                }
            }
            ThreadStatus::FinishedOther => {}
            ThreadStatus::Local => out.push(StepInstance::Local { tid }),
            ThreadStatus::Spawn => out.push(StepInstance::Spawn { tid }),
            ThreadStatus::NewChannel => out.push(StepInstance::NewChannel { tid }),
            ThreadStatus::NewChannelPair => out.push(StepInstance::NewChannelPair { tid }),
            ThreadStatus::RequestService => out.push(StepInstance::RequestService { tid }),
            ThreadStatus::Link { pos, neg } => {
                blocked_at.insert(*pos, (tid, BlockedRole::LinkSide { other: *neg }));
                blocked_at.insert(*neg, (tid, BlockedRole::LinkSide { other: *pos }));
            }
            ThreadStatus::Close { ep }
            | ThreadStatus::Give { ep }
            | ThreadStatus::Take { ep }
            | ThreadStatus::Select { ep, .. }
            | ThreadStatus::CaseWait { ep } => {
                terminals.push((*ep, tid));
                blocked_at.insert(*ep, (tid, BlockedRole::Terminal(status)));
            }
        }
    }

    for &(start_ep, start_tid) in &terminals {
        if let Some((chain, linkers, far_ep, far_tid)) = walk_chain(&blocked_at, start_ep) {
            // each rendezvous is found from both ends; keep one
            if far_ep < start_ep {
                continue;
            }
            let start_p = match &blocked_at[&start_ep].1 {
                BlockedRole::Terminal(p) => *p,
                _ => unreachable!(),
            };
            let far_p = match &blocked_at[&far_ep].1 {
                BlockedRole::Terminal(p) => *p,
                _ => unreachable!(),
            };
            let fwd = |kind| CommInstance {
                kind,
                from: (start_tid, start_ep),
                to: (far_tid, far_ep),
                linkers: linkers.clone(),
                chain: chain.clone(),
            };
            let rev = |kind| CommInstance {
                kind,
                from: (far_tid, far_ep),
                to: (start_tid, start_ep),
                linkers: linkers.iter().rev().copied().collect(),
                chain: chain.iter().rev().copied().collect(),
            };
            let comm = match (start_p, far_p) {
                (ThreadStatus::Close { .. }, ThreadStatus::Close { .. }) => {
                    Some(fwd(CommKind::Close))
                }
                (ThreadStatus::Give { .. }, ThreadStatus::Take { .. }) => {
                    Some(fwd(CommKind::Value))
                }
                (ThreadStatus::Take { .. }, ThreadStatus::Give { .. }) => {
                    Some(rev(CommKind::Value))
                }
                (ThreadStatus::Select { tag, tag_index, .. }, ThreadStatus::CaseWait { .. }) => {
                    Some(fwd(CommKind::Tag {
                        tag_index: *tag_index,
                        tag: tag.clone(),
                    }))
                }
                (ThreadStatus::CaseWait { .. }, ThreadStatus::Select { tag, tag_index, .. }) => {
                    Some(rev(CommKind::Tag {
                        tag_index: *tag_index,
                        tag: tag.clone(),
                    }))
                }
                _ => None,
            };
            if let Some(c) = comm {
                out.push(StepInstance::Comm(c));
            }
        }
    }

    out.sort_by_key(|a| a.order_key());
    out
}

/// All rule instances applicable to the current pool.
pub fn enabled_steps(
    pool: &Pool,
    _store: &ChannelStore,
    sig: &Signature,
) -> Result<Vec<StepInstance>, RuntimeError> {
    let mut statuses = BTreeMap::new();
    for (&tid, expr) in &pool.threads {
        statuses.insert(tid, status_of(expr, sig)?);
    }
    Ok(assemble_instances(&statuses))
}

/// Follow forwarders from one blocked endpoint to the terminal on the far
/// side. Returns the chain of channel ids crossed (starting with
/// `start.id`), the forwarder tids, and the far terminal.
fn walk_chain(
    blocked_at: &BTreeMap<Endpoint, (u64, BlockedRole<'_>)>,
    start: Endpoint,
) -> Option<(Vec<u64>, Vec<u64>, Endpoint, u64)> {
    let mut chain = vec![start.id];
    let mut linkers = Vec::new();
    let mut visited = BTreeSet::new();
    let mut probe = start.dual();
    loop {
        if !visited.insert(probe) {
            return None; // forwarder cycle: nothing can move
        }
        let (tid, role) = blocked_at.get(&probe)?;
        match role {
            BlockedRole::Terminal(_) => return Some((chain, linkers, probe, *tid)),
            BlockedRole::LinkSide { other } => {
                linkers.push(*tid);
                chain.push(other.id);
                probe = other.dual();
            }
        }
    }
}

// ---------------------------------------------------------------------
// applying steps and tracing
// ---------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RuleTag {
    Pr0,
    Pr1,
    Pr2,
    Pr3,
    Pr4Clos,
    Pr4Send,
    Pr4Recv,
    LinkSend,
    LinkRecv,
    LinkClos,
}

impl fmt::Display for RuleTag {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        let s = match self {
            RuleTag::Pr0 => "PR0",
            RuleTag::Pr1 => "PR1",
            RuleTag::Pr2 => "PR2",
            RuleTag::Pr3 => "PR3",
            RuleTag::Pr4Clos => "PR4-clos",
            RuleTag::Pr4Send => "PR4-send",
            RuleTag::Pr4Recv => "PR4-recv",
            RuleTag::LinkSend => "LINK-SEND",
            RuleTag::LinkRecv => "LINK-RECV",
            RuleTag::LinkClos => "LINK-CLOS",
        };
        write!(f, "{s}")
    }
}

#[derive(Clone, Debug)]
pub struct TraceEvent {
    pub step: u64,
    pub rule: RuleTag,
    pub tids: Vec<u64>,
    pub chan: Option<u64>,
    pub chain: Vec<u64>,
    pub note: String,
    pub shape: StepShape,
    pub rch_summary: Option<String>,
}

impl TraceEvent {
    pub fn render(&self) -> String {
        let tids = self
            .tids
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let chan = match self.chan {
            Some(c) => c.to_string(),
            None => "-".to_string(),
        };
        let mut line = format!(
            "step={} rule={} tids={} chan={} note={}",
            self.step, self.rule, tids, chan, self.note
        );
        if let Some(rch) = &self.rch_summary {
            line.push_str(&format!(" rch={rch}"));
        }
        line
    }
}

fn compact_value(v: &Expr) -> String {
    match &v.kind {
        ExprKind::Int(n) => n.to_string(),
        ExprKind::Bool(b) => b.to_string(),
        ExprKind::Unit => "()".to_string(),
        ExprKind::ResConst(ep) => ep.to_string(),
        ExprKind::Pair(..) => "<pair>".to_string(),
        ExprKind::Lam(..) => "<fun>".to_string(),
        ExprKind::ConstApp(name, _) => format!("<{name}>"),
        _ => "<expr>".to_string(),
    }
}

/// Apply one enabled instance, rewriting the pool and store.
pub fn apply_step(
    pool: &mut Pool,
    store: &mut ChannelStore,
    env: &SessionEnv,
    sig: &Signature,
    rng: &mut ChaCha8Rng,
    instance: &StepInstance,
    step: u64,
) -> Result<TraceEvent, RuntimeError> {
    let ev = |rule, tids, chan: Option<u64>, chain: Vec<u64>, note: String, shape| TraceEvent {
        step,
        rule,
        tids,
        chan,
        chain,
        note,
        shape,
        rch_summary: None,
    };
    match instance {
        StepInstance::Local { tid } => {
            let expr = pool.threads.get(tid).expect("tid live").clone();
            let (ctx, redex) = match decompose(&expr, sig)? {
                Decomposition::Redex(ctx, r) => (ctx, r),
                _ => return Err(RuntimeError::internal("stale local instance")),
            };
            let (reduct, note) = match redex {
                Redex::Pure(r) => (reduce_pure(&r)?, "pure".to_string()),
                Redex::AdHoc { name, args } => (reduce_adhoc(&name, &args, rng)?, name.clone()),
                _ => return Err(RuntimeError::internal("stale local instance")),
            };
            pool.threads.insert(*tid, ctx.plug(reduct));
            Ok(ev(
                RuleTag::Pr0,
                vec![*tid],
                None,
                vec![],
                note,
                StepShape::Local,
            ))
        }
        StepInstance::Spawn { tid } => {
            let expr = pool.threads.get(tid).expect("tid live").clone();
            let (ctx, fun) = match decompose(&expr, sig)? {
                Decomposition::Redex(ctx, Redex::Spawn { fun }) => (ctx, fun),
                _ => return Err(RuntimeError::internal("stale spawn instance")),
            };
            pool.threads.insert(*tid, ctx.plug(Expr::unit()));
            let new_tid = pool.spawn(Expr::app(fun, Expr::unit()));
            Ok(ev(
                RuleTag::Pr1,
                vec![*tid, new_tid],
                None,
                vec![],
                format!("spawned tid {new_tid}"),
                StepShape::Split,
            ))
        }
        StepInstance::Exit { tid } => {
            pool.threads.remove(tid);
            Ok(ev(
                RuleTag::Pr2,
                vec![*tid],
                None,
                vec![],
                "thread finished".to_string(),
                StepShape::Exit,
            ))
        }
        StepInstance::NewChannel { tid } | StepInstance::RequestService { tid } => {
            let expr = pool.threads.get(tid).expect("tid live").clone();
            let (ctx, fun, via_service) = match decompose(&expr, sig)? {
                Decomposition::Redex(ctx, Redex::NewChannel { fun }) => (ctx, fun, false),
                Decomposition::Redex(ctx, Redex::RequestService { service }) => {
                    let fun = match &service.kind {
                        ExprKind::ConstApp(name, args) if name == "service_create" => {
                            args[0].clone()
                        }
                        _ => {
                            return Err(RuntimeError::internal(
                                "service value has unexpected shape",
                            ))
                        }
                    };
                    (ctx, fun, true)
                }
                _ => return Err(RuntimeError::internal("stale channel-creation instance")),
            };
            let sess = match &fun.kind {
                ExprKind::Lam(_, _, ViewType::ChPos(s), _) => s.clone(),
                _ => {
                    return Err(RuntimeError::internal(
                        "channel creation needs a lambda over a positive channel",
                    ))
                }
            };
            let id = store.create(sess);
            pool.threads
                .insert(*tid, ctx.plug(Expr::res(Endpoint::neg(id))));
            let new_tid = pool.spawn(Expr::app(fun, Expr::res(Endpoint::pos(id))));
            let note = if via_service {
                format!("service request, spawned tid {new_tid}")
            } else {
                format!("spawned tid {new_tid}")
            };
            Ok(ev(
                RuleTag::Pr3,
                vec![*tid, new_tid],
                Some(id),
                vec![id],
                note,
                StepShape::NewChannel { id },
            ))
        }
        StepInstance::NewChannelPair { tid } => {
            let expr = pool.threads.get(tid).expect("tid live").clone();
            let (ctx, fun) = match decompose(&expr, sig)? {
                Decomposition::Redex(ctx, Redex::NewChannelPair { fun }) => (ctx, fun),
                _ => return Err(RuntimeError::internal("stale create2 instance")),
            };
            let (s1, s2) = match &fun.kind {
                ExprKind::Lam(_, _, ViewType::Prod(a, b), _) => match (&**a, &**b) {
                    (ViewType::ChPos(s1), ViewType::ChPos(s2)) => (s1.clone(), s2.clone()),
                    _ => {
                        return Err(RuntimeError::internal(
                            "create2 needs a lambda over two positive channels",
                        ))
                    }
                },
                _ => {
                    return Err(RuntimeError::internal(
                        "create2 needs a lambda over two positive channels",
                    ))
                }
            };
            let id1 = store.create(s1);
            let id2 = store.create(s2);
            pool.threads.insert(
                *tid,
                ctx.plug(Expr::pair(
                    Expr::res(Endpoint::neg(id1)),
                    Expr::res(Endpoint::neg(id2)),
                )),
            );
            let new_tid = pool.spawn(Expr::app(
                fun,
                Expr::pair(Expr::res(Endpoint::pos(id1)), Expr::res(Endpoint::pos(id2))),
            ));
            Ok(ev(
                RuleTag::Pr3,
                vec![*tid, new_tid],
                Some(id1),
                vec![id1, id2],
                format!("create2, spawned tid {new_tid}"),
                StepShape::NewChannelPair { id1, id2 },
            ))
        }
        StepInstance::Comm(c) => apply_comm(pool, store, env, sig, c, step),
    }
}

fn blocked_parts(
    pool: &Pool,
    sig: &Signature,
    tid: u64,
) -> Result<(EvalContext, PartialRedex), RuntimeError> {
    let expr = pool.threads.get(&tid).expect("tid live");
    match decompose(expr, sig)? {
        Decomposition::Blocked(ctx, p) => Ok((ctx, p)),
        _ => Err(RuntimeError::internal("stale communication instance")),
    }
}

fn apply_comm(
    pool: &mut Pool,
    store: &mut ChannelStore,
    env: &SessionEnv,
    sig: &Signature,
    c: &CommInstance,
    step: u64,
) -> Result<TraceEvent, RuntimeError> {
    let (from_ctx, from_p) = blocked_parts(pool, sig, c.from.0)?;
    let (to_ctx, to_p) = blocked_parts(pool, sig, c.to.0)?;
    let linked = !c.linkers.is_empty();
    let (rule, note) = match (&c.kind, &from_p) {
        (CommKind::Close, _) => (
            if linked {
                RuleTag::LinkClos
            } else {
                RuleTag::Pr4Clos
            },
            "close handshake".to_string(),
        ),
        (CommKind::Value, PartialRedex::Give { ep, value }) => {
            let tag = match (ep.pol, linked) {
                (Polarity::Pos, false) => RuleTag::Pr4Send,
                (Polarity::Neg, false) => RuleTag::Pr4Recv,
                (Polarity::Pos, true) => RuleTag::LinkSend,
                (Polarity::Neg, true) => RuleTag::LinkRecv,
            };
            (tag, format!("value={}", compact_value(value)))
        }
        (CommKind::Tag { tag, .. }, PartialRedex::Select { ep, .. }) => {
            let t = match (ep.pol, linked) {
                (Polarity::Pos, false) => RuleTag::Pr4Send,
                (Polarity::Neg, false) => RuleTag::Pr4Recv,
                (Polarity::Pos, true) => RuleTag::LinkSend,
                (Polarity::Neg, true) => RuleTag::LinkRecv,
            };
            (t, format!("tag={tag}"))
        }
        _ => return Err(RuntimeError::internal("stale communication instance")),
    };
    match (&c.kind, from_p, to_p) {
        (CommKind::Close, PartialRedex::Close { .. }, PartialRedex::Close { .. }) => {
            pool.threads.insert(c.from.0, from_ctx.plug(Expr::unit()));
            pool.threads.insert(c.to.0, to_ctx.plug(Expr::unit()));
            for &ltid in &c.linkers {
                let (lctx, _) = blocked_parts(pool, sig, ltid)?;
                pool.threads.insert(ltid, lctx.plug(Expr::unit()));
            }
            for id in &c.chain {
                store.remove(*id);
            }
        }
        (
            CommKind::Value,
            PartialRedex::Give { ep: from_ep, value },
            PartialRedex::Take { ep: to_ep },
        ) => {
            pool.threads
                .insert(c.from.0, from_ctx.plug(Expr::res(from_ep)));
            pool.threads
                .insert(c.to.0, to_ctx.plug(Expr::pair(Expr::res(to_ep), value)));
            for id in &c.chain {
                store.advance_value(*id, env)?;
            }
        }
        (
            CommKind::Tag { tag_index, tag },
            PartialRedex::Select { ep: from_ep, .. },
            PartialRedex::CaseWait { ep: to_ep, arms },
        ) => {
            let arm = arms
                .iter()
                .find(|a| &a.tag == tag)
                .ok_or_else(|| RuntimeError::internal(format!("case lacks arm `{tag}`")))?;
            let mut theta = BTreeMap::new();
            theta.insert(arm.var.clone(), Expr::res(to_ep));
            let body = arm.body.subst(&theta);
            pool.threads
                .insert(c.from.0, from_ctx.plug(Expr::res(from_ep)));
            pool.threads.insert(c.to.0, to_ctx.plug(body));
            for id in &c.chain {
                store.advance_tag(*id, *tag_index, env)?;
            }
        }
        _ => return Err(RuntimeError::internal("mismatched communication parts")),
    }
    let shape = match c.kind {
        CommKind::Close => StepShape::CloseChain {
            ids: c.chain.clone(),
        },
        _ => StepShape::Transfer {
            ids: c.chain.clone(),
        },
    };
    let mut tids = vec![c.from.0];
    tids.extend(&c.linkers);
    tids.push(c.to.0);
    Ok(TraceEvent {
        step,
        rule,
        tids,
        chan: Some(c.chain[0]),
        chain: c.chain.clone(),
        note,
        shape,
        rch_summary: None,
    })
}

// ---------------------------------------------------------------------
// the scheduler and run loop
// ---------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    Random,
    RoundRobin,
    Adversarial,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            Policy::Random => write!(f, "random"),
            Policy::RoundRobin => write!(f, "rr"),
            Policy::Adversarial => write!(f, "adversarial"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SchedulerConfig {
    pub seed: u64,
    pub step_limit: u64,
    pub policy: Policy,
    pub record_trace: bool,
}

impl Default for SchedulerConfig {
    fn default() -> SchedulerConfig {
        SchedulerConfig {
            seed: 0,
            step_limit: 1_000_000,
            policy: Policy::Random,
            record_trace: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MonitorConfig {
    /// Re-typecheck rewritten threads after every step.
    pub types: bool,
    /// Check regularity and DF-reducibility of the channel sets after
    /// every step, including the per-rule shape laws.
    pub df: bool,
    /// Audit head-constructor/type agreement and value purity for
    /// transferred and final values.
    pub canonical: bool,
}

impl MonitorConfig {
    pub fn all() -> MonitorConfig {
        MonitorConfig {
            types: true,
            df: true,
            canonical: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DeadlockWitness {
    /// Each blocked thread with a description of its partial redex.
    pub blocked: Vec<(u64, String)>,
    /// Wait edges: thread, channel id, thread holding the dual endpoint.
    pub waits: Vec<(u64, u64, Option<u64>)>,
}

impl fmt::Display for DeadlockWitness {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        for (tid, what) in &self.blocked {
            writeln!(f, "  tid {tid}: {what}")?;
        }
        for (tid, chan, holder) in &self.waits {
            match holder {
                Some(h) => writeln!(f, "  tid {tid} waits on channel {chan} held by tid {h}")?,
                None => writeln!(
                    f,
                    "  tid {tid} waits on channel {chan} (dual endpoint inert)"
                )?,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Outcome {
    FinalValue {
        value: Expr,
        /// Threads still blocked when the main thread finished; nonzero
        /// only when the value carries channels.
        blocked_threads: usize,
        value_has_channels: bool,
    },
    Deadlock(DeadlockWitness),
    StepLimit,
    MonitorViolation {
        step: u64,
        detail: String,
    },
}

impl Outcome {
    pub fn kind(&self) -> &'static str {
        match self {
            Outcome::FinalValue { .. } => "final",
            Outcome::Deadlock(_) => "deadlock",
            Outcome::StepLimit => "step-limit",
            Outcome::MonitorViolation { .. } => "monitor-violation",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::FinalValue { .. } => 0,
            Outcome::Deadlock(_) => 2,
            Outcome::StepLimit => 3,
            Outcome::MonitorViolation { .. } => 4,
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub outcome: Outcome,
    pub steps: u64,
    pub trace: Vec<TraceEvent>,
    /// Channels still live at the end of the run.
    pub live_channels: usize,
}

/// Run a checked program to completion under the given scheduler.
pub fn run(
    checked: &CheckedProgram,
    sig: &Signature,
    cfg: &SchedulerConfig,
    mon: &MonitorConfig,
) -> Result<RunReport, RuntimeError> {
    let env = &checked.env;
    let mut pool = Pool::new(checked.main.clone());
    let mut store = ChannelStore::new();
    let mut sched_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adhoc_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut trace = Vec::new();
    let mut steps = 0u64;
    let mut rr_cursor = 0u64;
    // per-thread caches, refreshed only for threads a step rewrites
    let mut statuses: BTreeMap<u64, ThreadStatus> = BTreeMap::new();
    let mut rch_sets: BTreeMap<u64, dfcheck::ChannelSet> = BTreeMap::new();
    for (&tid, e) in &pool.threads {
        statuses.insert(tid, status_of(e, sig)?);
        rch_sets.insert(tid, e.resources().as_set());
    }
    let collection = |sets: &BTreeMap<u64, dfcheck::ChannelSet>| {
        Collection::new(sets.values().cloned().collect())
    };
    let mut prev_rch = collection(&rch_sets);

    loop {
        if pool.is_final() {
            let value = pool.main().clone();
            if mon.canonical {
                if let Err(d) = audit_value(&store, env, sig, &value, &checked.main_type) {
                    return Ok(report(
                        Outcome::MonitorViolation {
                            step: steps,
                            detail: d,
                        },
                        steps,
                        trace,
                        &store,
                    ));
                }
            }
            let has_channels = !value.resources().is_empty();
            return Ok(report(
                Outcome::FinalValue {
                    value,
                    blocked_threads: 0,
                    value_has_channels: has_channels,
                },
                steps,
                trace,
                &store,
            ));
        }
        let enabled = assemble_instances(&statuses);
        if enabled.is_empty() {
            let outcome = stuck_outcome(&pool, sig)?;
            return Ok(report(outcome, steps, trace, &store));
        }
        if steps >= cfg.step_limit {
            return Ok(report(Outcome::StepLimit, steps, trace, &store));
        }
        let choice = pick(&enabled, cfg.policy, &mut sched_rng, &mut rr_cursor);
        let instance = &enabled[choice];
        if mon.canonical {
            if let Err(d) = audit_transfer(&pool, &store, env, sig, instance) {
                return Ok(report(
                    Outcome::MonitorViolation {
                        step: steps,
                        detail: d,
                    },
                    steps,
                    trace,
                    &store,
                ));
            }
        }
        let mut event = apply_step(
            &mut pool,
            &mut store,
            env,
            sig,
            &mut adhoc_rng,
            instance,
            steps,
        )?;
        steps += 1;
        for tid in &event.tids {
            match pool.threads.get(tid) {
                Some(e) => {
                    statuses.insert(*tid, status_of(e, sig)?);
                    rch_sets.insert(*tid, e.resources().as_set());
                }
                None => {
                    statuses.remove(tid);
                    rch_sets.remove(tid);
                }
            }
        }

        if mon.df {
            let next_rch = collection(&rch_sets);
            event.rch_summary = Some(next_rch.to_string());
            if let Err(v) = dfcheck::monitor_step(&prev_rch, &event.shape, &next_rch) {
                if cfg.record_trace {
                    trace.push(event);
                }
                return Ok(report(
                    Outcome::MonitorViolation {
                        step: steps - 1,
                        detail: v.to_string(),
                    },
                    steps,
                    trace,
                    &store,
                ));
            }
            prev_rch = next_rch;
        }
        if mon.types {
            if let Err(d) = check_step_types(
                &pool,
                &store,
                env,
                sig,
                &event,
                &rch_sets,
                &checked.main_type,
            ) {
                if cfg.record_trace {
                    trace.push(event);
                }
                return Ok(report(
                    Outcome::MonitorViolation {
                        step: steps - 1,
                        detail: d,
                    },
                    steps,
                    trace,
                    &store,
                ));
            }
        }
        if cfg.record_trace {
            trace.push(event);
        }
    }
}

fn report(outcome: Outcome, steps: u64, trace: Vec<TraceEvent>, store: &ChannelStore) -> RunReport {
    RunReport {
        outcome,
        steps,
        trace,
        live_channels: store.chans.len(),
    }
}

fn pick(
    enabled: &[StepInstance],
    policy: Policy,
    rng: &mut ChaCha8Rng,
    rr_cursor: &mut u64,
) -> usize {
    match policy {
        Policy::Random => rng.gen_range(0..enabled.len()),
        Policy::RoundRobin => {
            // the instance whose first thread is the next at or after the
            // cursor, wrapping around
            let key = |inst: &StepInstance| {
                let t = *inst.tids().first().unwrap_or(&0);
                (t < *rr_cursor, t)
            };
            let mut best = 0;
            for i in 1..enabled.len() {
                if key(&enabled[i]) < key(&enabled[best]) {
                    best = i;
                }
            }
            *rr_cursor = enabled[best].tids().first().copied().unwrap_or(0) + 1;
            best
        }
        Policy::Adversarial => {
            // starve communication for as long as anything else can move
            let non_comm: Vec<usize> = enabled
                .iter()
                .enumerate()
                .filter(|(_, s)| !s.is_comm())
                .map(|(i, _)| i)
                .collect();
            if non_comm.is_empty() {
                rng.gen_range(0..enabled.len())
            } else {
                non_comm[rng.gen_range(0..non_comm.len())]
            }
        }
    }
}

fn stuck_outcome(pool: &Pool, sig: &Signature) -> Result<Outcome, RuntimeError> {
    // main finished with a channel-carrying value: not a deadlock
    if pool.main().is_value() {
        let value = pool.main().clone();
        let has_channels = !value.resources().is_empty();
        if has_channels {
            return Ok(Outcome::FinalValue {
                blocked_threads: pool.threads.len() - 1,
                value_has_channels: true,
                value,
            });
        }
    }
    let mut blocked = Vec::new();
    let mut waits = Vec::new();
    for (&tid, expr) in &pool.threads {
        match decompose(expr, sig)? {
            Decomposition::Blocked(_, p) => {
                blocked.push((tid, p.describe()));
                let eps: Vec<Endpoint> = match &p {
                    PartialRedex::Close { ep }
                    | PartialRedex::Give { ep, .. }
                    | PartialRedex::Take { ep }
                    | PartialRedex::Select { ep, .. }
                    | PartialRedex::CaseWait { ep, .. } => vec![*ep],
                    PartialRedex::Link { pos, neg } => vec![*pos, *neg],
                };
                for ep in eps {
                    let holder = pool
                        .threads
                        .iter()
                        .find(|(_, e)| e.resources().contains(ep.dual()))
                        .map(|(t, _)| *t);
                    waits.push((tid, ep.id, holder));
                }
            }
            Decomposition::Value => blocked.push((tid, "finished".to_string())),
            Decomposition::Redex(..) => {
                return Err(RuntimeError::internal(
                    "no enabled steps but a thread holds a redex",
                ))
            }
        }
    }
    Ok(Outcome::Deadlock(DeadlockWitness { blocked, waits }))
}

/// Subject-reduction monitor: every thread rewritten by the step must
/// still typecheck at its previous type (main keeps the program type,
/// other threads are unit), and the pool must stay regular.
fn check_step_types(
    pool: &Pool,
    store: &ChannelStore,
    env: &SessionEnv,
    sig: &Signature,
    event: &TraceEvent,
    rch_sets: &BTreeMap<u64, dfcheck::ChannelSet>,
    main_type: &ViewType,
) -> Result<(), String> {
    let mut checker = Checker::new(env, sig);
    checker.res_types = store.resource_types();
    for tid in &event.tids {
        let Some(expr) = pool.threads.get(tid) else {
            continue; // exited
        };
        let ty = checker
            .check_closed(expr)
            .map_err(|d| format!("tid {tid} no longer typechecks: {d}"))?;
        let want = if *tid == 0 {
            main_type.clone()
        } else {
            ViewType::Unit
        };
        if !session::viewtype_eq(&ty, &want, env) {
            return Err(format!(
                "subject reduction violated: tid {tid} has type {ty}, expected {want}"
            ));
        }
        // only a rewritten thread can newly duplicate an endpoint
        let rho = expr.resources();
        if !rho.is_duplicate_free() {
            return Err(format!("tid {tid} holds a duplicated endpoint: {rho}"));
        }
    }
    // regularity of the whole pool, over the cached per-thread sets:
    // every endpoint at most once, live in the store, dual live with it
    let mut seen: BTreeSet<Endpoint> = BTreeSet::new();
    for (tid, set) in rch_sets {
        for ep in set {
            if !seen.insert(*ep) {
                return Err(format!("endpoint {ep} occurs in two threads (tid {tid})"));
            }
            if !store.chans.contains_key(&ep.id) {
                return Err(format!("endpoint {ep} is not in the channel store"));
            }
        }
    }
    for ep in &seen {
        if !seen.contains(&ep.dual()) {
            return Err(format!("endpoint {ep} is live but its dual is not"));
        }
    }
    for id in store.chans.keys() {
        if !seen.contains(&Endpoint::pos(*id)) {
            return Err(format!("channel {id} is in the store but not in the pool"));
        }
    }
    Ok(())
}

/// Canonical-form and purity audit for a value about to cross a channel:
/// synthesize its type independently, require head-constructor agreement,
/// and require emptiness of resources when the type is nonlinear.
fn audit_transfer(
    pool: &Pool,
    store: &ChannelStore,
    env: &SessionEnv,
    sig: &Signature,
    instance: &StepInstance,
) -> Result<(), String> {
    let StepInstance::Comm(c) = instance else {
        return Ok(());
    };
    if c.kind != CommKind::Value {
        return Ok(());
    }
    let expr = pool.threads.get(&c.from.0).expect("giver live");
    let value = match decompose(expr, sig) {
        Ok(Decomposition::Blocked(_, PartialRedex::Give { value, .. })) => value,
        _ => return Err("giver thread lost its partial redex".to_string()),
    };
    let mut checker = Checker::new(env, sig);
    checker.res_types = store.resource_types();
    let ty = checker
        .check_closed(&value)
        .map_err(|d| format!("transferred value does not typecheck: {d}"))?;
    if !canonical_agrees(&value, &ty) {
        return Err(format!(
            "canonical forms violated: transferred value does not match its type {ty}"
        ));
    }
    typecheck::check_value_purity(&value, &ty).map_err(|d| d.to_string())
}

fn audit_value(
    store: &ChannelStore,
    env: &SessionEnv,
    sig: &Signature,
    value: &Expr,
    ty: &ViewType,
) -> Result<(), String> {
    let mut checker = Checker::new(env, sig);
    checker.res_types = store.resource_types();
    if !canonical_agrees(value, ty) {
        return Err(format!(
            "canonical forms violated: value does not match type {ty}"
        ));
    }
    typecheck::check_value_purity(value, ty).map_err(|d| d.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Linearity;
    use crate::parser::parse;
    use crate::typecheck::{check_pool, check_program};

    fn empty_sig() -> (SessionEnv, Signature) {
        let env = SessionEnv::new(&[]).unwrap();
        let sig = Signature::new(&env, false);
        (env, sig)
    }

    fn ch(id: u64) -> Expr {
        Expr::res(Endpoint::pos(id))
    }

    fn nch(id: u64) -> Expr {
        Expr::res(Endpoint::neg(id))
    }

    #[test]
    fn decompose_beta_at_hole() {
        let (_, sig) = empty_sig();
        let e = Expr::app(
            Expr::lam(Linearity::Lin, "x", ViewType::Unit, Expr::var("x")),
            Expr::unit(),
        );
        match decompose(&e, &sig).unwrap() {
            Decomposition::Redex(ctx, Redex::Pure(_)) => assert!(ctx.frames.is_empty()),
            other => panic!("expected pure redex at the hole, got {other:?}"),
        }
    }

    #[test]
    fn decompose_blocked_under_frames() {
        // fst((1, send(ch_1, 2))): the send's arguments are values, so the
        // whole thing blocks under the frame stack fst((1, [.]))
        let (_, sig) = empty_sig();
        let e = Expr::synth(ExprKind::Fst(Arc::new(Expr::pair(
            Expr::int(1),
            Expr::const_app("send", vec![ch(1), Expr::int(2)]),
        ))));
        match decompose(&e, &sig).unwrap() {
            Decomposition::Blocked(ctx, PartialRedex::Give { ep, value }) => {
                assert_eq!(ep, Endpoint::pos(1));
                assert_eq!(value, Expr::int(2));
                assert_eq!(ctx.frames.len(), 2);
                assert!(matches!(ctx.frames[0], Frame::FstF));
                assert!(matches!(ctx.frames[1], Frame::PairRight { .. }));
                // plugging the redex back restores the expression
                let redex = Expr::const_app("send", vec![ch(1), Expr::int(2)]);
                assert_eq!(ctx.plug(redex), e);
            }
            other => panic!("expected blocked send, got {other:?}"),
        }
    }

    #[test]
    fn values_have_no_redex() {
        let (_, sig) = empty_sig();
        for v in [
            Expr::unit(),
            Expr::int(3),
            Expr::pair(Expr::unit(), ch(1)),
            Expr::lam(Linearity::Lin, "x", ViewType::Unit, Expr::var("x")),
            Expr::const_app(
                "service_create",
                vec![Expr::lam(
                    Linearity::Intuit,
                    "x",
                    ViewType::Unit,
                    Expr::var("x"),
                )],
            ),
        ] {
            assert!(v.is_value());
            assert!(matches!(decompose(&v, &sig).unwrap(), Decomposition::Value));
        }
    }

    #[test]
    fn decompose_close_is_partial() {
        let (_, sig) = empty_sig();
        let e = Expr::const_app("close", vec![ch(1)]);
        match decompose(&e, &sig).unwrap() {
            Decomposition::Blocked(ctx, PartialRedex::Close { ep }) => {
                assert!(ctx.frames.is_empty());
                assert_eq!(ep, Endpoint::pos(1));
            }
            other => panic!("expected blocked close, got {other:?}"),
        }
    }

    #[test]
    fn pure_reduction() {
        let e = Expr::synth(ExprKind::If(
            Arc::new(Expr::boolean(true)),
            Arc::new(Expr::int(1)),
            Arc::new(Expr::int(2)),
        ));
        assert_eq!(reduce_pure(&e).unwrap(), Expr::int(1));

        let e = Expr::synth(ExprKind::LetPair(
            "a".into(),
            "b".into(),
            Arc::new(Expr::pair(Expr::int(1), Expr::int(2))),
            Arc::new(Expr::pair(Expr::var("b"), Expr::var("a"))),
        ));
        assert_eq!(
            reduce_pure(&e).unwrap(),
            Expr::pair(Expr::int(2), Expr::int(1))
        );

        // fix unrolls once, substituting itself for the fix-variable
        let lam = Expr::lam(
            Linearity::Intuit,
            "x",
            ViewType::Int,
            Expr::app(Expr::synth(ExprKind::FixVar("f".into())), Expr::var("x")),
        );
        let fix = Expr::synth(ExprKind::Fix("f".into(), None, Arc::new(lam)));
        let out = reduce_pure(&fix).unwrap();
        match &out.kind {
            ExprKind::Lam(_, _, _, body) => match &body.kind {
                ExprKind::App(f, _) => assert!(matches!(f.kind, ExprKind::Fix(..))),
                other => panic!("unexpected body {other:?}"),
            },
            other => panic!("expected lambda, got {other:?}"),
        }
    }

    #[test]
    fn adhoc_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(
            reduce_adhoc("add", &[Expr::int(1), Expr::int(1)], &mut rng).unwrap(),
            Expr::int(2)
        );
        assert_eq!(
            reduce_adhoc("lt", &[Expr::int(3), Expr::int(2)], &mut rng).unwrap(),
            Expr::boolean(false)
        );
        assert!(reduce_adhoc("div", &[Expr::int(1), Expr::int(0)], &mut rng).is_err());

        // randbit is a function of the seeded generator state
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..16 {
            assert_eq!(
                reduce_adhoc("randbit", &[], &mut r1).unwrap(),
                reduce_adhoc("randbit", &[], &mut r2).unwrap()
            );
        }
    }

    #[test]
    fn exit_enabled_for_finished_worker() {
        let (_, sig) = empty_sig();
        let mut pool = Pool::new(Expr::int(7));
        pool.spawn(Expr::unit());
        let store = ChannelStore::new();
        let steps = enabled_steps(&pool, &store, &sig).unwrap();
        assert_eq!(steps.len(), 1);
        assert!(matches!(steps[0], StepInstance::Exit { tid: 1 }));
    }

    #[test]
    fn send_pairs_with_its_dual_receive() {
        let (_, sig) = empty_sig();
        let mut pool = Pool::new(Expr::const_app("send", vec![ch(1), Expr::int(5)]));
        pool.spawn(Expr::synth(ExprKind::Let(
            LetBinder::Unit,
            Arc::new(Expr::const_app("channeg_send", vec![nch(1)])),
            Arc::new(Expr::unit()),
        )));
        let store = ChannelStore::new();
        let steps = enabled_steps(&pool, &store, &sig).unwrap();
        assert_eq!(steps.len(), 1);
        match &steps[0] {
            StepInstance::Comm(c) => {
                assert_eq!(c.kind, CommKind::Value);
                assert_eq!(c.from, (0, Endpoint::pos(1)));
                assert_eq!(c.to.0, 1);
            }
            other => panic!("expected a rendezvous, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_operations_do_not_pair() {
        // send on ch_1 and channeg_recv on ~ch_1 are both givers: no match
        let (_, sig) = empty_sig();
        let mut pool = Pool::new(Expr::const_app("send", vec![ch(1), Expr::int(5)]));
        pool.spawn(Expr::const_app("channeg_recv", vec![nch(1), Expr::int(9)]));
        let store = ChannelStore::new();
        let steps = enabled_steps(&pool, &store, &sig).unwrap();
        assert!(steps.is_empty());
    }

    #[test]
    fn channel_creation_step_shape() {
        let (env, sig) = empty_sig();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fun = Expr::lam(
            Linearity::Lin,
            "cp",
            ViewType::ChPos(SessionType::Nil),
            Expr::const_app("close", vec![Expr::var("cp")]),
        );
        let mut pool = Pool::new(Expr::const_app("chneg_create", vec![fun]));
        let mut store = ChannelStore::new();
        let steps = enabled_steps(&pool, &store, &sig).unwrap();
        assert!(matches!(steps[0], StepInstance::NewChannel { tid: 0 }));
        let ev = apply_step(&mut pool, &mut store, &env, &sig, &mut rng, &steps[0], 0).unwrap();
        assert_eq!(ev.rule, RuleTag::Pr3);
        // creator holds the negative end, the new thread is applied to the
        // positive one
        assert_eq!(pool.main(), &nch(1));
        let spawned = pool.threads.get(&1).unwrap();
        assert!(spawned.resources().contains(Endpoint::pos(1)));
        assert!(store.chans.contains_key(&1));

        // now both sides close: the handshake frees the channel
        let steps = enabled_steps(&pool, &store, &sig).unwrap();
        assert_eq!(steps.len(), 1, "spawned beta first");
        apply_step(&mut pool, &mut store, &env, &sig, &mut rng, &steps[0], 1).unwrap();
        let mut pool2 = pool.clone();
        pool2
            .threads
            .insert(0, Expr::const_app("channeg_close", vec![nch(1)]));
        let steps = enabled_steps(&pool2, &store, &sig).unwrap();
        let close = steps
            .iter()
            .find(|s| matches!(s, StepInstance::Comm(_)))
            .expect("close handshake enabled");
        let ev = apply_step(&mut pool2, &mut store, &env, &sig, &mut rng, close, 2).unwrap();
        assert_eq!(ev.rule, RuleTag::Pr4Clos);
        assert_eq!(pool2.main(), &Expr::unit());
        assert!(store.is_empty());
    }

    #[test]
    fn receive_step_delivers_pair() {
        let (env, sig) = empty_sig();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pool = Pool::new(Expr::const_app("recv", vec![ch(1)]));
        pool.spawn(Expr::const_app("channeg_recv", vec![nch(1), Expr::int(8)]));
        let mut store = ChannelStore::new();
        store.create(SessionType::rcv(ViewType::Int, SessionType::Nil));
        let steps = enabled_steps(&pool, &store, &sig).unwrap();
        let ev = apply_step(&mut pool, &mut store, &env, &sig, &mut rng, &steps[0], 0).unwrap();
        assert_eq!(ev.rule, RuleTag::Pr4Recv);
        assert_eq!(pool.main(), &Expr::pair(ch(1), Expr::int(8)));
        assert_eq!(pool.threads.get(&1).unwrap(), &nch(1));
        assert_eq!(
            store.chans.get(&1).unwrap().session,
            SessionType::Nil,
            "session advanced one constructor"
        );
    }

    #[test]
    fn forwarding_rule_instance() {
        // tid 1 sends on ~ch_1, tid 2 forwards between ch_1 and ~ch_2,
        // tid 3 receives on ch_2: the value teleports 1 -> 3 in one step
        let (env, sig) = empty_sig();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pool = Pool::new(Expr::int(0));
        let t1 = pool.spawn(Expr::const_app("channeg_recv", vec![nch(1), Expr::int(99)]));
        let t2 = pool.spawn(Expr::const_app("chposneg_link", vec![ch(1), nch(2)]));
        let t3 = pool.spawn(Expr::const_app("recv", vec![ch(2)]));
        let mut store = ChannelStore::new();
        store.create(SessionType::rcv(ViewType::Int, SessionType::Nil));
        store.create(SessionType::rcv(ViewType::Int, SessionType::Nil));
        let steps = enabled_steps(&pool, &store, &sig).unwrap();
        let comm = steps
            .iter()
            .find(|s| matches!(s, StepInstance::Comm(_)))
            .expect("forwarding enabled");
        let ev = apply_step(&mut pool, &mut store, &env, &sig, &mut rng, comm, 0).unwrap();
        assert_eq!(ev.rule, RuleTag::LinkRecv);
        assert_eq!(ev.chain, vec![1, 2]);
        assert_eq!(pool.threads.get(&t1).unwrap(), &nch(1));
        assert_eq!(
            pool.threads.get(&t2).unwrap(),
            &Expr::const_app("chposneg_link", vec![ch(1), nch(2)]),
            "the forwarder itself is unchanged"
        );
        assert_eq!(
            pool.threads.get(&t3).unwrap(),
            &Expr::pair(ch(2), Expr::int(99))
        );
        // both sessions advanced in lockstep
        assert_eq!(store.chans.get(&1).unwrap().session, SessionType::Nil);
        assert_eq!(store.chans.get(&2).unwrap().session, SessionType::Nil);

        // closing through the forwarder retires the whole chain
        pool.threads
            .insert(t1, Expr::const_app("channeg_close", vec![nch(1)]));
        pool.threads
            .insert(t3, Expr::const_app("close", vec![ch(2)]));
        let steps = enabled_steps(&pool, &store, &sig).unwrap();
        let comm = steps
            .iter()
            .find(|s| matches!(s, StepInstance::Comm(_)))
            .expect("chain close enabled");
        let ev = apply_step(&mut pool, &mut store, &env, &sig, &mut rng, comm, 1).unwrap();
        assert_eq!(ev.rule, RuleTag::LinkClos);
        assert!(store.is_empty());
        assert_eq!(pool.threads.get(&t2).unwrap(), &Expr::unit());
    }

    #[test]
    fn trivial_program_runs_in_one_step() {
        let prog = parse("fun main(): int = 1 + 1").unwrap();
        let checked = check_program(&prog, false).unwrap();
        let sig = Signature::new(&checked.env, false);
        let rep = run(
            &checked,
            &sig,
            &SchedulerConfig::default(),
            &MonitorConfig::all(),
        )
        .unwrap();
        assert_eq!(rep.steps, 1);
        match rep.outcome {
            Outcome::FinalValue { value, .. } => assert_eq!(value, Expr::int(2)),
            other => panic!("expected a final value, got {other:?}"),
        }
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let src = crate::corpus::corpus_source("queue").unwrap();
        let prog = parse(src).unwrap();
        let checked = check_program(&prog, false).unwrap();
        let sig = Signature::new(&checked.env, false);
        let cfg = SchedulerConfig {
            seed: 11,
            record_trace: true,
            ..Default::default()
        };
        let render = |rep: &RunReport| {
            rep.trace
                .iter()
                .map(TraceEvent::render)
                .collect::<Vec<_>>()
                .join("\n")
        };
        let a = run(&checked, &sig, &cfg, &MonitorConfig::all()).unwrap();
        let b = run(&checked, &sig, &cfg, &MonitorConfig::all()).unwrap();
        assert_eq!(render(&a), render(&b));
        assert!(!a.trace.is_empty());
    }

    #[test]
    fn step_limit_is_reported() {
        let src = crate::corpus::corpus_source("sieve").unwrap();
        let prog = parse(src).unwrap();
        let checked = check_program(&prog, false).unwrap();
        let sig = Signature::new(&checked.env, false);
        let cfg = SchedulerConfig {
            step_limit: 10,
            ..Default::default()
        };
        let rep = run(&checked, &sig, &cfg, &MonitorConfig::default()).unwrap();
        assert!(matches!(rep.outcome, Outcome::StepLimit));
    }

    #[test]
    fn per_thread_channel_sets() {
        let pool = Pool::new(Expr::unit());
        let m = pool.rch();
        assert_eq!(m.sets.len(), 1);
        assert!(m.sets[0].is_empty());

        let mut pool = Pool::new(Expr::const_app("send", vec![ch(1), Expr::int(5)]));
        pool.spawn(Expr::const_app("channeg_send", vec![nch(1)]));
        let m = pool.rch();
        assert_eq!(m.sets.len(), 2);
        assert!(m.sets[0].contains(&Endpoint::pos(1)));
        assert!(m.sets[1].contains(&Endpoint::neg(1)));
        assert!(crate::dfcheck::is_regular(&m));
    }

    #[test]
    fn pool_typing() {
        let (env, sig) = empty_sig();
        let pool = Pool::new(Expr::unit());
        let store = ChannelStore::new();
        let ty = check_pool(&pool, &store, &env, &sig).unwrap();
        assert_eq!(ty, ViewType::Unit);

        // the same endpoint in two threads violates regularity
        let mut pool = Pool::new(Expr::const_app("close", vec![ch(1)]));
        pool.spawn(Expr::const_app("close", vec![ch(1)]));
        let mut store = ChannelStore::new();
        store.create(SessionType::Nil);
        let err = check_pool(&pool, &store, &env, &sig).unwrap_err();
        assert_eq!(err.code, crate::diag::codes::POOL_REGULARITY);
    }

    #[test]
    fn pool_typing_mid_run() {
        // run the ping-pong program a few steps and re-type the pool after
        // each one; the main-thread type never changes
        let src = crate::corpus::corpus_source("pingpong").unwrap();
        let prog = parse(src).unwrap();
        let checked = check_program(&prog, false).unwrap();
        let sig = Signature::new(&checked.env, false);
        let mut pool = Pool::new(checked.main.clone());
        let mut store = ChannelStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for step in 0..10 {
            let ty = check_pool(&pool, &store, &checked.env, &sig).unwrap();
            assert!(crate::session::viewtype_eq(
                &ty,
                &checked.main_type,
                &checked.env
            ));
            let steps = enabled_steps(&pool, &store, &sig).unwrap();
            assert!(!steps.is_empty(), "progress violated at step {step}");
            apply_step(
                &mut pool,
                &mut store,
                &checked.env,
                &sig,
                &mut rng,
                &steps[0],
                step,
            )
            .unwrap();
        }
    }
}
