//! Shipped example programs, program builders for parameterized demos,
//! reference oracles for their outputs, and the linear-logic session
//! constructors.
//!
//! The `.mtlc` sources live in the repository's `corpus/` directory and
//! are embedded here so tests and demos never depend on the working
//! directory.

use std::fmt::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ast::{ChoiceDir, Expr, ExprKind, SessionType, ViewType};

macro_rules! corpus_file {
    ($name:literal) => {
        (
            $name,
            include_str!(concat!("../../../corpus/", $name, ".mtlc")),
        )
    };
}

/// Programs expected to typecheck and finish cleanly.
pub const CORPUS: &[(&str, &str)] = &[
    corpus_file!("pingpong"),
    corpus_file!("arith"),
    corpus_file!("times"),
    corpus_file!("limplies"),
    corpus_file!("adisj"),
    corpus_file!("aconj"),
    corpus_file!("bang"),
    corpus_file!("service_echo"),
    corpus_file!("link_demo"),
    corpus_file!("sieve"),
    corpus_file!("queue"),
];

/// The deadlock counterexample; type-correct only with the unsafe
/// two-channel creation enabled.
pub const CREATE2_DEADLOCK: &str =
    include_str!(concat!("../../../corpus/", "create2_deadlock.mtlc"));

macro_rules! reject_file {
    ($name:literal, $code:expr) => {
        (
            $name,
            include_str!(concat!("../../../corpus/reject/", $name, ".mtlc")),
            $code,
        )
    };
}

/// Ill-typed programs with the diagnostic code each must be rejected with.
pub const REJECT: &[(&str, &str, &str)] = &[
    reject_file!("dup_use", crate::diag::codes::LIN_REUSE),
    reject_file!("unused_channel", crate::diag::codes::LIN_UNUSED),
    reject_file!("wrong_tag_cont", crate::diag::codes::NO_UNIFIER),
    reject_file!("send_on_recv", crate::diag::codes::NO_UNIFIER),
    reject_file!("if_linear_mismatch", crate::diag::codes::IF_LINEAR),
    reject_file!("service_captures", crate::diag::codes::LAM_CAPTURE),
    reject_file!("create2_noflag", crate::diag::codes::UNKNOWN_CONST),
    reject_file!("unbound", crate::diag::codes::UNBOUND),
    reject_file!("case_missing_arm", crate::diag::codes::CASE_ARMS),
    reject_file!("arg_mismatch", crate::diag::codes::TYPE_MISMATCH),
];

pub fn corpus_source(name: &str) -> Option<&'static str> {
    CORPUS.iter().find(|(n, _)| *n == name).map(|(_, src)| *src)
}

// ---------------------------------------------------------------------
// linear-logic session constructors
// ---------------------------------------------------------------------

/// `A (x) B`: deliver a channel for `A`, then behave as `B`.
pub fn times(a: SessionType, b: SessionType) -> SessionType {
    SessionType::snd(ViewType::ChNeg(a), b)
}

/// `A -o B`: accept a channel for `A`, then behave as `B`.
pub fn limplies(a: SessionType, b: SessionType) -> SessionType {
    SessionType::rcv(ViewType::ChNeg(a), b)
}

/// `A (+) B`: internal choice, the positive side picks the branch.
pub fn adisj(a: SessionType, b: SessionType) -> SessionType {
    SessionType::Branch(
        ChoiceDir::PosSends,
        vec![("left".to_string(), a), ("right".to_string(), b)],
    )
}

/// `A & B`: external choice, the negative side picks the branch.
pub fn aconj(a: SessionType, b: SessionType) -> SessionType {
    SessionType::Branch(
        ChoiceDir::NegSends,
        vec![("left".to_string(), a), ("right".to_string(), b)],
    )
}

// ---------------------------------------------------------------------
// the sieve
// ---------------------------------------------------------------------

const SIEVE_DEFS: &str = r#"// A stream of primes built from chained filter threads. The client pulls
// elements one `cons` selection at a time and ends the stream with `nil`.

sesstype sslist = &{ nil: nil | cons: snd(int) :: sslist }

fun ints_from(n0: int): chneg(sslist) = let
  fun serve(chp: chpos(sslist), n: int): unit =
    case chp of
    | nil(c) => close(c)
    | cons(c) => serve(send(c, n), n + 1)
    end
in
  chneg_create(llam (chp: chpos(sslist)) => serve(chp, n0))
end

fun ints_filter(src: chneg(sslist), n0: int): chneg(sslist) = let
  fun getfst(chn: chneg(sslist)): chneg(sslist) * int = let
      val (chn2, x) = channeg_send(sslist_cons(chn))
    in
      if x mod n0 > 0 then (chn2, x) else getfst(chn2)
    end
  fun serve(chp: chpos(sslist), chn: chneg(sslist)): unit =
    case chp of
    | nil(c) => let val () = close(c) in channeg_close(sslist_nil(chn)) end
    | cons(c) => let
        val (chn2, x) = getfst(chn)
      in
        serve(send(c, x), chn2)
      end
    end
in
  chneg_create(llam (chp: chpos(sslist)) => serve(chp, src))
end

fun sieve(): chneg(sslist) = let
  fun serve(chp: chpos(sslist), chn: chneg(sslist)): unit =
    case chp of
    | nil(c) => let val () = close(c) in channeg_close(sslist_nil(chn)) end
    | cons(c) => let
        val (chn2, p0) = channeg_send(sslist_cons(chn))
        val c2 = send(c, p0)
      in
        serve(c2, ints_filter(chn2, p0))
      end
    end
in
  chneg_create(llam (chp: chpos(sslist)) => serve(chp, ints_from(2)))
end

fun pull(chn: chneg(sslist)): chneg(sslist) * int =
  channeg_send(sslist_cons(chn))
"#;

/// The sieve program taking the first `n` primes; the result is the
/// primes as a right-nested pair list ending in unit.
pub fn sieve_program(n: usize) -> String {
    assert!(n >= 1, "sieve needs at least one prime");
    let mut src = String::from(SIEVE_DEFS);
    src.push_str("\nfun main() = let\n  val s0 = sieve()\n");
    for i in 1..=n {
        let _ = writeln!(src, "  val (s{i}, p{i}) = pull(s{})", i - 1);
    }
    let _ = writeln!(src, "  val () = channeg_close(sslist_nil(s{n}))");
    src.push_str("in\n  ");
    for i in 1..=n {
        let _ = write!(src, "(p{i}, ");
    }
    src.push_str("()");
    src.push_str(&")".repeat(n));
    src.push_str("\nend\n");
    src
}

/// Trial-division oracle for the sieve.
pub fn first_primes(n: usize) -> Vec<i64> {
    let mut out = Vec::with_capacity(n);
    let mut cand: i64 = 2;
    while out.len() < n {
        if (2..cand)
            .take_while(|d| d * d <= cand)
            .all(|d| cand % d != 0)
        {
            out.push(cand);
        }
        cand += 1;
    }
    out
}

// ---------------------------------------------------------------------
// the queue
// ---------------------------------------------------------------------

const QUEUE_DEFS: &str = r#"// A FIFO queue of session channels: each element lives in its own
// channel-holding thread, enqueues ripple to the empty tail, and a dequeue
// turns the front holder into a forwarder. Dequeuing an empty queue
// answers the `none` tag.

sesstype ssque = &{ nil: nil | enq: rcv(int) :: ssque | deq: ssqreply }
sesstype ssqreply = +{ none: ssque | some: snd(int) :: ssque }

fun queue_create(): chneg(ssque) = let
  fun serve(chp: chpos(ssque)): unit =
    case chp of
    | nil(c) => close(c)
    | enq(c) => let val (c2, x) = recv(c) in holder(x, queue_create(), c2) end
    | deq(c) => serve(ssqreply_none(c))
    end
  and holder(x: int, chn: chneg(ssque), chp: chpos(ssque)): unit =
    case chp of
    | nil(c) => let val () = close(c) in channeg_close(ssque_nil(chn)) end
    | enq(c) => let
        val (c2, y) = recv(c)
        val chn2 = channeg_recv(ssque_enq(chn), y)
      in holder(x, chn2, c2) end
    | deq(c) => chposneg_link(send(ssqreply_some(c), x), chn)
    end
in
  chneg_create(llam (chp: chpos(ssque)) => serve(chp))
end

fun enq(q: chneg(ssque), x: int): chneg(ssque) = channeg_recv(ssque_enq(q), x)

fun deq(q: chneg(ssque)): chneg(ssque) * int =
  case ssque_deq(q) of
  | none(c) => (c, -1)
  | some(c) => channeg_send(c)
  end
"#;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QueueOp {
    Enq(i64),
    Deq,
}

/// A queue program running the given script; the result collects every
/// dequeue answer (or -1 for an empty queue) as a nested pair list.
pub fn queue_program(ops: &[QueueOp]) -> String {
    let mut src = String::from(QUEUE_DEFS);
    src.push_str("\nfun main() = let\n  val q0 = queue_create()\n");
    let mut q = 0usize;
    let mut d = 0usize;
    for op in ops {
        match op {
            QueueOp::Enq(x) => {
                let _ = writeln!(src, "  val q{} = enq(q{q}, {x})", q + 1);
                q += 1;
            }
            QueueOp::Deq => {
                let _ = writeln!(src, "  val (q{}, d{}) = deq(q{q})", q + 1, d + 1);
                q += 1;
                d += 1;
            }
        }
    }
    let _ = writeln!(src, "  val () = channeg_close(ssque_nil(q{q}))");
    src.push_str("in\n  ");
    for i in 1..=d {
        let _ = write!(src, "(d{i}, ");
    }
    src.push_str("()");
    src.push_str(&")".repeat(d));
    src.push_str("\nend\n");
    src
}

/// Seeded random enq/deq script with small nonnegative payloads.
pub fn random_queue_script(len: usize, seed: u64) -> Vec<QueueOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.55) {
                QueueOp::Enq(rng.gen_range(0..1000))
            } else {
                QueueOp::Deq
            }
        })
        .collect()
}

/// Reference FIFO: what each dequeue must answer.
pub fn reference_fifo(ops: &[QueueOp]) -> Vec<i64> {
    let mut q = std::collections::VecDeque::new();
    let mut out = Vec::new();
    for op in ops {
        match op {
            QueueOp::Enq(x) => q.push_back(*x),
            QueueOp::Deq => out.push(q.pop_front().unwrap_or(-1)),
        }
    }
    out
}

// ---------------------------------------------------------------------
// decoding results
// ---------------------------------------------------------------------

/// Decode a right-nested pair list of integers ending in unit.
pub fn decode_int_list(v: &Expr) -> Option<Vec<i64>> {
    let mut out = Vec::new();
    let mut cur = v;
    loop {
        match &cur.kind {
            ExprKind::Unit => return Some(out),
            ExprKind::Pair(a, b) => {
                match a.kind {
                    ExprKind::Int(n) => out.push(n),
                    _ => return None,
                }
                cur = b;
            }
            _ => return None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn connective_constructors() {
        assert_eq!(
            times(SessionType::Nil, SessionType::Nil),
            SessionType::snd(ViewType::ChNeg(SessionType::Nil), SessionType::Nil)
        );
        assert_eq!(
            limplies(SessionType::Nil, SessionType::Nil),
            SessionType::rcv(ViewType::ChNeg(SessionType::Nil), SessionType::Nil)
        );
        assert!(matches!(
            adisj(SessionType::Nil, SessionType::Nil),
            SessionType::Branch(ChoiceDir::PosSends, _)
        ));
        assert!(matches!(
            aconj(SessionType::Nil, SessionType::Nil),
            SessionType::Branch(ChoiceDir::NegSends, _)
        ));
    }

    #[test]
    fn prime_oracle() {
        assert_eq!(first_primes(1), vec![2]);
        assert_eq!(first_primes(10), vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29]);
        assert_eq!(first_primes(25).last(), Some(&97));
    }

    #[test]
    fn fifo_oracle() {
        use QueueOp::*;
        assert_eq!(
            reference_fifo(&[Enq(1), Enq(2), Deq, Deq, Deq]),
            vec![1, 2, -1]
        );
    }

    #[test]
    fn decode_nested_pairs() {
        let v = Expr::pair(Expr::int(1), Expr::pair(Expr::int(2), Expr::unit()));
        assert_eq!(decode_int_list(&v), Some(vec![1, 2]));
        assert_eq!(decode_int_list(&Expr::unit()), Some(vec![]));
        assert_eq!(decode_int_list(&Expr::int(3)), None);
    }

    #[test]
    fn builders_emit_parseable_programs() {
        let p = crate::parser::parse(&sieve_program(3)).expect("sieve parses");
        assert!(p.main_def().is_some());
        let ops = random_queue_script(20, 1);
        let p = crate::parser::parse(&queue_program(&ops)).expect("queue parses");
        assert!(p.main_def().is_some());
    }
}

#[cfg(test)]
mod roundtrip_tests {
    use super::*;
    use crate::parser::parse;
    use crate::pretty::print_program;

    #[test]
    fn corpus_programs_roundtrip_through_printing() {
        for (name, src) in CORPUS {
            let p1 = parse(src).unwrap_or_else(|d| panic!("{name}: {d}"));
            let printed = print_program(&p1);
            let p2 = parse(&printed)
                .unwrap_or_else(|d| panic!("{name} reparse: {d}\n--- printed ---\n{printed}"));
            assert_eq!(p1, p2, "{name} changed across print/parse");
        }
        let p1 = parse(CREATE2_DEADLOCK).unwrap();
        let p2 = parse(&print_program(&p1)).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn generated_programs_roundtrip() {
        for src in [sieve_program(4), queue_program(&random_queue_script(30, 9))] {
            let p1 = parse(&src).unwrap();
            let p2 = parse(&print_program(&p1)).unwrap();
            assert_eq!(p1, p2);
        }
    }
}
