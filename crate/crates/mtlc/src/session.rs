//! Session-type algebra: duality, unfolding of named definitions, and the
//! matching judgment between the two endpoint views of one channel.
//!
//! Named definitions are iso-recursive: a name is equal only to itself in
//! the type checker, and protocols unfold explicitly through tag selection.
//! `matches` is more lenient (equality up to bounded unfolding) and backs
//! the runtime's store-consistency checks.

use std::collections::BTreeMap;
use std::fmt;

use crate::ast::{ChoiceDir, SessDef, SessionType, ViewType};

/// Fuel for structural comparisons that unfold definitions on demand.
const EQ_FUEL: u32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum SessionError {
    UnknownDef(String),
    NonContractive(String),
    DuplicateDef(String),
    DuplicateTag(String, String),
    NotNamed(SessionType),
}

impl fmt::Display for SessionError {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            SessionError::UnknownDef(n) => write!(f, "unknown session definition `{n}`"),
            SessionError::NonContractive(n) => {
                write!(f, "session definition `{n}` never reaches a constructor")
            }
            SessionError::DuplicateDef(n) => {
                write!(f, "session definition `{n}` is defined twice")
            }
            SessionError::DuplicateTag(d, t) => {
                write!(f, "duplicate tag `{t}` in session definition `{d}`")
            }
            SessionError::NotNamed(s) => write!(f, "`{s}` is not a named session"),
        }
    }
}

/// A branch definition: name, choice direction, ordered tag arms.
pub type BranchDef<'a> = (&'a String, ChoiceDir, &'a [(String, SessionType)]);

/// Table of session definitions in scope for a program.
#[derive(Debug, Clone, Default)]
pub struct SessionEnv {
    defs: BTreeMap<String, SessionType>,
}

impl SessionEnv {
    pub fn new(defs: &[SessDef]) -> Result<SessionEnv, SessionError> {
        let mut env = SessionEnv {
            defs: BTreeMap::new(),
        };
        for d in defs {
            if env.defs.insert(d.name.clone(), d.body.clone()).is_some() {
                return Err(SessionError::DuplicateDef(d.name.clone()));
            }
            if let SessionType::Branch(_, arms) = &d.body {
                let mut seen = std::collections::BTreeSet::new();
                for (tag, _) in arms {
                    if !seen.insert(tag.clone()) {
                        return Err(SessionError::DuplicateTag(d.name.clone(), tag.clone()));
                    }
                }
            }
        }
        env.validate()?;
        Ok(env)
    }

    pub fn body(&self, name: &str) -> Option<&SessionType> {
        self.defs.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.defs.keys()
    }

    /// Branch definitions, in name order, with their choice direction and
    /// ordered tag arms. Tags are numbered by position starting at 0.
    pub fn branch_defs(&self) -> Vec<BranchDef<'_>> {
        self.defs
            .iter()
            .filter_map(|(n, b)| match b {
                SessionType::Branch(dir, arms) => Some((n, *dir, arms.as_slice())),
                _ => None,
            })
            .collect()
    }

    /// Every definition must reach a constructor within `defs + 1` unfolds
    /// and every referenced name must exist.
    fn validate(&self) -> Result<(), SessionError> {
        let bound = self.defs.len() as u32 + 1;
        for (name, body) in &self.defs {
            self.check_refs(body)?;
            let mut cur = body.clone();
            let mut fuel = bound;
            while let SessionType::Named(n) | SessionType::DualNamed(n) = &cur {
                if fuel == 0 {
                    return Err(SessionError::NonContractive(name.clone()));
                }
                fuel -= 1;
                let next = self
                    .defs
                    .get(n)
                    .cloned()
                    .ok_or_else(|| SessionError::UnknownDef(n.clone()))?;
                cur = if matches!(cur, SessionType::DualNamed(_)) {
                    dual(&next)
                } else {
                    next
                };
            }
        }
        Ok(())
    }

    fn check_refs(&self, s: &SessionType) -> Result<(), SessionError> {
        match s {
            SessionType::Nil | SessionType::NilBar | SessionType::SVar(_) => Ok(()),
            SessionType::Send(t, rest) | SessionType::Recv(t, rest) => {
                self.check_refs_vt(t)?;
                self.check_refs(rest)
            }
            SessionType::Named(n) | SessionType::DualNamed(n) => {
                if self.defs.contains_key(n) {
                    Ok(())
                } else {
                    Err(SessionError::UnknownDef(n.clone()))
                }
            }
            SessionType::Branch(_, arms) => {
                for (_, arm) in arms {
                    self.check_refs(arm)?;
                }
                Ok(())
            }
        }
    }

    fn check_refs_vt(&self, t: &ViewType) -> Result<(), SessionError> {
        match t {
            ViewType::TVar(_)
            | ViewType::TVarLin(_)
            | ViewType::Int
            | ViewType::Bool
            | ViewType::Unit => Ok(()),
            ViewType::Prod(a, b) | ViewType::Arrow(_, a, b) => {
                self.check_refs_vt(a)?;
                self.check_refs_vt(b)
            }
            ViewType::ChPos(s) | ViewType::ChNeg(s) | ViewType::Service(s) => self.check_refs(s),
        }
    }
}

impl SessionEnv {
    /// Validate that every session name mentioned by a viewtype resolves.
    pub fn validate_viewtype(&self, t: &ViewType) -> Result<(), SessionError> {
        self.check_refs_vt(t)
    }
}

/// The dual of a session type: `nil` and `~nil` swap, as do `snd` and
/// `rcv`. Duality on a name is deferred with a marked reference that
/// `unfold` resolves; branch duality flips the choosing side.
pub fn dual(s: &SessionType) -> SessionType {
    match s {
        SessionType::Nil => SessionType::NilBar,
        SessionType::NilBar => SessionType::Nil,
        SessionType::Send(t, rest) => SessionType::Recv(t.clone(), Box::new(dual(rest))),
        SessionType::Recv(t, rest) => SessionType::Send(t.clone(), Box::new(dual(rest))),
        SessionType::Named(n) => SessionType::DualNamed(n.clone()),
        SessionType::DualNamed(n) => SessionType::Named(n.clone()),
        SessionType::Branch(dir, arms) => SessionType::Branch(
            dir.flip(),
            arms.iter().map(|(t, s)| (t.clone(), dual(s))).collect(),
        ),
        SessionType::SVar(i) => SessionType::SVar(*i),
    }
}

/// One-step unfolding of a named session (or a deferred dual of one).
pub fn unfold(s: &SessionType, env: &SessionEnv) -> Result<SessionType, SessionError> {
    match s {
        SessionType::Named(n) => env
            .body(n)
            .cloned()
            .ok_or_else(|| SessionError::UnknownDef(n.clone())),
        SessionType::DualNamed(n) => {
            let body = env
                .body(n)
                .ok_or_else(|| SessionError::UnknownDef(n.clone()))?;
            Ok(dual(body))
        }
        other => Err(SessionError::NotNamed(other.clone())),
    }
}

/// Unfold until the head is a structural constructor. Bounded by the
/// definition count, which suffices for contractive environments.
pub fn unfold_head(s: &SessionType, env: &SessionEnv) -> Result<SessionType, SessionError> {
    let mut cur = s.clone();
    let mut fuel = env.defs.len() as u32 + 1;
    while matches!(cur, SessionType::Named(_) | SessionType::DualNamed(_)) {
        if fuel == 0 {
            let n = match &cur {
                SessionType::Named(n) | SessionType::DualNamed(n) => n.clone(),
                _ => unreachable!(),
            };
            return Err(SessionError::NonContractive(n));
        }
        fuel -= 1;
        cur = unfold(&cur, env)?;
    }
    Ok(cur)
}

/// Structural equality up to bounded unfolding of named definitions.
pub fn session_eq(a: &SessionType, b: &SessionType, env: &SessionEnv) -> bool {
    session_eq_fuel(a, b, env, EQ_FUEL)
}

fn session_eq_fuel(a: &SessionType, b: &SessionType, env: &SessionEnv, fuel: u32) -> bool {
    if fuel == 0 {
        // fuel exhaustion only arises on equal infinite unrollings; the
        // two sides have agreed structurally the whole way down
        return true;
    }
    use SessionType::*;
    match (a, b) {
        (Nil, Nil) | (NilBar, NilBar) => true,
        (SVar(i), SVar(j)) => i == j,
        // names are abbreviations only for their own unfolding: two
        // distinct names never compare equal
        (Named(x), Named(y)) => x == y,
        (DualNamed(x), DualNamed(y)) => x == y,
        (Send(t1, s1), Send(t2, s2)) | (Recv(t1, s1), Recv(t2, s2)) => {
            viewtype_eq_fuel(t1, t2, env, fuel) && session_eq_fuel(s1, s2, env, fuel - 1)
        }
        (Branch(d1, a1), Branch(d2, a2)) => {
            d1 == d2
                && a1.len() == a2.len()
                && a1
                    .iter()
                    .zip(a2)
                    .all(|((t1, s1), (t2, s2))| t1 == t2 && session_eq_fuel(s1, s2, env, fuel - 1))
        }
        (Named(_) | DualNamed(_), _) => match unfold(a, env) {
            Ok(a2) => session_eq_fuel(&a2, b, env, fuel - 1),
            Err(_) => false,
        },
        (_, Named(_) | DualNamed(_)) => match unfold(b, env) {
            Ok(b2) => session_eq_fuel(a, &b2, env, fuel - 1),
            Err(_) => false,
        },
        _ => false,
    }
}

/// Equality of viewtypes up to session unfolding.
pub fn viewtype_eq(a: &ViewType, b: &ViewType, env: &SessionEnv) -> bool {
    viewtype_eq_fuel(a, b, env, EQ_FUEL)
}

fn viewtype_eq_fuel(a: &ViewType, b: &ViewType, env: &SessionEnv, fuel: u32) -> bool {
    use ViewType::*;
    match (a, b) {
        (TVar(i), TVar(j)) => i == j,
        (TVarLin(i), TVarLin(j)) => i == j,
        (Int, Int) | (Bool, Bool) | (Unit, Unit) => true,
        (Prod(a1, b1), Prod(a2, b2)) => {
            viewtype_eq_fuel(a1, a2, env, fuel) && viewtype_eq_fuel(b1, b2, env, fuel)
        }
        (Arrow(l1, a1, b1), Arrow(l2, a2, b2)) => {
            l1 == l2 && viewtype_eq_fuel(a1, a2, env, fuel) && viewtype_eq_fuel(b1, b2, env, fuel)
        }
        (ChPos(s1), ChPos(s2)) | (ChNeg(s1), ChNeg(s2)) | (Service(s1), Service(s2)) => {
            session_eq_fuel(s1, s2, env, fuel)
        }
        _ => false,
    }
}

/// The matching judgment: `chpos(S)` matches `chneg(S')` when the two
/// sessions are structurally equal up to unfolding.
pub fn matches(pos: &SessionType, neg: &SessionType, env: &SessionEnv) -> bool {
    session_eq(pos, neg, env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Span;
    use proptest::prelude::*;

    fn env_with(defs: &[(&str, SessionType)]) -> SessionEnv {
        let defs: Vec<SessDef> = defs
            .iter()
            .map(|(n, b)| SessDef {
                name: n.to_string(),
                body: b.clone(),
                span: Span::none(),
            })
            .collect();
        SessionEnv::new(&defs).unwrap()
    }

    fn sslist_int() -> SessionType {
        SessionType::Branch(
            ChoiceDir::NegSends,
            vec![
                ("nil".to_string(), SessionType::Nil),
                (
                    "cons".to_string(),
                    SessionType::snd(ViewType::Int, SessionType::Named("sslist".into())),
                ),
            ],
        )
    }

    #[test]
    fn dual_equations() {
        assert_eq!(dual(&SessionType::Nil), SessionType::NilBar);
        assert_eq!(
            dual(&SessionType::snd(ViewType::Int, SessionType::Nil)),
            SessionType::rcv(ViewType::Int, SessionType::NilBar)
        );
        let s = SessionType::rcv(ViewType::Bool, SessionType::Nil);
        assert_eq!(dual(&dual(&s)), s);
    }

    #[test]
    fn unfold_named_and_dual() {
        let env = env_with(&[("sslist", sslist_int())]);
        let got = unfold(&SessionType::Named("sslist".into()), &env).unwrap();
        assert_eq!(got, sslist_int());

        // dual reference unfolds with snd/rcv swapped and direction flipped
        let got = unfold(&SessionType::DualNamed("sslist".into()), &env).unwrap();
        assert_eq!(got, dual(&sslist_int()));

        assert!(matches!(
            unfold(&SessionType::Named("nope".into()), &env),
            Err(SessionError::UnknownDef(_))
        ));
    }

    #[test]
    fn non_contractive_rejected() {
        let defs = vec![
            SessDef {
                name: "a".into(),
                body: SessionType::Named("b".into()),
                span: Span::none(),
            },
            SessDef {
                name: "b".into(),
                body: SessionType::Named("a".into()),
                span: Span::none(),
            },
        ];
        assert!(matches!(
            SessionEnv::new(&defs),
            Err(SessionError::NonContractive(_))
        ));
    }

    #[test]
    fn matching() {
        let env = env_with(&[("sslist", sslist_int())]);
        assert!(matches(&SessionType::Nil, &SessionType::Nil, &env));
        assert!(!matches(
            &SessionType::snd(ViewType::Int, SessionType::Nil),
            &SessionType::rcv(ViewType::Int, SessionType::Nil),
            &env
        ));
        // a name matches its own one-step unfolding
        let named = SessionType::Named("sslist".into());
        let unfolded = unfold(&named, &env).unwrap();
        assert!(matches(&named, &unfolded, &env));
    }

    fn arb_session() -> impl Strategy<Value = SessionType> {
        let leaf = prop_oneof![
            Just(SessionType::Nil),
            Just(SessionType::NilBar),
            Just(SessionType::Named("sslist".into())),
        ];
        leaf.prop_recursive(3, 16, 4, |inner| {
            prop_oneof![
                inner
                    .clone()
                    .prop_map(|s| SessionType::snd(ViewType::Int, s)),
                inner
                    .clone()
                    .prop_map(|s| SessionType::rcv(ViewType::Bool, s)),
                (inner.clone(), inner).prop_map(|(a, b)| SessionType::Branch(
                    ChoiceDir::NegSends,
                    vec![("l".into(), a), ("r".into(), b)],
                )),
            ]
        })
    }

    proptest! {
        #[test]
        fn dual_is_involution(s in arb_session()) {
            prop_assert_eq!(dual(&dual(&s)), s);
        }

        #[test]
        fn matches_is_reflexive(s in arb_session()) {
            let env = env_with(&[("sslist", sslist_int())]);
            prop_assert!(matches(&s, &s, &env));
        }

        #[test]
        fn dual_commutes_with_unfold(pick in any::<bool>()) {
            let env = env_with(&[("sslist", sslist_int())]);
            let s = if pick {
                SessionType::Named("sslist".into())
            } else {
                SessionType::DualNamed("sslist".into())
            };
            let lhs = unfold(&dual(&s), &env).unwrap();
            let rhs = dual(&unfold(&s, &env).unwrap());
            prop_assert_eq!(lhs, rhs);
        }
    }
}
