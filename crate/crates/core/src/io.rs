//! Text model format and CSV iteration traces.
//!
//! ```text
//! ma
//! initial: s0
//! goal: s1
//! state s0
//!   rate -> s1 : 2.0
//! state s1
//!   action a
//!     -> s0 : 1.0
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{self, Write};

use crate::error::{Error, ParseError, Result};
use crate::model::{Distribution, MarkovAutomaton, MarkovAutomatonBuilder, RateDistribution, StateSet};

/// Parsed model together with its goal states.
#[derive(Clone, Debug)]
pub struct ModelDocument {
    pub automaton: MarkovAutomaton,
    pub goals: StateSet,
    /// `(line, column)` of each declared state name, by state id.
    pub declared_at: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

fn perr(pos: Pos, message: impl Into<String>) -> Error {
    Error::Parse(ParseError {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    })
}

#[derive(Clone, Debug, PartialEq)]
enum Tok<'a> {
    Arrow,
    Colon,
    Word(&'a str),
}

fn tokenize(line: &str, line_no: usize) -> Vec<(Tok<'_>, Pos)> {
    let code = line.split('#').next().unwrap_or("");
    let bytes = code.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let pos = Pos {
            line: line_no,
            column: code[..i].chars().count() + 1,
        };
        if c.is_ascii_whitespace() {
            i += 1;
        } else if code[i..].starts_with("->") {
            out.push((Tok::Arrow, pos));
            i += 2;
        } else if c == b':' {
            out.push((Tok::Colon, pos));
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b':' && !code[i..].starts_with("->") {
                i += code[i..].chars().next().map_or(1, char::len_utf8);
            }
            out.push((Tok::Word(&code[start..i]), pos));
        }
    }
    out
}

fn is_identifier(w: &str) -> bool {
    let mut chars = w.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Decimal literal with optional sign, fraction and exponent.
fn parse_number(w: &str) -> Option<f64> {
    let body = w.strip_prefix(['+', '-']).unwrap_or(w);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let mut parts = mantissa.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    let digits = |s: &str| s.chars().all(|c| c.is_ascii_digit());
    let ok_mantissa = digits(int) && frac.is_none_or(digits) && (!int.is_empty() || frac.is_some_and(|f| !f.is_empty()));
    let ok_exponent = exponent.is_none_or(|e| {
        let e = e.strip_prefix(['+', '-']).unwrap_or(e);
        !e.is_empty() && digits(e)
    });
    if ok_mantissa && ok_exponent {
        w.parse().ok()
    } else {
        None
    }
}

struct Cursor<'a> {
    toks: Vec<(Tok<'a>, Pos)>,
    at: usize,
    end: Pos,
}

impl<'a> Cursor<'a> {
    fn new(line: &'a str, line_no: usize) -> Self {
        Self {
            toks: tokenize(line, line_no),
            at: 0,
            end: Pos {
                line: line_no,
                column: line.split('#').next().unwrap_or("").chars().count() + 1,
            },
        }
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.at).map_or(self.end, |t| t.1)
    }

    fn next(&mut self) -> Option<(Tok<'a>, Pos)> {
        let t = self.toks.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn expect(&mut self, tok: Tok<'_>, what: &str) -> Result<()> {
        let pos = self.pos();
        match self.next() {
            Some((t, _)) if t == tok => Ok(()),
            _ => Err(perr(pos, format!("expected {what}"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(&'a str, Pos)> {
        let pos = self.pos();
        match self.next() {
            Some((Tok::Word(w), p)) if is_identifier(w) => Ok((w, p)),
            Some((Tok::Word(w), p)) => Err(perr(p, format!("invalid {what} '{w}'"))),
            _ => Err(perr(pos, format!("expected {what}"))),
        }
    }

    fn number(&mut self) -> Result<(f64, Pos)> {
        let pos = self.pos();
        match self.next() {
            Some((Tok::Word(w), p)) => parse_number(w).map(|x| (x, p)).ok_or_else(|| perr(p, format!("invalid number '{w}'"))),
            _ => Err(perr(pos, "expected a number")),
        }
    }

    fn finish(&self) -> Result<()> {
        match self.toks.get(self.at) {
            None => Ok(()),
            Some((_, p)) => Err(perr(*p, "unexpected trailing input")),
        }
    }
}

struct ActionBlock<'a> {
    name: &'a str,
    pos: Pos,
    targets: Vec<(&'a str, Pos, f64, Pos)>,
}

#[derive(Default)]
struct StateBlock<'a> {
    rates: Vec<(&'a str, Pos, f64, Pos)>,
    actions: Vec<ActionBlock<'a>>,
}

/// Parses a model document. Errors carry the 1-based line and column.
pub fn parse_model(text: &str) -> Result<ModelDocument> {
    let mut header = false;
    let mut initial: Option<(&str, Pos)> = None;
    let mut goals: Vec<(&str, Pos)> = Vec::new();
    let mut states: Vec<(&str, Pos, StateBlock)> = Vec::new();
    let mut declared: HashMap<&str, Pos> = HashMap::new();

    for (i, line) in text.lines().enumerate() {
        let mut cur = Cursor::new(line, i + 1);
        let Some((first, pos)) = cur.next() else {
            continue;
        };
        if !header {
            if first != Tok::Word("ma") {
                return Err(perr(pos, "expected 'ma' header"));
            }
            header = true;
            cur.finish()?;
            continue;
        }
        match first {
            Tok::Word("initial") => {
                cur.expect(Tok::Colon, "':'")?;
                let id = cur.ident("state name")?;
                cur.finish()?;
                if initial.is_some() {
                    return Err(perr(pos, "initial state declared twice"));
                }
                initial = Some(id);
            }
            Tok::Word("goal") => {
                cur.expect(Tok::Colon, "':'")?;
                while cur.toks.get(cur.at).is_some() {
                    goals.push(cur.ident("state name")?);
                }
            }
            Tok::Word("state") => {
                let (name, p) = cur.ident("state name")?;
                cur.finish()?;
                if let Some(prev) = declared.insert(name, p) {
                    return Err(perr(p, format!("state '{name}' already declared at line {}", prev.line)));
                }
                states.push((name, p, StateBlock::default()));
            }
            Tok::Word("rate") => {
                let block = &mut states.last_mut().ok_or_else(|| perr(pos, "rate outside a state block"))?.2;
                cur.expect(Tok::Arrow, "'->'")?;
                let (target, tp) = cur.ident("state name")?;
                cur.expect(Tok::Colon, "':'")?;
                let (rate, rp) = cur.number()?;
                cur.finish()?;
                if !block.actions.is_empty() {
                    return Err(perr(pos, "state mixes action blocks and rates"));
                }
                if !(rate > 0.0) || !rate.is_finite() {
                    return Err(perr(rp, format!("rate {rate} must be positive")));
                }
                block.rates.push((target, tp, rate, rp));
            }
            Tok::Word("action") => {
                let block = &mut states.last_mut().ok_or_else(|| perr(pos, "action outside a state block"))?.2;
                let (name, _) = cur.ident("action name")?;
                cur.finish()?;
                if !block.rates.is_empty() {
                    return Err(perr(pos, "state mixes action blocks and rates"));
                }
                block.actions.push(ActionBlock {
                    name,
                    pos,
                    targets: Vec::new(),
                });
            }
            Tok::Arrow => {
                let action = states
                    .last_mut()
                    .and_then(|s| s.2.actions.last_mut())
                    .ok_or_else(|| perr(pos, "'->' outside an action block"))?;
                let (target, tp) = cur.ident("state name")?;
                cur.expect(Tok::Colon, "':'")?;
                let (prob, pp) = cur.number()?;
                cur.finish()?;
                if !(prob > 0.0 && prob <= 1.0) {
                    return Err(perr(pp, format!("probability {prob} outside (0,1]")));
                }
                action.targets.push((target, tp, prob, pp));
            }
            Tok::Word(w) => return Err(perr(pos, format!("unexpected '{w}'"))),
            Tok::Colon => return Err(perr(pos, "unexpected ':'")),
        }
    }

    let eof = Pos {
        line: text.lines().count().max(1),
        column: 1,
    };
    if !header {
        return Err(perr(eof, "expected 'ma' header"));
    }
    let (initial, initial_pos) = initial.ok_or_else(|| perr(eof, "missing initial state"))?;

    let mut builder = MarkovAutomatonBuilder::new();
    for (name, p, _) in &states {
        builder.add_state(name).map_err(|e| perr(*p, e.to_string()))?;
    }
    let lookup = |name: &str, p: Pos| builder.state_id(name).ok_or_else(|| perr(p, format!("unknown state '{name}'")));
    let init = lookup(initial, initial_pos)?;
    let goal_set: StateSet = goals.iter().map(|&(g, p)| lookup(g, p)).collect::<Result<_>>()?;

    let mut resolved = Vec::with_capacity(states.len());
    for (_, _, block) in &states {
        let rates = block
            .rates
            .iter()
            .map(|&(t, tp, r, _)| Ok((lookup(t, tp)?, r)))
            .collect::<Result<Vec<_>>>()?;
        let mut actions = Vec::new();
        for a in &block.actions {
            if a.targets.is_empty() {
                return Err(perr(a.pos, format!("action '{}' has no successors", a.name)));
            }
            let entries = a
                .targets
                .iter()
                .map(|&(t, tp, pr, _)| Ok((lookup(t, tp)?, pr)))
                .collect::<Result<Vec<_>>>()?;
            actions.push((a.name, a.pos, entries));
        }
        resolved.push((rates, actions));
    }

    for (s, (rates, actions)) in resolved.into_iter().enumerate() {
        let spos = states[s].1;
        if !rates.is_empty() {
            let rd = RateDistribution::new(rates).map_err(|e| perr(spos, e.to_string()))?;
            builder.set_rates(s, rd).map_err(|e| perr(spos, e.to_string()))?;
        }
        for (name, apos, entries) in actions {
            let dist = Distribution::new(entries).map_err(|e| perr(apos, e.to_string()))?;
            let act = builder.action(name);
            builder.add_transition(s, act, dist).map_err(|e| perr(apos, e.to_string()))?;
        }
    }
    let automaton = builder.build(init).map_err(|e| perr(initial_pos, e.to_string()))?;
    Ok(ModelDocument {
        automaton,
        goals: goal_set,
        declared_at: states.iter().map(|(_, p, _)| (p.line, p.column)).collect(),
    })
}

/// Writes `doc` in the format accepted by [`parse_model`].
pub fn serialize_model(doc: &ModelDocument) -> String {
    let ma = &doc.automaton;
    let mut out = String::from("ma\n");
    let _ = writeln!(out, "initial: {}", ma.state_name(ma.initial()));
    out.push_str("goal:");
    for &g in &doc.goals {
        let _ = write!(out, " {}", ma.state_name(g));
    }
    out.push('\n');
    for s in 0..ma.num_states() {
        let _ = writeln!(out, "state {}", ma.state_name(s));
        if let Some(rates) = ma.rates(s) {
            for (t, r) in rates.iter() {
                let _ = writeln!(out, "  rate -> {} : {r}", ma.state_name(t));
            }
        }
        for tr in ma.transitions(s) {
            let _ = writeln!(out, "  action {}", ma.action_name(tr.action));
            for (t, p) in tr.distribution.iter() {
                let _ = writeln!(out, "    -> {} : {p}", ma.state_name(t));
            }
        }
    }
    out
}

/// One pass of the refinement loop.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub blocks: usize,
    pub game_states: usize,
    pub lb: f64,
    pub ub: f64,
    pub eps_hat: f64,
    pub delta: f64,
    pub steps: usize,
    pub refine_ms: f64,
    pub valiter_ms: f64,
}

pub const TRACE_HEADER: &str = "iteration,blocks,game_states,lb,ub,eps_hat,delta,steps,refine_ms,valiter_ms";

/// CSV sink; the header is written on construction.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{TRACE_HEADER}")?;
        Ok(Self { out })
    }

    pub fn write_row(&mut self, r: &IterationRecord) -> io::Result<()> {
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{},{:.3},{:.3}",
            r.iteration, r.blocks, r.game_states, r.lb, r.ub, r.eps_hat, r.delta, r.steps, r.refine_ms, r.valiter_ms
        )?;
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Maps states of `b` to states of `a` by name and checks that both
/// documents describe the same model.
pub fn same_model(a: &ModelDocument, b: &ModelDocument) -> bool {
    let (x, y) = (&a.automaton, &b.automaton);
    if x.num_states() != y.num_states() {
        return false;
    }
    let map: Option<Vec<usize>> = (0..y.num_states()).map(|s| x.state_id(y.state_name(s))).collect();
    let Some(map) = map else {
        return false;
    };
    let goals_b: StateSet = b.goals.iter().map(|&g| map[g]).collect();
    if goals_b != a.goals || map[y.initial()] != x.initial() {
        return false;
    }
    (0..y.num_states()).all(|s| {
        let t = map[s];
        let rates_eq = match (x.rates(t), y.rates(s)) {
            (None, None) => true,
            (Some(r1), Some(r2)) => {
                let r2: BTreeMap<usize, f64> = r2.iter().map(|(k, v)| (map[k], v)).collect();
                r1.iter().collect::<BTreeMap<_, _>>() == r2
            }
            _ => false,
        };
        let trans = |ma: &MarkovAutomaton, st: usize, m: &dyn Fn(usize) -> usize| {
            let mut v: Vec<(String, Vec<(usize, u64)>)> = ma
                .transitions(st)
                .iter()
                .map(|tr| {
                    let mut d: Vec<(usize, u64)> = tr.distribution.iter().map(|(k, p)| (m(k), p.to_bits())).collect();
                    d.sort_unstable();
                    (ma.action_name(tr.action).to_string(), d)
                })
                .collect();
            v.sort();
            v
        };
        rates_eq && trans(x, t, &|k| k) == trans(y, s, &|k| map[k])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_STATE: &str = "ma\ninitial: s0\ngoal: s1\nstate s0\n  rate -> s1 : 1.0\nstate s1\n";

    fn parse_err(text: &str) -> ParseError {
        match parse_model(text) {
            Err(Error::Parse(e)) => e,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn two_state_ctmc() {
        let doc = parse_model(TWO_STATE).unwrap();
        let ma = &doc.automaton;
        assert_eq!(ma.num_states(), 2);
        assert!(ma.rates(0).is_some());
        assert!(ma.rates(1).is_none());
        assert_eq!(doc.goals, [1].into_iter().collect());
        assert_eq!(doc.declared_at, vec![(4, 7), (6, 7)]);
    }

    #[test]
    fn full_example_format() {
        let text = "\
ma
initial: s0
goal: s6 s7            # zero or more ids
state s0
  rate -> s1 : 2.0     # Markovian state
  rate -> s2 : 3.5
state s1
state s2
  action alpha
    -> s3 : 0.5
    -> s4 : 0.5
  action beta
    -> s5 : 1.0
state s3
state s4
state s5
state s6
state s7
";
        let doc = parse_model(text).unwrap();
        let ma = &doc.automaton;
        assert_eq!(ma.num_states(), 8);
        assert_eq!(ma.exit_rate(0).unwrap(), 5.5);
        assert_eq!(ma.transitions(2).len(), 2);
        assert_eq!(doc.goals.len(), 2);
    }

    #[test]
    fn bad_sum_is_reported() {
        let text = "ma\ninitial: a\nstate a\n  action alpha\n    -> b : 0.5\n    -> c : 0.6\nstate b\nstate c\n";
        let e = parse_err(text);
        assert_eq!(e.line, 4);
        assert!(e.message.contains("distribution sums to 1.1"), "{}", e.message);
    }

    #[test]
    fn duplicate_goals_collapse() {
        let doc = parse_model("ma\ninitial: s0\ngoal: s1 s1\ngoal: s1\nstate s0\nstate s1\n").unwrap();
        assert_eq!(doc.goals.len(), 1);
    }

    #[test]
    fn diagnostics_carry_positions() {
        let e = parse_err("ma\ninitial: s0\nstate s0\n  rate -> nowhere : 1.0\n");
        assert_eq!((e.line, e.column), (4, 11));
        assert!(e.message.contains("unknown state"));

        let e = parse_err("ma\ninitial: s0\nstate s0\n  rate -> s0 : 1.0\n  action a\n    -> s0 : 1\n");
        assert_eq!(e.line, 5);
        assert!(e.message.contains("mixes"));

        let e = parse_err("ma\ninitial: s0\nstate s0\n  rate -> s0 : -2\n");
        assert_eq!((e.line, e.column), (4, 16));

        let e = parse_err("ma\ninitial: s0\nstate s0\n  action a\n    -> s0 : 0\n");
        assert_eq!(e.line, 5);

        let e = parse_err("ma\ninitial: s0\nstate s0\n  rate -> s0 : 1x\n");
        assert!(e.message.contains("invalid number"));

        let e = parse_err("mdp\n");
        assert_eq!((e.line, e.column), (1, 1));

        let e = parse_err("ma\nstate s0\n");
        assert!(e.message.contains("initial"));

        let e = parse_err("ma\ninitial: s0\ninitial: s0\nstate s0\n");
        assert_eq!(e.line, 3);

        let e = parse_err("ma\ninitial: s0\nstate s0\nstate s0\n");
        assert_eq!(e.line, 4);

        let e = parse_err("ma\ninitial: 0s\nstate s0\n");
        assert_eq!((e.line, e.column), (2, 10));

        let e = parse_err("ma\ninitial: s0\nstate s0\n  action a\nstate s1\n");
        assert_eq!(e.line, 4);
    }

    #[test]
    fn numbers() {
        assert_eq!(parse_number("2"), Some(2.0));
        assert_eq!(parse_number("2.5e-1"), Some(0.25));
        assert_eq!(parse_number(".5"), Some(0.5));
        assert_eq!(parse_number("1E3"), Some(1000.0));
        assert_eq!(parse_number("inf"), None);
        assert_eq!(parse_number("NaN"), None);
        assert_eq!(parse_number("1e"), None);
        assert_eq!(parse_number("."), None);
    }

    #[test]
    fn serialization_round_trips() {
        let text = "ma\ninitial: p\ngoal:\nstate p\n  action a\n    -> m : 0.1\n    -> p : 0.9\n  action b\n    -> m : 1\n  action c\n    -> p : 1\nstate m\n  rate -> p : 0.3\n";
        let doc = parse_model(text).unwrap();
        let out = serialize_model(&doc);
        assert!(out.contains("goal:\n"));
        for a in ["action a", "action b", "action c"] {
            assert!(out.contains(a));
        }
        let back = parse_model(&out).unwrap();
        assert!(same_model(&doc, &back));
    }

    #[test]
    fn trace_header_once() {
        let mut w = TraceWriter::new(Vec::new()).unwrap();
        let row = IterationRecord {
            iteration: 1,
            blocks: 2,
            game_states: 3,
            lb: 0.5,
            ub: 0.5,
            eps_hat: 0.01,
            delta: 0.02,
            steps: 50,
            refine_ms: 0.0,
            valiter_ms: 1.25,
        };
        w.write_row(&row).unwrap();
        w.write_row(&IterationRecord { iteration: 2, ..row.clone() }).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines[1], "1,2,3,0.5,0.5,0.01,0.02,50,0.000,1.250");
        assert!(lines[2].starts_with("2,"));
    }
}
