//! State predicates used by environment annotations.
//!
//! Predicates have a small prefix syntax, e.g.
//! `and(agent_on_goal, door_open)` or `not(object_gone(0))`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    True,
    AgentAt(usize, usize),
    AgentOnGoal,
    /// Goal reached: agent on a goal cell, or the goal latch is set.
    GoalReached,
    Crashed,
    DoorOpen,
    SwitchOn,
    SubagentBuilt,
    ObjectGone(usize),
    ObjectOnBelt(usize),
    /// Object still present but no longer on a belt cell.
    ObjectRemoved(usize),
    ObjectAt(usize, usize, usize),
    /// Object sits against walls on two orthogonal sides.
    ObjectCornered(usize),
    Not(Box<Predicate>),
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
}

impl Predicate {
    /// Object indices referenced anywhere in the expression.
    pub fn objects(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit(&mut |p| match p {
            Predicate::ObjectGone(i)
            | Predicate::ObjectOnBelt(i)
            | Predicate::ObjectRemoved(i)
            | Predicate::ObjectCornered(i)
            | Predicate::ObjectAt(i, _, _) => out.push(*i),
            _ => {}
        });
        out
    }

    /// Grid cells referenced anywhere in the expression.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.visit(&mut |p| match p {
            Predicate::AgentAt(r, c) | Predicate::ObjectAt(_, r, c) => out.push((*r, *c)),
            _ => {}
        });
        out
    }

    fn visit(&self, f: &mut impl FnMut(&Predicate)) {
        f(self);
        match self {
            Predicate::Not(p) => p.visit(f),
            Predicate::And(ps) | Predicate::Or(ps) => ps.iter().for_each(|p| p.visit(f)),
            _ => {}
        }
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
        };
        let out = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(format!("trailing input at column {}", p.pos + 1));
        }
        Ok(out)
    }

    pub(crate) fn parse_at(text: &str, line: usize) -> Result<Self> {
        Self::parse(text).map_err(|msg| Error::Parse {
            line,
            msg: format!("predicate '{text}': {msg}"),
        })
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, name: &str, ps: &[Predicate]| {
            write!(f, "{name}(")?;
            for (i, p) in ps.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{p}")?;
            }
            write!(f, ")")
        };
        match self {
            Predicate::True => write!(f, "true"),
            Predicate::AgentAt(r, c) => write!(f, "agent_at({r}, {c})"),
            Predicate::AgentOnGoal => write!(f, "agent_on_goal"),
            Predicate::GoalReached => write!(f, "goal_reached"),
            Predicate::Crashed => write!(f, "crashed"),
            Predicate::DoorOpen => write!(f, "door_open"),
            Predicate::SwitchOn => write!(f, "switch_on"),
            Predicate::SubagentBuilt => write!(f, "subagent_built"),
            Predicate::ObjectGone(i) => write!(f, "object_gone({i})"),
            Predicate::ObjectOnBelt(i) => write!(f, "object_on_belt({i})"),
            Predicate::ObjectRemoved(i) => write!(f, "object_removed({i})"),
            Predicate::ObjectAt(i, r, c) => write!(f, "object_at({i}, {r}, {c})"),
            Predicate::ObjectCornered(i) => write!(f, "object_cornered({i})"),
            Predicate::Not(p) => write!(f, "not({p})"),
            Predicate::And(ps) => list(f, "and", ps),
            Predicate::Or(ps) => list(f, "or", ps),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn ident(&mut self) -> std::result::Result<String, String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("expected a name at column {}", start + 1));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn eat(&mut self, ch: u8) -> bool {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&ch) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, ch: u8) -> std::result::Result<(), String> {
        if self.eat(ch) {
            Ok(())
        } else {
            Err(format!("expected '{}' at column {}", ch as char, self.pos + 1))
        }
    }

    fn number(&mut self) -> std::result::Result<usize, String> {
        let tok = self.ident()?;
        tok.parse().map_err(|_| format!("expected an integer, got '{tok}'"))
    }

    fn numbers(&mut self, n: usize) -> std::result::Result<Vec<usize>, String> {
        self.expect(b'(')?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                self.expect(b',')?;
            }
            out.push(self.number()?);
        }
        self.expect(b')')?;
        Ok(out)
    }

    fn expr(&mut self) -> std::result::Result<Predicate, String> {
        let name = self.ident()?;
        Ok(match name.as_str() {
            "true" => Predicate::True,
            "agent_on_goal" => Predicate::AgentOnGoal,
            "goal_reached" => Predicate::GoalReached,
            "crashed" => Predicate::Crashed,
            "door_open" => Predicate::DoorOpen,
            "switch_on" => Predicate::SwitchOn,
            "subagent_built" => Predicate::SubagentBuilt,
            "agent_at" => {
                let v = self.numbers(2)?;
                Predicate::AgentAt(v[0], v[1])
            }
            "object_gone" => Predicate::ObjectGone(self.numbers(1)?[0]),
            "object_on_belt" => Predicate::ObjectOnBelt(self.numbers(1)?[0]),
            "object_removed" => Predicate::ObjectRemoved(self.numbers(1)?[0]),
            "object_cornered" => Predicate::ObjectCornered(self.numbers(1)?[0]),
            "object_at" => {
                let v = self.numbers(3)?;
                Predicate::ObjectAt(v[0], v[1], v[2])
            }
            "not" => {
                self.expect(b'(')?;
                let inner = self.expr()?;
                self.expect(b')')?;
                Predicate::Not(Box::new(inner))
            }
            "and" | "or" => {
                self.expect(b'(')?;
                let mut items = vec![self.expr()?];
                while self.eat(b',') {
                    items.push(self.expr()?);
                }
                self.expect(b')')?;
                if name == "and" {
                    Predicate::And(items)
                } else {
                    Predicate::Or(items)
                }
            }
            other => return Err(format!("unknown predicate '{other}'")),
        })
    }
}
