//! Literal argument values carried by abstract layers and optimizers.

use std::cmp::Ordering;
use std::fmt;

use serde_json::{Number, Value};

/// A statically known argument value.
///
/// Only integers, floats, strings and integer lists can be lifted out of
/// source code; anything else makes the surrounding call unextractable.
#[derive(Debug, Clone)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
    IntList(Vec<i64>),
}

impl Literal {
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Literal::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Literal::Int(v) => Some(*v as f64),
            Literal::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Literal::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int_list(&self) -> Option<&[i64]> {
        match self {
            Literal::IntList(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Literal::Int(_) | Literal::Float(_))
    }

    pub fn to_json(&self) -> Value {
        match self {
            Literal::Int(v) => Value::from(*v),
            Literal::Float(v) => Number::from_f64(*v).map(Value::Number).unwrap_or(Value::Null),
            Literal::Str(s) => Value::String(s.clone()),
            Literal::IntList(v) => Value::Array(v.iter().map(|x| Value::from(*x)).collect()),
        }
    }

    pub fn from_json(value: &Value) -> Option<Literal> {
        match value {
            Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Some(Literal::Int(i))
                } else {
                    n.as_f64().map(Literal::Float)
                }
            }
            Value::String(s) => Some(Literal::Str(s.clone())),
            Value::Array(items) => items
                .iter()
                .map(|v| v.as_i64())
                .collect::<Option<Vec<_>>>()
                .map(Literal::IntList),
            _ => None,
        }
    }

    /// Python-source rendering, used by the emitter. Lists render as tuples.
    pub fn to_python(&self) -> String {
        match self {
            Literal::Int(v) => v.to_string(),
            Literal::Float(v) => py_float_repr(*v),
            Literal::Str(s) => py_str_repr(s),
            Literal::IntList(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                if parts.len() == 1 {
                    format!("({},)", parts[0])
                } else {
                    format!("({})", parts.join(", "))
                }
            }
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Literal::Int(_) => 0,
            Literal::Float(_) => 1,
            Literal::Str(_) => 2,
            Literal::IntList(_) => 3,
        }
    }
}

// Floats compare by total order so that `Literal` is a proper `Eq`; an int
// and a float are never equal, matching the syntactic notion of identity.
impl PartialEq for Literal {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Literal {}

impl PartialOrd for Literal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Literal {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Literal::Int(a), Literal::Int(b)) => a.cmp(b),
            (Literal::Float(a), Literal::Float(b)) => a.total_cmp(b),
            (Literal::Str(a), Literal::Str(b)) => a.cmp(b),
            (Literal::IntList(a), Literal::IntList(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl std::hash::Hash for Literal {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Literal::Int(v) => v.hash(state),
            Literal::Float(v) => v.to_bits().hash(state),
            Literal::Str(s) => s.hash(state),
            Literal::IntList(v) => v.hash(state),
        }
    }
}

/// Python dict-repr style, as in `{'func': 'SGD', 'lr': 0.01, 'decay': 1e-06}`.
impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(v) => write!(f, "{v}"),
            Literal::Float(v) => f.write_str(&py_float_repr(*v)),
            Literal::Str(s) => f.write_str(&py_str_repr(s)),
            Literal::IntList(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "[{}]", parts.join(", "))
            }
        }
    }
}

/// Shortest round-trip decimal in Python's `repr(float)` layout:
/// positional notation for exponents in [-4, 16), scientific otherwise with a
/// signed, at least two-digit exponent.
pub fn py_float_repr(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    // `{:e}` yields the shortest round-trip digits, e.g. "1.2345e-7".
    let sci = format!("{:e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let sign = if negative { "-" } else { "" };

    if (-4..16).contains(&exp) {
        let point = exp + 1;
        let body = if point <= 0 {
            format!("0.{}{}", "0".repeat((-point) as usize), digits)
        } else if point as usize >= digits.len() {
            format!("{}{}.0", digits, "0".repeat(point as usize - digits.len()))
        } else {
            let (int_part, frac) = digits.split_at(point as usize);
            format!("{int_part}.{frac}")
        };
        format!("{sign}{body}")
    } else {
        let (head, tail) = digits.split_at(1);
        let mant = if tail.is_empty() { head.to_string() } else { format!("{head}.{tail}") };
        let esign = if exp < 0 { '-' } else { '+' };
        format!("{sign}{mant}e{esign}{:02}", exp.abs())
    }
}

pub fn py_str_repr(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\'' => out.push_str("\\'"),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}
