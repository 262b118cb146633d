//! Command-line grammar for states and observables.

use std::fmt;
use std::path::PathBuf;

use phasekit::fock::StateSpec;

/// Parse failure at a character column (0-based) of the argument.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.pos, self.msg)
    }
}

impl std::error::Error for ParseError {}

fn err<T>(pos: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { pos, msg: msg.into() })
}

fn parse_f64(s: &str, pos: usize) -> Result<f64, ParseError> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => err(pos, format!("expected a number, found `{s}`")),
    }
}

fn parse_usize(s: &str, pos: usize) -> Result<usize, ParseError> {
    s.parse::<usize>()
        .or_else(|_| err(pos, format!("expected a non-negative integer, found `{s}`")))
}

/// `re`, `imi`, or `re+imi` / `re-imi`, each part with an optional sign.
pub fn parse_complex(s: &str, pos: usize) -> Result<(f64, f64), ParseError> {
    if s.is_empty() {
        return err(pos, "expected a complex number");
    }
    let Some(body) = s.strip_suffix('i') else {
        return Ok((parse_f64(s, pos)?, 0.0));
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re, im_str, im_pos) = match split {
        Some(k) => (parse_f64(&body[..k], pos)?, &body[k..], pos + k),
        None => (0.0, body, pos),
    };
    let im = match im_str {
        "" | "+" => 1.0,
        "-" => -1.0,
        t => parse_f64(t, im_pos)?,
    };
    Ok((re, im))
}

/// `number:n | coherent:z | pair:z | tmpc:q,z | monomial:n`.
pub fn parse_state(s: &str) -> Result<StateSpec, ParseError> {
    let Some((kind, arg)) = s.split_once(':') else {
        return err(0, "expected `kind:argument`");
    };
    let at = kind.len() + 1;
    match kind {
        "number" => Ok(StateSpec::Number { n: parse_usize(arg, at)? }),
        "monomial" => Ok(StateSpec::Monomial { n: parse_usize(arg, at)? }),
        "coherent" => {
            let (re, im) = parse_complex(arg, at)?;
            Ok(StateSpec::Coherent { re, im })
        }
        "pair" => {
            let (re, im) = parse_complex(arg, at)?;
            Ok(StateSpec::PairCoherent { re, im })
        }
        "tmpc" => {
            let Some((q, z)) = arg.split_once(',') else {
                return err(at + arg.len(), "expected `q,alpha`");
            };
            let q = parse_usize(q, at)?;
            let (re, im) = parse_complex(z, at + arg.find(',').unwrap_or(0) + 1)?;
            Ok(StateSpec::TwoModePhaseCoherent { q, re, im })
        }
        _ => err(0, format!("unknown state kind `{kind}`")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservableSpec {
    Canonical,
    File(PathBuf),
    F(usize),
    G(usize),
    Dirac(f64),
}

/// `canonical | file:path | F:k | G:k | dirac:x0`.
pub fn parse_observable(s: &str) -> Result<ObservableSpec, ParseError> {
    if s == "canonical" {
        return Ok(ObservableSpec::Canonical);
    }
    let Some((kind, arg)) = s.split_once(':') else {
        return err(0, format!("unknown observable `{s}`"));
    };
    let at = kind.len() + 1;
    match kind {
        "file" if !arg.is_empty() => Ok(ObservableSpec::File(PathBuf::from(arg))),
        "file" => err(at, "missing path"),
        "F" => Ok(ObservableSpec::F(parse_usize(arg, at)?)),
        "G" => Ok(ObservableSpec::G(parse_usize(arg, at)?)),
        "dirac" => {
            let x = parse_f64(arg, at)?;
            if x < 0.0 {
                return err(at, "radius squared must be non-negative");
            }
            Ok(ObservableSpec::Dirac(x))
        }
        _ => err(0, format!("unknown observable kind `{kind}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_forms() {
        assert_eq!(parse_complex("1", 0).unwrap(), (1.0, 0.0));
        assert_eq!(parse_complex("1+0i", 0).unwrap(), (1.0, 0.0));
        assert_eq!(parse_complex("-0.5-2i", 0).unwrap(), (-0.5, -2.0));
        assert_eq!(parse_complex("+3i", 0).unwrap(), (0.0, 3.0));
        assert_eq!(parse_complex("-i", 0).unwrap(), (0.0, -1.0));
        assert_eq!(parse_complex("1e-3+2E+1i", 0).unwrap(), (1e-3, 20.0));
        assert_eq!(parse_complex("1+xi", 5).unwrap_err().pos, 6);
    }

    #[test]
    fn states() {
        assert_eq!(parse_state("number:3").unwrap(), StateSpec::Number { n: 3 });
        assert_eq!(
            parse_state("tmpc:2,0.5-0.1i").unwrap(),
            StateSpec::TwoModePhaseCoherent { q: 2, re: 0.5, im: -0.1 }
        );
        assert_eq!(parse_state("pair:1").unwrap(), StateSpec::PairCoherent { re: 1.0, im: 0.0 });
        let e = parse_state("coherent:1+zi").unwrap_err();
        assert_eq!(e.pos, 10);
        assert_eq!(parse_state("number:-1").unwrap_err().pos, 7);
        assert_eq!(parse_state("squeezed:1").unwrap_err().pos, 0);
        assert!(parse_state("number").is_err());
    }

    #[test]
    fn observables() {
        assert_eq!(parse_observable("canonical").unwrap(), ObservableSpec::Canonical);
        assert_eq!(parse_observable("G:2").unwrap(), ObservableSpec::G(2));
        assert_eq!(parse_observable("dirac:1.5").unwrap(), ObservableSpec::Dirac(1.5));
        assert_eq!(parse_observable("F:x").unwrap_err().pos, 2);
        assert!(parse_observable("dirac:-1").is_err());
    }
}
