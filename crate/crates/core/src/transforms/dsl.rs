//! One-line text form of transformation sequences:
//! `interchange(co,ci) | group(co,ci,2) | split(co,[4,4]) | depthwise`.

use thiserror::Error;

use super::Transform;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot parse step {index} `{text}`: {reason}")]
pub struct ParseError {
    pub index: usize,
    pub text: String,
    pub reason: String,
}

pub(crate) fn parse_sequence(text: &str) -> Result<Vec<Transform>, ParseError> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split('|')
        .enumerate()
        .map(|(index, step)| {
            parse_step(step.trim()).map_err(|reason| ParseError {
                index,
                text: step.trim().to_string(),
                reason,
            })
        })
        .collect()
}

fn split_args(args: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for c in args.chars() {
        match c {
            '[' => {
                depth += 1;
                cur.push(c);
            }
            ']' => {
                depth -= 1;
                cur.push(c);
            }
            ',' if depth == 0 => out.push(std::mem::take(&mut cur)),
            c if c.is_whitespace() => {}
            c => cur.push(c),
        }
    }
    if !cur.is_empty() || !out.is_empty() {
        out.push(cur);
    }
    out
}

fn ident(s: &str) -> Result<String, String> {
    let ok = !s.is_empty()
        && s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if ok {
        Ok(s.to_string())
    } else {
        Err(format!("`{s}` is not an iterator name"))
    }
}

fn int(s: &str) -> Result<i64, String> {
    s.parse::<i64>()
        .map_err(|_| format!("`{s}` is not an integer"))
}

fn int_list(s: &str) -> Result<Vec<i64>, String> {
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| format!("`{s}` is not a bracketed list"))?;
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner.split(',').map(int).collect()
}

fn parse_step(step: &str) -> Result<Transform, String> {
    let lower = step.to_ascii_lowercase();
    let (name, args) = match lower.find('(') {
        Some(open) => {
            let close = lower
                .strip_suffix(')')
                .ok_or_else(|| "missing closing parenthesis".to_string())?;
            (lower[..open].trim().to_string(), split_args(&close[open + 1..]))
        }
        None => (lower.trim().to_string(), Vec::new()),
    };
    let arity = |n: usize| -> Result<(), String> {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("`{name}` takes {n} arguments, got {}", args.len()))
        }
    };
    let t = match name.as_str() {
        "interchange" => {
            if args.is_empty() {
                return Err("`interchange` needs at least one iterator".into());
            }
            Transform::Interchange(args.iter().map(|a| ident(a)).collect::<Result<_, _>>()?)
        }
        "strip_mine" | "stripmine" | "strip-mine" => {
            arity(2)?;
            Transform::StripMine {
                iter: ident(&args[0])?,
                factor: int(&args[1])?,
            }
        }
        "tile" => {
            arity(2)?;
            Transform::Tile {
                iter: ident(&args[0])?,
                factor: int(&args[1])?,
            }
        }
        "unroll" => {
            arity(2)?;
            Transform::Unroll {
                iter: ident(&args[0])?,
                factor: int(&args[1])?,
            }
        }
        "fuse" => {
            arity(2)?;
            Transform::Fuse {
                outer: ident(&args[0])?,
                inner: ident(&args[1])?,
            }
        }
        "split" => {
            arity(2)?;
            Transform::Split {
                iter: ident(&args[0])?,
                parts: int_list(&args[1])?,
            }
        }
        "bottleneck" => {
            arity(2)?;
            Transform::Bottleneck {
                iter: ident(&args[0])?,
                factor: int(&args[1])?,
            }
        }
        "group" => {
            arity(3)?;
            Transform::Group {
                a: ident(&args[0])?,
                b: ident(&args[1])?,
                factor: int(&args[2])?,
            }
        }
        "depthwise" => {
            arity(0)?;
            Transform::Depthwise
        }
        other => return Err(format!("unknown transformation `{other}`")),
    };
    Ok(t)
}

#[cfg(test)]
mod tests {
    use crate::transforms::TransformSequence;

    #[test]
    fn round_trip() {
        let text = "interchange(co,ci) | group(co,ci,2) | bottleneck(co,4) | split(co,[4,4]) | depthwise";
        let seq = TransformSequence::parse(text).unwrap();
        assert_eq!(seq.steps.len(), 5);
        assert_eq!(seq.to_string(), text);
    }

    #[test]
    fn case_and_spacing_are_ignored() {
        let a = TransformSequence::parse("Tile( CI , 32 ) |UNROLL(co,16)").unwrap();
        let b = TransformSequence::parse("tile(ci,32) | unroll(co,16)").unwrap();
        assert_eq!(a, b);
        assert_eq!(
            TransformSequence::parse("strip-mine(ci,4)").unwrap(),
            TransformSequence::parse("strip_mine(ci,4)").unwrap()
        );
    }

    #[test]
    fn empty_is_empty() {
        assert!(TransformSequence::parse("  ").unwrap().is_empty());
        assert_eq!(TransformSequence::default().to_string(), "");
    }

    #[test]
    fn errors_carry_step_index() {
        let err = TransformSequence::parse("tile(ci,4) | frobnicate(co)").unwrap_err();
        assert_eq!(err.index, 1);
        let err = TransformSequence::parse("group(co,ci)").unwrap_err();
        assert_eq!(err.index, 0);
        assert!(TransformSequence::parse("split(co,4)").is_err());
        assert!(TransformSequence::parse("tile(ci,x)").is_err());
        assert!(TransformSequence::parse("tile(ci,4").is_err());
    }
}
