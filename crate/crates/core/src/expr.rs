//! Quasi-affine integer expressions.
//!
//! An [`Affine`] is a linear combination of atoms plus a constant, where an
//! atom is either an iterator name or a floor-division / Euclidean modulo of
//! another affine expression by a positive compile-time constant. This is the
//! smallest class closed under every rewrite the transformations perform
//! (strip-mining, fusion, grouping, splitting).

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Atom {
    Var(String),
    Div(Box<Affine>, i64),
    Mod(Box<Affine>, i64),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Affine {
    terms: Vec<(Atom, i64)>,
    constant: i64,
}

/// Inclusive integer interval.
pub type Interval = (i64, i64);

impl Affine {
    pub fn constant(c: i64) -> Self {
        Affine {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(name: impl Into<String>) -> Self {
        Affine {
            terms: vec![(Atom::Var(name.into()), 1)],
            constant: 0,
        }
    }

    pub fn terms(&self) -> &[(Atom, i64)] {
        &self.terms
    }

    pub fn constant_part(&self) -> i64 {
        self.constant
    }

    pub fn as_const(&self) -> Option<i64> {
        if self.terms.is_empty() {
            Some(self.constant)
        } else {
            None
        }
    }

    /// Returns the variable name if the expression is exactly one iterator.
    pub fn as_var(&self) -> Option<&str> {
        match (self.terms.as_slice(), self.constant) {
            ([(Atom::Var(v), 1)], 0) => Some(v),
            _ => None,
        }
    }

    fn from_parts(terms: Vec<(Atom, i64)>, constant: i64) -> Self {
        let mut out = Affine {
            terms: Vec::with_capacity(terms.len()),
            constant,
        };
        for (atom, coef) in terms {
            out.push_term(atom, coef);
        }
        out
    }

    fn push_term(&mut self, atom: Atom, coef: i64) {
        if coef == 0 {
            return;
        }
        if let Some(pos) = self.terms.iter().position(|(a, _)| *a == atom) {
            self.terms[pos].1 += coef;
            if self.terms[pos].1 == 0 {
                self.terms.remove(pos);
            }
        } else {
            self.terms.push((atom, coef));
        }
    }

    pub fn scale(&self, k: i64) -> Affine {
        if k == 0 {
            return Affine::constant(0);
        }
        Affine {
            terms: self.terms.iter().map(|(a, c)| (a.clone(), c * k)).collect(),
            constant: self.constant * k,
        }
    }

    /// `floor(self / d)` for `d > 0`.
    pub fn floor_div(&self, d: i64) -> Affine {
        assert!(d > 0, "division by non-positive constant");
        if d == 1 {
            return self.clone();
        }
        let (whole, rest) = self.split_multiples(d);
        let mut out = whole;
        if let Some(c) = rest.as_const() {
            out.constant += c.div_euclid(d);
            return out;
        }
        // floor(floor(x / a) / b) == floor(x / (a * b))
        let atom = match rest.single_atom() {
            Some(Atom::Div(inner, a)) if rest.constant == 0 => Atom::Div(inner.clone(), a * d),
            _ => Atom::Div(Box::new(rest), d),
        };
        out.push_term(atom, 1);
        out
    }

    /// Euclidean `self mod d` for `d > 0`.
    pub fn modulo(&self, d: i64) -> Affine {
        assert!(d > 0, "modulo by non-positive constant");
        if d == 1 {
            return Affine::constant(0);
        }
        let (_, rest) = self.split_multiples(d);
        if let Some(c) = rest.as_const() {
            return Affine::constant(c.rem_euclid(d));
        }
        Affine {
            terms: vec![(Atom::Mod(Box::new(rest), d), 1)],
            constant: 0,
        }
    }

    fn single_atom(&self) -> Option<&Atom> {
        match self.terms.as_slice() {
            [(a, 1)] => Some(a),
            _ => None,
        }
    }

    /// Splits `self = d * whole + rest` where `rest` keeps the terms whose
    /// coefficients are not multiples of `d` and a constant in `[0, d)`.
    fn split_multiples(&self, d: i64) -> (Affine, Affine) {
        let mut whole = Affine::constant(self.constant.div_euclid(d));
        let mut rest = Affine::constant(self.constant.rem_euclid(d));
        for (atom, coef) in &self.terms {
            if coef % d == 0 {
                whole.push_term(atom.clone(), coef / d);
            } else {
                rest.push_term(atom.clone(), *coef);
            }
        }
        (whole, rest)
    }

    pub fn substitute(&self, name: &str, value: &Affine) -> Affine {
        let mut map = HashMap::new();
        map.insert(name.to_string(), value.clone());
        self.substitute_all(&map)
    }

    pub fn substitute_all(&self, map: &HashMap<String, Affine>) -> Affine {
        let mut out = Affine::constant(self.constant);
        for (atom, coef) in &self.terms {
            let replaced = match atom {
                Atom::Var(v) => match map.get(v) {
                    Some(e) => e.clone(),
                    None => Affine::var(v.clone()),
                },
                Atom::Div(inner, d) => inner.substitute_all(map).floor_div(*d),
                Atom::Mod(inner, d) => inner.substitute_all(map).modulo(*d),
            };
            out = out + replaced.scale(*coef);
        }
        out
    }

    pub fn rename(&self, from: &str, to: &str) -> Affine {
        self.substitute(from, &Affine::var(to))
    }

    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        for (atom, _) in &self.terms {
            match atom {
                Atom::Var(v) => {
                    out.insert(v.clone());
                }
                Atom::Div(inner, _) | Atom::Mod(inner, _) => inner.collect_vars(out),
            }
        }
    }

    pub fn mentions(&self, name: &str) -> bool {
        self.terms.iter().any(|(atom, _)| match atom {
            Atom::Var(v) => v == name,
            Atom::Div(inner, _) | Atom::Mod(inner, _) => inner.mentions(name),
        })
    }

    /// Evaluates with a variable lookup; `None` if a variable is unbound.
    pub fn eval_with(&self, lookup: &dyn Fn(&str) -> Option<i64>) -> Option<i64> {
        let mut acc = self.constant;
        for (atom, coef) in &self.terms {
            let v = match atom {
                Atom::Var(name) => lookup(name)?,
                Atom::Div(inner, d) => inner.eval_with(lookup)?.div_euclid(*d),
                Atom::Mod(inner, d) => inner.eval_with(lookup)?.rem_euclid(*d),
            };
            acc += coef * v;
        }
        Some(acc)
    }

    /// Interval bound of the expression given inclusive ranges for its
    /// variables. Exact for expressions in which each variable occurs once.
    pub fn range(&self, ranges: &HashMap<String, Interval>) -> Option<Interval> {
        let mut lo = self.constant;
        let mut hi = self.constant;
        for (atom, coef) in &self.terms {
            let (alo, ahi) = match atom {
                Atom::Var(v) => *ranges.get(v)?,
                Atom::Div(inner, d) => {
                    let (ilo, ihi) = inner.range(ranges)?;
                    (ilo.div_euclid(*d), ihi.div_euclid(*d))
                }
                Atom::Mod(inner, d) => {
                    let (ilo, ihi) = inner.range(ranges)?;
                    if ilo.div_euclid(*d) == ihi.div_euclid(*d) {
                        (ilo.rem_euclid(*d), ihi.rem_euclid(*d))
                    } else {
                        (0, d - 1)
                    }
                }
            };
            if *coef >= 0 {
                lo += coef * alo;
                hi += coef * ahi;
            } else {
                lo += coef * ahi;
                hi += coef * alo;
            }
        }
        Some((lo, hi))
    }

    /// Drops divisions and moduli that range analysis proves trivial:
    /// `x / d == 0` and `x % d == x` whenever `x` lies in `[0, d)`.
    pub fn simplify(&self, ranges: &HashMap<String, Interval>) -> Affine {
        let mut out = Affine::constant(self.constant);
        for (atom, coef) in &self.terms {
            let term = match atom {
                Atom::Var(v) => Affine::var(v.clone()),
                Atom::Div(inner, d) => {
                    let inner = inner.simplify(ranges);
                    match inner.range(ranges) {
                        Some((lo, hi)) if lo.div_euclid(*d) == hi.div_euclid(*d) => {
                            Affine::constant(lo.div_euclid(*d))
                        }
                        _ => inner.floor_div(*d),
                    }
                }
                Atom::Mod(inner, d) => {
                    let inner = inner.simplify(ranges);
                    match inner.range(ranges) {
                        Some((lo, hi)) if lo >= 0 && hi < *d => inner,
                        _ => inner.modulo(*d),
                    }
                }
            };
            out = out + term.scale(*coef);
        }
        out.recombine()
    }

    /// Rewrites `d * (x / d) + (x % d)` back into `x`.
    fn recombine(mut self) -> Affine {
        loop {
            let found = self.terms.iter().enumerate().find_map(|(mi, (atom, c))| {
                let Atom::Mod(inner, d) = atom else { return None };
                let di = self.terms.iter().position(|(a, k)| {
                    matches!(a, Atom::Div(i2, d2) if d2 == d && i2 == inner) && *k == c * d
                })?;
                Some((mi, di, (**inner).clone(), *c))
            });
            let Some((mi, di, inner, c)) = found else {
                return self;
            };
            let (first, second) = if mi > di { (mi, di) } else { (di, mi) };
            self.terms.remove(first);
            self.terms.remove(second);
            self = self + inner.scale(c);
        }
    }

    /// Resolves variable names to slots for fast repeated evaluation.
    pub fn compile(&self, slots: &HashMap<String, usize>) -> Result<CompiledAffine, String> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for (atom, coef) in &self.terms {
            let c = match atom {
                Atom::Var(v) => CAtom::Slot(*slots.get(v).ok_or_else(|| v.clone())?),
                Atom::Div(inner, d) => CAtom::Div(Box::new(inner.compile(slots)?), *d),
                Atom::Mod(inner, d) => CAtom::Mod(Box::new(inner.compile(slots)?), *d),
            };
            terms.push((c, *coef));
        }
        Ok(CompiledAffine {
            terms,
            constant: self.constant,
        })
    }
}

impl From<i64> for Affine {
    fn from(c: i64) -> Self {
        Affine::constant(c)
    }
}

impl Add for Affine {
    type Output = Affine;
    fn add(self, rhs: Affine) -> Affine {
        let mut terms = self.terms;
        terms.extend(rhs.terms);
        Affine::from_parts(terms, self.constant + rhs.constant)
    }
}

impl Add<i64> for Affine {
    type Output = Affine;
    fn add(mut self, rhs: i64) -> Affine {
        self.constant += rhs;
        self
    }
}

impl Sub for Affine {
    type Output = Affine;
    fn sub(self, rhs: Affine) -> Affine {
        self + rhs.scale(-1)
    }
}

impl Sub<i64> for Affine {
    type Output = Affine;
    fn sub(mut self, rhs: i64) -> Affine {
        self.constant -= rhs;
        self
    }
}

impl Mul<i64> for Affine {
    type Output = Affine;
    fn mul(self, rhs: i64) -> Affine {
        self.scale(rhs)
    }
}

impl Neg for Affine {
    type Output = Affine;
    fn neg(self) -> Affine {
        self.scale(-1)
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Var(v) => write!(f, "{v}"),
            Atom::Div(inner, d) => write!(f, "({inner} / {d})"),
            Atom::Mod(inner, d) => write!(f, "({inner} % {d})"),
        }
    }
}

impl fmt::Display for Affine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "{}", self.constant);
        }
        for (i, (atom, coef)) in self.terms.iter().enumerate() {
            let mag = coef.abs();
            if i == 0 {
                if *coef < 0 {
                    write!(f, "-")?;
                }
            } else if *coef < 0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            if mag == 1 {
                write!(f, "{atom}")?;
            } else {
                write!(f, "{mag}*{atom}")?;
            }
        }
        match self.constant {
            0 => Ok(()),
            c if c < 0 => write!(f, " - {}", -c),
            c => write!(f, " + {c}"),
        }
    }
}

#[derive(Clone, Debug)]
enum CAtom {
    Slot(usize),
    Div(Box<CompiledAffine>, i64),
    Mod(Box<CompiledAffine>, i64),
}

/// Slot-indexed form of an [`Affine`].
#[derive(Clone, Debug)]
pub struct CompiledAffine {
    terms: Vec<(CAtom, i64)>,
    constant: i64,
}

impl CompiledAffine {
    #[inline]
    pub fn eval(&self, env: &[i64]) -> i64 {
        let mut acc = self.constant;
        for (atom, coef) in &self.terms {
            let v = match atom {
                CAtom::Slot(s) => env[*s],
                CAtom::Div(inner, d) => inner.eval(env).div_euclid(*d),
                CAtom::Mod(inner, d) => inner.eval(env).rem_euclid(*d),
            };
            acc += coef * v;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(n: &str) -> Affine {
        Affine::var(n)
    }

    #[test]
    fn display_is_readable() {
        let e = v("h") * 2 + v("kh") - 1;
        assert_eq!(e.to_string(), "2*h + kh - 1");
        assert_eq!((-v("g")).to_string(), "-g");
        assert_eq!(Affine::constant(0).to_string(), "0");
        assert_eq!(v("f").floor_div(5).to_string(), "(f / 5)");
        assert_eq!(v("f").modulo(5).to_string(), "(f % 5)");
    }

    #[test]
    fn terms_merge_and_cancel() {
        let e = v("a") + v("b") - v("a");
        assert_eq!(e, v("b"));
        assert_eq!((v("a") * 3 + v("a")).to_string(), "4*a");
    }

    #[test]
    fn strip_mine_roundtrip_simplifies() {
        // i = io*4 + ii; i / 4 -> io, i % 4 -> ii
        let i = v("io") * 4 + v("ii");
        let mut ranges = HashMap::new();
        ranges.insert("io".to_string(), (0, 2));
        ranges.insert("ii".to_string(), (0, 3));
        assert_eq!(i.floor_div(4).simplify(&ranges), v("io"));
        assert_eq!(i.modulo(4).simplify(&ranges), v("ii"));
    }

    #[test]
    fn nested_division_collapses() {
        assert_eq!(v("x").floor_div(2).floor_div(3), v("x").floor_div(6));
    }

    #[test]
    fn substitution_reaches_inside_atoms() {
        let e = v("f").floor_div(5) + v("f").modulo(5);
        let s = e.substitute("f", &(v("a") * 5 + v("b")));
        // (5a + b)/5 -> a + b/5 ; (5a + b)%5 -> b%5
        assert_eq!(s, v("a") + v("b").floor_div(5) + v("b").modulo(5));
    }

    #[test]
    fn compile_matches_eval() {
        let e = (v("a") * 3 - v("b") + 7).floor_div(4) + v("b").modulo(3) * 2;
        let slots: HashMap<String, usize> =
            [("a".to_string(), 0), ("b".to_string(), 1)].into_iter().collect();
        let c = e.compile(&slots).unwrap();
        for a in -5..5 {
            for b in -5..5 {
                let direct = e
                    .eval_with(&|n| match n {
                        "a" => Some(a),
                        "b" => Some(b),
                        _ => None,
                    })
                    .unwrap();
                assert_eq!(c.eval(&[a, b]), direct);
            }
        }
    }

    #[test]
    fn recombines_div_mod_pairs() {
        let f = v("f");
        let e = f.floor_div(4).scale(4) + f.modulo(4) + 1;
        let ranges: HashMap<String, Interval> = [("f".to_string(), (0, 15))].into_iter().collect();
        assert_eq!(e.simplify(&ranges), v("f") + 1);
    }

    proptest! {
        #[test]
        fn range_contains_every_value(
            ca in -4i64..5, cb in -4i64..5, k in -6i64..7, d in 1i64..6,
            alo in -3i64..3, alen in 0i64..5, blo in 0i64..3, blen in 0i64..5,
        ) {
            let inner = v("a") * ca + v("b") * cb + k;
            let e = inner.floor_div(d) + inner.modulo(d) * 2 - v("a");
            let mut ranges = HashMap::new();
            ranges.insert("a".to_string(), (alo, alo + alen));
            ranges.insert("b".to_string(), (blo, blo + blen));
            let (lo, hi) = e.range(&ranges).unwrap();
            let simplified = e.simplify(&ranges);
            for a in alo..=alo + alen {
                for b in blo..=blo + blen {
                    let look = |n: &str| match n { "a" => Some(a), "b" => Some(b), _ => None };
                    let val = e.eval_with(&look).unwrap();
                    prop_assert!(lo <= val && val <= hi);
                    prop_assert_eq!(simplified.eval_with(&look).unwrap(), val);
                }
            }
        }
    }
}
