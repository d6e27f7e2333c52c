#![allow(dead_code)]

use std::cmp::Ordering;

use geneig::generate::{generate, GeneratorConfig};
use geneig::matrix::Matrix;
use geneig::pencil::RealSchurPencil;
use num_bigint::BigUint;

/// Exact non-negative dyadic rational `m * 2^e`.
#[derive(Clone, Debug)]
pub struct Dyadic {
    m: BigUint,
    e: i64,
}

impl Dyadic {
    /// `|x| * 2^k` for finite `x`.
    pub fn from_f64(x: f64, k: i32) -> Self {
        assert!(x.is_finite());
        let bits = x.abs().to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if exp == 0 { (frac, -1074) } else { (frac | (1 << 52), exp - 1075) };
        Dyadic { m: BigUint::from(m), e: e + k as i64 }
    }

    pub fn mul(&self, o: &Dyadic) -> Dyadic {
        Dyadic { m: &self.m * &o.m, e: self.e + o.e }
    }

    pub fn add(&self, o: &Dyadic) -> Dyadic {
        let e = self.e.min(o.e);
        Dyadic { m: (&self.m << (self.e - e) as usize) + (&o.m << (o.e - e) as usize), e }
    }

    pub fn scale(&self, k: i64) -> Dyadic {
        Dyadic { m: self.m.clone(), e: self.e + k }
    }

    pub fn is_zero(&self) -> bool {
        self.m.bits() == 0
    }

    pub fn cmp(&self, o: &Dyadic) -> Ordering {
        match (self.is_zero(), o.is_zero()) {
            (true, true) => return Ordering::Equal,
            (true, false) => return Ordering::Less,
            (false, true) => return Ordering::Greater,
            _ => {}
        }
        let (l1, l2) = (self.m.bits() as i64 + self.e, o.m.bits() as i64 + o.e);
        if l1 != l2 {
            return l1.cmp(&l2);
        }
        let e = self.e.min(o.e);
        (&self.m << (self.e - e) as usize).cmp(&(&o.m << (o.e - e) as usize))
    }

    pub fn le(&self, o: &Dyadic) -> bool {
        self.cmp(o) != Ordering::Greater
    }
}

pub fn omega() -> Dyadic {
    Dyadic::from_f64(f64::MAX, 0)
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn bitwise_equal(a: &Matrix, b: &Matrix) -> bool {
    a.rows() == b.rows() && a.cols() == b.cols() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn default_pencil(m: usize, seed: u64) -> RealSchurPencil {
    generate(&GeneratorConfig::new(m, seed)).unwrap().pencil
}

/// Checks one protect_division output exactly; returns a description of the violation.
pub fn check_division(b: f64, t: f64, e: i32) -> Result<(), String> {
    if e > 0 {
        return Err(format!("exponent {e} > 0"));
    }
    let bound = Dyadic::from_f64(t, 0).mul(&omega());
    let scaled = Dyadic::from_f64(b, e);
    if !scaled.le(&bound) {
        return Err(format!("2^{e} * {b:e} > {t:e} * OMEGA"));
    }
    let unscaled_safe = Dyadic::from_f64(b, 0).le(&bound);
    if unscaled_safe && e != 0 {
        return Err(format!("scaled by 2^{e} although {b:e} <= {t:e} * OMEGA"));
    }
    // Not more than a factor of 4 below the largest admissible power of two.
    if e < 0 && Dyadic::from_f64(b, e + 2).le(&bound) {
        return Err(format!("2^{e} is needlessly small for b = {b:e}, t = {t:e}"));
    }
    Ok(())
}

/// Checks one protect_update output exactly.
pub fn check_update(y: f64, t: f64, x: f64, e: i32) -> Result<(), String> {
    if e > 0 {
        return Err(format!("exponent {e} > 0"));
    }
    let om = omega();
    let ys = Dyadic::from_f64(y, e);
    let txs = Dyadic::from_f64(t, 0).mul(&Dyadic::from_f64(x, e));
    if !ys.add(&txs).le(&om) {
        return Err(format!("2^{e} (y + t x) > OMEGA for y = {y:e}, t = {t:e}, x = {x:e}"));
    }
    if e < 0 {
        let half = om.scale(-1);
        if !ys.le(&half) || !txs.le(&half) {
            return Err(format!("scaled terms exceed OMEGA/2 for y = {y:e}, t = {t:e}, x = {x:e}, e = {e}"));
        }
        // Within a factor of 8 of the largest admissible power of two.
        let up = Dyadic::from_f64(y, e + 3).add(&Dyadic::from_f64(t, 0).mul(&Dyadic::from_f64(x, e + 3)));
        if up.le(&om) {
            return Err(format!("2^{e} is needlessly small for y = {y:e}, t = {t:e}, x = {x:e}"));
        }
    }
    Ok(())
}
