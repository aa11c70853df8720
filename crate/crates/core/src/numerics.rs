//! Dense `f64` vectors and a scalar reverse-mode differentiation tape.
//!
//! The tape records every scalar operation as a node holding its value and
//! the local partial derivatives with respect to its parents. Parents always
//! precede children, so [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use metrix::numerics::Tape;
//!
//! let mut tape = Tape::new();
//! let a = tape.lift(2.0).unwrap();
//! let b = tape.lift(3.0).unwrap();
//! let y = tape.mul(a, b);
//! let grads = tape.backward(y);
//! assert_eq!(grads.get(a), 3.0);
//! assert_eq!(grads.get(b), 2.0);
//! ```

use std::ops::Deref;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};

/// A finite, non-empty dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vec64(Vec<f64>);

impl Vec64 {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("vector must have positive dimension"));
        }
        if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(bad));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector must have positive dimension");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vec64) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Returns the unit vector in the same direction.
    pub fn normalized(&self) -> Result<Vec64> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(Self(self.0.iter().map(|v| v / n).collect()))
    }
}

impl Deref for Vec64 {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimMismatch { expected, got });
    }
    Ok(())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(0);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Append-only record of scalar operations.
///
/// A tape is single-writer. Build independent tapes for independent graphs.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    values: Vec<f64>,
    // Parent edges of node `i` live in `edges[offsets[i]..offsets[i + 1]]`.
    offsets: Vec<usize>,
    edges: Vec<(usize, f64)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            values: Vec::new(),
            offsets: vec![0],
            edges: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.check(v);
        self.values[v.index]
    }

    fn check(&self, v: Var) {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        debug_assert!(v.index < self.values.len());
    }

    fn push(&mut self, value: f64, parents: &[(Var, f64)]) -> Var {
        for &(p, partial) in parents {
            self.check(p);
            self.edges.push((p.index, partial));
        }
        self.values.push(value);
        self.offsets.push(self.edges.len());
        Var {
            tape: self.id,
            index: self.values.len() - 1,
        }
    }

    /// Records a leaf node. Rejects non-finite inputs.
    pub fn lift(&mut self, x: f64) -> Result<Var> {
        if !x.is_finite() {
            return Err(Error::NonFinite(x));
        }
        Ok(self.push(x, &[]))
    }

    pub fn lift_all(&mut self, xs: &[f64]) -> Result<Vec<Var>> {
        xs.iter().map(|&x| self.lift(x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, &[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, &[(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x * y, &[(a, y), (b, x)])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if y == 0.0 {
            return Err(Error::DivByZero);
        }
        Ok(self.push(x / y, &[(a, 1.0 / y), (b, -x / (y * y))]))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, &[(a, c)])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, &[(a, 1.0)])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.push(v, &[(a, v)])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x <= 0.0 || x.is_nan() {
            return Err(Error::LogDomain(x));
        }
        Ok(self.push(x.ln(), &[(a, 1.0 / x)]))
    }

    /// `[x]₊`. The subgradient at exactly zero is zero.
    pub fn hinge(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x > 0.0 {
            self.push(x, &[(a, 1.0)])
        } else {
            self.push(0.0, &[(a, 0.0)])
        }
    }

    /// Sum of all terms; an empty sum is a zero leaf.
    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let mut iter = terms.iter().copied();
        let Some(first) = iter.next() else {
            return self.push(0.0, &[]);
        };
        iter.fold(first, |acc, t| self.add(acc, t))
    }

    /// Inner product, expanded into scalar multiply/add nodes.
    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Result<Var> {
        check_dims(a.len(), b.len())?;
        let products: Vec<Var> = a.iter().zip(b).map(|(&x, &y)| self.mul(x, y)).collect();
        Ok(self.sum(&products))
    }

    /// Gradient of `root` with respect to every node on the tape.
    pub fn backward(&self, root: Var) -> Gradients {
        self.check(root);
        let mut grads = vec![0.0; self.values.len()];
        grads[root.index] = 1.0;
        for node in (0..=root.index).rev() {
            let g = grads[node];
            if g == 0.0 {
                continue;
            }
            for &(parent, partial) in &self.edges[self.offsets[node]..self.offsets[node + 1]] {
                grads[parent] += g * partial;
            }
        }
        Gradients {
            tape: self.id,
            grads,
        }
    }
}

/// Result of [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u32,
    grads: Vec<f64>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> f64 {
        assert_eq!(v.tape, self.tape, "variable belongs to a different tape");
        self.grads[v.index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.grads
    }
}

/// Central finite differences `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h` for every coordinate.
pub fn finite_diff<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    let mut point = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        point[i] = x[i] + h;
        let up = f(&point)?;
        point[i] = x[i] - h;
        let down = f(&point)?;
        point[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}
