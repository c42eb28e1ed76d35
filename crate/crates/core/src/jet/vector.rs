use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JetError {
    #[error("shape mismatch: ({0}, {1}) vs ({2}, {3})")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("division by zero at element {0}")]
    DivisionByZero(usize),
    #[error("square root of non-positive value at element {0}")]
    NonPositiveSqrt(usize),
}

/// A batch of `n` dual numbers with `d` gradient components each, stored as
/// a Structure-of-Arrays: one contiguous value lane and `d` contiguous
/// gradient lanes of length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct JetVector<T> {
    n: usize,
    d: usize,
    values: Vec<T>,
    /// lane-major: `grads[j * n + i]` is the derivative of element `i` w.r.t. parameter `j`
    grads: Vec<T>,
}

impl<T: Real> JetVector<T> {
    /// Values with zero gradient.
    pub fn constant(values: Vec<T>, d: usize) -> Self {
        let n = values.len();
        JetVector {
            n,
            d,
            values,
            grads: vec![T::zero(); n * d],
        }
    }

    /// Values seeded as independent variable `lane`.
    pub fn variable(values: Vec<T>, d: usize, lane: usize) -> Self {
        assert!(lane < d, "seed lane {lane} out of range for d = {d}");
        let mut v = Self::constant(values, d);
        v.grads[lane * v.n..(lane + 1) * v.n].fill(T::one());
        v
    }

    pub fn from_parts(values: Vec<T>, grads: Vec<T>, d: usize) -> Self {
        assert_eq!(
            grads.len(),
            values.len() * d,
            "gradient storage must be n * d"
        );
        JetVector {
            n: values.len(),
            d,
            values,
            grads,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn grad_dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Gradient lane `j`: derivatives of every element w.r.t. parameter `j`.
    pub fn lane(&self, j: usize) -> &[T] {
        &self.grads[j * self.n..(j + 1) * self.n]
    }

    pub fn grads(&self) -> &[T] {
        &self.grads
    }

    pub fn grad(&self, i: usize, j: usize) -> T {
        self.grads[j * self.n + i]
    }

    fn check_shape(&self, other: &Self) -> Result<(), JetError> {
        if self.n != other.n || self.d != other.d {
            return Err(JetError::ShapeMismatch(self.n, self.d, other.n, other.d));
        }
        Ok(())
    }

    fn zip_map(
        &self,
        other: &Self,
        value: impl Fn(T, T) -> T,
        grad: impl Fn(T, T, T, T) -> T,
    ) -> Self {
        let n = self.n;
        let values: Vec<T> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| value(a, b))
            .collect();
        let mut grads = Vec::with_capacity(n * self.d);
        for j in 0..self.d {
            let (ga, gb) = (self.lane(j), other.lane(j));
            grads.extend((0..n).map(|i| grad(self.values[i], other.values[i], ga[i], gb[i])));
        }
        JetVector {
            n,
            d: self.d,
            values,
            grads,
        }
    }

    /// Elementwise map with derivative `dvalue(v)` applied lane-wise.
    fn chain(&self, value: impl Fn(T) -> T, derivative: impl Fn(T) -> T) -> Self {
        let n = self.n;
        let values: Vec<T> = self.values.iter().map(|&v| value(v)).collect();
        let scale: Vec<T> = self.values.iter().map(|&v| derivative(v)).collect();
        let mut grads = Vec::with_capacity(n * self.d);
        for j in 0..self.d {
            grads.extend(self.lane(j).iter().zip(&scale).map(|(&g, &s)| g * s));
        }
        JetVector {
            n,
            d: self.d,
            values,
            grads,
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, JetError> {
        self.check_shape(other)?;
        Ok(self.zip_map(other, |a, b| a + b, |_, _, ga, gb| ga + gb))
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, JetError> {
        self.check_shape(other)?;
        Ok(self.zip_map(other, |a, b| a - b, |_, _, ga, gb| ga - gb))
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, JetError> {
        self.check_shape(other)?;
        Ok(self.zip_map(other, |a, b| a * b, |a, b, ga, gb| ga * b + a * gb))
    }

    pub fn try_div(&self, other: &Self) -> Result<Self, JetError> {
        self.check_shape(other)?;
        if let Some(i) = other.values.iter().position(|v| *v == T::zero()) {
            return Err(JetError::DivisionByZero(i));
        }
        Ok(self.zip_map(
            other,
            |a, b| a / b,
            |a, b, ga, gb| (ga * b - a * gb) / (b * b),
        ))
    }

    pub fn add_scalar(&self, s: T) -> Self {
        JetVector {
            n: self.n,
            d: self.d,
            values: self.values.iter().map(|&v| v + s).collect(),
            grads: self.grads.clone(),
        }
    }

    pub fn sub_scalar(&self, s: T) -> Self {
        self.add_scalar(-s)
    }

    pub fn mul_scalar(&self, s: T) -> Self {
        JetVector {
            n: self.n,
            d: self.d,
            values: self.values.iter().map(|&v| v * s).collect(),
            grads: self.grads.iter().map(|&g| g * s).collect(),
        }
    }

    pub fn try_div_scalar(&self, s: T) -> Result<Self, JetError> {
        if s == T::zero() {
            return Err(JetError::DivisionByZero(0));
        }
        Ok(self.mul_scalar(T::one() / s))
    }

    /// Subtracts a per-element constant (zero gradient).
    pub fn sub_values(&self, c: &[T]) -> Self {
        assert_eq!(c.len(), self.n);
        JetVector {
            n: self.n,
            d: self.d,
            values: self.values.iter().zip(c).map(|(&v, &c)| v - c).collect(),
            grads: self.grads.clone(),
        }
    }

    pub fn neg(&self) -> Self {
        JetVector {
            n: self.n,
            d: self.d,
            values: self.values.iter().map(|&v| -v).collect(),
            grads: self.grads.iter().map(|&g| -g).collect(),
        }
    }

    pub fn try_sqrt(&self) -> Result<Self, JetError> {
        if let Some(i) = self.values.iter().position(|v| !(*v > T::zero())) {
            return Err(JetError::NonPositiveSqrt(i));
        }
        let two = T::of(2.0);
        Ok(self.chain(|v| v.sqrt(), |v| T::one() / (two * v.sqrt())))
    }

    pub fn sin(&self) -> Self {
        self.chain(|v| v.sin(), |v| v.cos())
    }

    pub fn cos(&self) -> Self {
        self.chain(|v| v.cos(), |v| -v.sin())
    }

    pub fn square(&self) -> Self {
        let two = T::of(2.0);
        self.chain(|v| v * v, |v| two * v)
    }

    /// Per element, takes `if_true` where `mask` is set and `if_false` elsewhere.
    pub fn select(mask: &[bool], if_true: &Self, if_false: &Self) -> Result<Self, JetError> {
        if_true.check_shape(if_false)?;
        assert_eq!(mask.len(), if_true.n);
        let n = if_true.n;
        let values = (0..n)
            .map(|i| {
                if mask[i] {
                    if_true.values[i]
                } else {
                    if_false.values[i]
                }
            })
            .collect();
        let mut grads = Vec::with_capacity(n * if_true.d);
        for j in 0..if_true.d {
            let (a, b) = (if_true.lane(j), if_false.lane(j));
            grads.extend((0..n).map(|i| if mask[i] { a[i] } else { b[i] }));
        }
        Ok(JetVector {
            n,
            d: if_true.d,
            values,
            grads,
        })
    }

    /// Replaces masked elements by the constant `fill` (zero gradient).
    pub fn masked_fill(&self, mask: &[bool], fill: T) -> Self {
        let fill_jet = Self::constant(vec![fill; self.n], self.d);
        Self::select(mask, &fill_jet, self).expect("shapes match by construction")
    }
}

// Operator forms panic on shape mismatch; the checked `try_*` methods are
// the fallible API.
macro_rules! binary_op {
    ($trait:ident, $method:ident, $checked:ident) => {
        impl<'a, T: Real> $trait<&'a JetVector<T>> for &'a JetVector<T> {
            type Output = JetVector<T>;

            fn $method(self, rhs: &'a JetVector<T>) -> JetVector<T> {
                self.$checked(rhs).unwrap_or_else(|e| panic!("{e}"))
            }
        }
    };
}

binary_op!(Add, add, try_add);
binary_op!(Sub, sub, try_sub);
binary_op!(Mul, mul, try_mul);
binary_op!(Div, div, try_div);

impl<T: Real> Neg for &JetVector<T> {
    type Output = JetVector<T>;

    fn neg(self) -> JetVector<T> {
        JetVector::neg(self)
    }
}
