use super::{Backward, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Log,
    Exp,
    Neg,
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(
            self,
            ElementwiseOp::Add
                | ElementwiseOp::Sub
                | ElementwiseOp::Mul
                | ElementwiseOp::Div
                | ElementwiseOp::Pow
        )
    }
}

/// Right-hand operand of a binary elementwise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a, T: Element> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

struct BinaryBackward(Binary);

impl<T: Element> Backward<T> for BinaryBackward {
    fn name(&self) -> &'static str {
        match self.0 {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
            Binary::Pow => "pow",
        }
    }

    fn backward(&self, inputs: &[Tensor<T>], output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let need_a = a.requires_grad();
        let need_b = b.requires_grad();
        let (av, bv) = (a.data(), b.data());
        let map = |f: &dyn Fn(usize) -> T| -> Vec<T> { (0..grad.len()).map(f).collect() };
        let (ga, gb): (Option<Vec<T>>, Option<Vec<T>>) = match self.0 {
            Binary::Add => (
                need_a.then(|| grad.to_vec()),
                need_b.then(|| grad.to_vec()),
            ),
            Binary::Sub => (
                need_a.then(|| grad.to_vec()),
                need_b.then(|| grad.iter().map(|&g| -g).collect()),
            ),
            Binary::Mul => (
                need_a.then(|| map(&|i| grad[i] * bv[i])),
                need_b.then(|| map(&|i| grad[i] * av[i])),
            ),
            Binary::Div => (
                need_a.then(|| map(&|i| grad[i] / bv[i])),
                need_b.then(|| map(&|i| -grad[i] * av[i] / (bv[i] * bv[i]))),
            ),
            Binary::Pow => (
                need_a.then(|| map(&|i| pow_base_grad(grad[i], av[i], bv[i]))),
                need_b.then(|| map(&|i| grad[i] * output[i] * av[i].ln())),
            ),
        };
        vec![ga, gb]
    }
}

fn pow_base_grad<T: Element>(g: T, base: T, exponent: T) -> T {
    if exponent == T::zero() {
        T::zero()
    } else {
        g * exponent * base.powf(exponent - T::one())
    }
}

#[derive(Clone, Copy)]
enum WithScalar {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    /// `s - x`
    RSub,
}

struct ScalarBackward<T> {
    kind: WithScalar,
    s: T,
}

impl<T: Element> Backward<T> for ScalarBackward<T> {
    fn name(&self) -> &'static str {
        match self.kind {
            WithScalar::Add => "add_scalar",
            WithScalar::Sub => "sub_scalar",
            WithScalar::Mul => "mul_scalar",
            WithScalar::Div => "div_scalar",
            WithScalar::Pow => "pow_scalar",
            WithScalar::RSub => "rsub_scalar",
        }
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let a = inputs[0].data();
        let s = self.s;
        let g: Vec<T> = match self.kind {
            WithScalar::Add | WithScalar::Sub => grad.to_vec(),
            WithScalar::Mul => grad.iter().map(|&g| g * s).collect(),
            WithScalar::Div => grad.iter().map(|&g| g / s).collect(),
            WithScalar::Pow => grad
                .iter()
                .zip(a)
                .map(|(&g, &x)| pow_base_grad(g, x, s))
                .collect(),
            WithScalar::RSub => grad.iter().map(|&g| -g).collect(),
        };
        vec![Some(g)]
    }
}

#[derive(Clone, Copy)]
enum Unary {
    Log,
    Exp,
    Neg,
    Relu,
    Sigmoid,
}

struct UnaryBackward(Unary);

impl<T: Element> Backward<T> for UnaryBackward {
    fn name(&self) -> &'static str {
        match self.0 {
            Unary::Log => "log",
            Unary::Exp => "exp",
            Unary::Neg => "neg",
            Unary::Relu => "relu",
            Unary::Sigmoid => "sigmoid",
        }
    }

    fn backward(&self, inputs: &[Tensor<T>], output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let a = inputs[0].data();
        let g: Vec<T> = match self.0 {
            Unary::Log => grad.iter().zip(a).map(|(&g, &x)| g / x).collect(),
            Unary::Exp => grad.iter().zip(output).map(|(&g, &y)| g * y).collect(),
            Unary::Neg => grad.iter().map(|&g| -g).collect(),
            Unary::Relu => grad
                .iter()
                .zip(a)
                .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                .collect(),
            Unary::Sigmoid => grad
                .iter()
                .zip(output)
                .map(|(&g, &y)| g * y * (T::one() - y))
                .collect(),
        };
        vec![Some(g)]
    }
}

struct ClampBackward<T> {
    lo: T,
    hi: T,
}

impl<T: Element> Backward<T> for ClampBackward<T> {
    fn name(&self) -> &'static str {
        "clamp"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let g = grad
            .iter()
            .zip(inputs[0].data())
            .map(|(&g, &x)| {
                if x >= self.lo && x <= self.hi {
                    g
                } else {
                    T::zero()
                }
            })
            .collect();
        vec![Some(g)]
    }
}

/// Logistic function with the result kept strictly inside `(0, 1)`.
pub(crate) fn sigmoid_scalar<T: Element>(x: T) -> T {
    let one = T::one();
    let y = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    let eps = T::epsilon();
    y.max(eps).min(one - eps)
}

impl<T: Element> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: Binary, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, "elementwise")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            BinaryBackward(kind),
        ))
    }

    fn with_scalar(&self, s: T, kind: WithScalar, f: impl Fn(T) -> T) -> Self {
        let data = self.data().iter().map(|&a| f(a)).collect();
        Self::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            ScalarBackward { kind, s },
        )
    }

    fn unary(&self, kind: Unary, f: impl Fn(T) -> T) -> Self {
        let data = self.data().iter().map(|&a| f(a)).collect();
        Self::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            UnaryBackward(kind),
        )
    }

    /// Generic elementwise entry point. Binary kinds need `rhs`; unary kinds
    /// (`Log`, `Exp`, `Neg`) must not be given one.
    pub fn elementwise(&self, op: ElementwiseOp, rhs: Option<Operand<'_, T>>) -> Result<Self> {
        match (op, rhs) {
            (ElementwiseOp::Log, None) => self.try_log(),
            (ElementwiseOp::Exp, None) => Ok(self.exp()),
            (ElementwiseOp::Neg, None) => Ok(self.neg()),
            (op, Some(Operand::Tensor(b))) if op.is_binary() => match op {
                ElementwiseOp::Add => self.add(b),
                ElementwiseOp::Sub => self.sub(b),
                ElementwiseOp::Mul => self.mul(b),
                ElementwiseOp::Div => self.div(b),
                _ => self.pow(b),
            },
            (op, Some(Operand::Scalar(s))) if op.is_binary() => Ok(match op {
                ElementwiseOp::Add => self.add_scalar(s),
                ElementwiseOp::Sub => self.sub_scalar(s),
                ElementwiseOp::Mul => self.mul_scalar(s),
                ElementwiseOp::Div => self.div_scalar(s),
                _ => self.pow_scalar(s),
            }),
            (op, _) => Err(Error::contract(format!(
                "{op:?} {} a right-hand operand",
                if op.is_binary() { "needs" } else { "does not take" }
            ))),
        }
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.binary(other, Binary::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        self.binary(other, Binary::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        self.binary(other, Binary::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Self> {
        self.binary(other, Binary::Div, |a, b| a / b)
    }

    /// Elementwise `self ^ other`; the exponent gradient assumes a positive base.
    pub fn pow(&self, other: &Tensor<T>) -> Result<Self> {
        self.binary(other, Binary::Pow, |a, b| a.powf(b))
    }

    pub fn add_scalar(&self, s: T) -> Self {
        self.with_scalar(s, WithScalar::Add, |a| a + s)
    }

    pub fn sub_scalar(&self, s: T) -> Self {
        self.with_scalar(s, WithScalar::Sub, |a| a - s)
    }

    pub fn mul_scalar(&self, s: T) -> Self {
        self.with_scalar(s, WithScalar::Mul, |a| a * s)
    }

    pub fn div_scalar(&self, s: T) -> Self {
        self.with_scalar(s, WithScalar::Div, |a| a / s)
    }

    pub fn pow_scalar(&self, s: T) -> Self {
        self.with_scalar(s, WithScalar::Pow, |a| a.powf(s))
    }

    /// `s - self`
    pub fn rsub_scalar(&self, s: T) -> Self {
        self.with_scalar(s, WithScalar::RSub, |a| s - a)
    }

    /// Natural log. Fails on any non-positive element; clamp first.
    pub fn try_log(&self) -> Result<Self> {
        if let Some(bad) = self.data().iter().find(|&&v| !(v > T::zero())) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(Unary::Log, |a| a.ln()))
    }

    pub fn exp(&self) -> Self {
        self.unary(Unary::Exp, |a| a.exp())
    }

    pub fn neg(&self) -> Self {
        self.unary(Unary::Neg, |a| -a)
    }

    /// `max(x, 0)`, with subgradient 0 at 0.
    pub fn relu(&self) -> Self {
        self.unary(Unary::Relu, |a| if a > T::zero() { a } else { T::zero() })
    }

    /// Logistic sigmoid, clamped to `[eps, 1 - eps]` (machine epsilon of `T`)
    /// so that outputs stay strictly inside `(0, 1)`.
    pub fn sigmoid(&self) -> Self {
        self.unary(Unary::Sigmoid, sigmoid_scalar)
    }

    /// Clamp into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&self, lo: T, hi: T) -> Self {
        let data = self.data().iter().map(|&a| a.max(lo).min(hi)).collect();
        Self::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            ClampBackward { lo, hi },
        )
    }
}
