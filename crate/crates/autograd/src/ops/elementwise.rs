use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use crate::kernels::{broadcast_shape, reduce_to, zip};
use crate::{Float, Tensor};

impl<T: Float> Tensor<T> {
    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + Send + Sync + 'static) -> Self {
        let x = self.data_arc();
        let data: Vec<T> = x.iter().map(|&v| f(v)).collect();
        let y = Arc::new(data);
        let y_saved = Arc::clone(&y);
        Tensor::from_op_shared(y, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            let grad = g
                .iter()
                .zip(x.iter().zip(y_saved.iter()))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(grad)]
        })
    }

    pub fn add(&self, other: &Self) -> Self {
        let shape = broadcast_shape(self.shape(), other.shape());
        let data = zip(self.data(), self.shape(), other.data(), other.shape(), &shape, |a, b| a + b);
        let (sa, sb, so) = (self.shape().to_vec(), other.shape().to_vec(), shape.clone());
        Tensor::from_op(data, shape, vec![self.clone(), other.clone()], move |g, need| {
            vec![
                need[0].then(|| reduce_to(g, &so, &sa)),
                need[1].then(|| reduce_to(g, &so, &sb)),
            ]
        })
    }

    pub fn sub(&self, other: &Self) -> Self {
        let shape = broadcast_shape(self.shape(), other.shape());
        let data = zip(self.data(), self.shape(), other.data(), other.shape(), &shape, |a, b| a - b);
        let (sa, sb, so) = (self.shape().to_vec(), other.shape().to_vec(), shape.clone());
        Tensor::from_op(data, shape, vec![self.clone(), other.clone()], move |g, need| {
            vec![
                need[0].then(|| reduce_to(g, &so, &sa)),
                need[1].then(|| reduce_to(g, &so, &sb).into_iter().map(|v| -v).collect()),
            ]
        })
    }

    pub fn mul(&self, other: &Self) -> Self {
        let shape = broadcast_shape(self.shape(), other.shape());
        let data = zip(self.data(), self.shape(), other.data(), other.shape(), &shape, |a, b| a * b);
        let (a, b) = (self.data_arc(), other.data_arc());
        let (sa, sb, so) = (self.shape().to_vec(), other.shape().to_vec(), shape.clone());
        Tensor::from_op(data, shape, vec![self.clone(), other.clone()], move |g, need| {
            vec![
                need[0].then(|| reduce_to(&zip(g, &so, &b, &sb, &so, |g, b| g * b), &so, &sa)),
                need[1].then(|| reduce_to(&zip(g, &so, &a, &sa, &so, |g, a| g * a), &so, &sb)),
            ]
        })
    }

    pub fn div(&self, other: &Self) -> Self {
        let shape = broadcast_shape(self.shape(), other.shape());
        let data = Arc::new(zip(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &shape,
            |a, b| a / b,
        ));
        let (b, out) = (other.data_arc(), Arc::clone(&data));
        let (sa, sb, so) = (self.shape().to_vec(), other.shape().to_vec(), shape.clone());
        Tensor::from_op_shared(data, shape, vec![self.clone(), other.clone()], move |g, need| {
            let ga = need[0].then(|| reduce_to(&zip(g, &so, &b, &sb, &so, |g, b| g / b), &so, &sa));
            let gb = need[1].then(|| {
                let go: Vec<T> = g.iter().zip(out.iter()).map(|(&g, &y)| -g * y).collect();
                reduce_to(&zip(&go, &so, &b, &sb, &so, |v, b| v / b), &so, &sb)
            });
            vec![ga, gb]
        })
    }

    /// `mul * x + add`.
    pub fn affine(&self, mul: f64, add: f64) -> Self {
        let (m, a) = (T::from_f64(mul), T::from_f64(add));
        let data = self.data().iter().map(|&v| m * v + a).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            vec![Some(g.iter().map(|&g| g * m).collect())]
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        self.affine(s, 0.0)
    }

    pub fn add_scalar(&self, s: f64) -> Self {
        self.affine(1.0, s)
    }

    pub fn neg(&self) -> Self {
        self.affine(-1.0, 0.0)
    }

    pub fn sqr(&self) -> Self {
        let two = T::from_f64(2.0);
        self.unary(|x| x * x, move |x, _| two * x)
    }

    pub fn sqrt(&self) -> Self {
        let half = T::from_f64(0.5);
        self.unary(|x| x.sqrt(), move |_, y| half / y)
    }

    /// Subgradient 0 at the kink.
    pub fn abs(&self) -> Self {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn exp(&self) -> Self {
        self.unary(|x| x.exp(), |_, y| y)
    }

    /// GELU with the exact Gaussian CDF, `x Φ(x)`.
    pub fn gelu(&self) -> Self {
        let half = T::from_f64(0.5);
        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
        self.unary(
            move |x| half * x * (T::one() + (x * inv_sqrt2).erf()),
            move |x, _| {
                let cdf = half * (T::one() + (x * inv_sqrt2).erf());
                let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                cdf + x * pdf
            },
        )
    }
}

macro_rules! binary_operator {
    ($trait:ident, $method:ident) => {
        impl<T: Float> $trait<&Tensor<T>> for &Tensor<T> {
            type Output = Tensor<T>;
            fn $method(self, rhs: &Tensor<T>) -> Tensor<T> {
                Tensor::$method(self, rhs)
            }
        }
        impl<T: Float> $trait<Tensor<T>> for Tensor<T> {
            type Output = Tensor<T>;
            fn $method(self, rhs: Tensor<T>) -> Tensor<T> {
                Tensor::$method(&self, &rhs)
            }
        }
        impl<T: Float> $trait<&Tensor<T>> for Tensor<T> {
            type Output = Tensor<T>;
            fn $method(self, rhs: &Tensor<T>) -> Tensor<T> {
                Tensor::$method(&self, rhs)
            }
        }
        impl<T: Float> $trait<Tensor<T>> for &Tensor<T> {
            type Output = Tensor<T>;
            fn $method(self, rhs: Tensor<T>) -> Tensor<T> {
                Tensor::$method(self, &rhs)
            }
        }
    };
}

binary_operator!(Add, add);
binary_operator!(Sub, sub);
binary_operator!(Mul, mul);
binary_operator!(Div, div);

impl<T: Float> Neg for &Tensor<T> {
    type Output = Tensor<T>;
    fn neg(self) -> Tensor<T> {
        Tensor::neg(self)
    }
}

impl<T: Float> Neg for Tensor<T> {
    type Output = Tensor<T>;
    fn neg(self) -> Tensor<T> {
        Tensor::neg(&self)
    }
}
