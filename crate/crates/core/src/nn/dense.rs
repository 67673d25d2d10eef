use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::ops::{affine, check_shape};
use super::{ParamId, ParamSpec, ParamTree, Real};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
}

/// `y = act(x W + b)`, applied to every row (frame) independently.
pub fn dense_forward<F: Real>(
    w: ArrayView2<F>,
    b: ArrayView1<F>,
    x: ArrayView2<F>,
    activation: Activation,
) -> Result<Array2<F>> {
    check_shape("dense input", &[x.ncols()], &[w.nrows()])?;
    check_shape("dense bias", b.shape(), &[w.ncols()])?;
    let mut y = affine(x, w, b);
    if activation == Activation::Tanh {
        y.mapv_inplace(F::tanh);
    }
    Ok(y)
}

/// Fully connected layer registered under `<prefix>.W` / `<prefix>.b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn param_specs(prefix: &str, d_in: usize, d_out: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::matrix(format!("{prefix}.W"), d_in, d_out),
            ParamSpec::bias(format!("{prefix}.b"), d_out),
        ]
    }

    pub fn bind<F: Real>(tree: &ParamTree<F>, prefix: &str, activation: Activation) -> Result<Self> {
        let w = tree.expect_id(&format!("{prefix}.W"))?;
        let b = tree.expect_id(&format!("{prefix}.b"))?;
        let shape = tree.get(w).shape().to_vec();
        Ok(Self {
            w,
            b,
            d_in: shape[0],
            d_out: shape[1],
            activation,
        })
    }

    pub fn forward<F: Real>(&self, p: &ParamTree<F>, x: ArrayView2<F>) -> Result<Array2<F>> {
        dense_forward(p.mat(self.w), p.vec(self.b), x, self.activation)
    }

    /// Accumulates parameter gradients and returns `dL/dx`. `y` is the
    /// forward output, which is all the tanh derivative needs.
    pub fn backward<F: Real>(
        &self,
        p: &ParamTree<F>,
        g: &mut ParamTree<F>,
        x: ArrayView2<F>,
        y: ArrayView2<F>,
        dy: ArrayView2<F>,
    ) -> Array2<F> {
        let da = match self.activation {
            Activation::Identity => dy.to_owned(),
            Activation::Tanh => {
                let mut da = dy.to_owned();
                da.zip_mut_with(&y, |d, &yv| *d = *d * (F::one() - yv * yv));
                da
            }
        };
        let mut gw = g.mat_mut(self.w);
        gw += &x.t().dot(&da);
        let mut gb = g.vec_mut(self.b);
        gb += &da.sum_axis(Axis(0));
        da.dot(&p.mat(self.w).t())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, GradCheckOptions};
    use crate::nn::init_params;
    use crate::rng::Prng;
    use ndarray::{array, Array1};

    #[test]
    fn zero_weights_give_bias() {
        let w = Array2::<f64>::zeros((3, 2));
        let b = array![0.5, -1.0];
        let x = array![[1.0, 2.0, 3.0], [-4.0, 0.0, 9.0]];
        let y = dense_forward(w.view(), b.view(), x.view(), Activation::Identity).unwrap();
        assert!(y.rows().into_iter().all(|r| r == b));
        let t = dense_forward(w.view(), b.view(), x.view(), Activation::Tanh).unwrap();
        assert!(t.rows().into_iter().all(|r| r == b.mapv(f64::tanh)));
    }

    #[test]
    fn identity_weights_pass_through() {
        let w = Array2::<f64>::eye(4);
        let b = Array1::zeros(4);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i * 4 + j) as f64 - 7.5);
        let y = dense_forward(w.view(), b.view(), x.view(), Activation::Identity).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let w = Array2::<f64>::zeros((3, 2));
        let b = Array1::zeros(2);
        let x = Array2::zeros((1, 4));
        assert!(dense_forward(w.view(), b.view(), x.view(), Activation::Identity).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut prng = Prng::new(3);
        let mut params: ParamTree<f64> = init_params(&Dense::param_specs("d", 6, 4), &mut prng).unwrap();
        params.slice_mut(params.id("d.b").unwrap()).iter_mut().for_each(|v| *v = prng.normal() * 0.3);
        let x = Array2::from_shape_fn((5, 6), |_| prng.normal());
        let weights = Array2::from_shape_fn((5, 4), |_| prng.normal());
        for act in [Activation::Identity, Activation::Tanh] {
            let layer = Dense::bind(&params, "d", act).unwrap();
            let loss = |p: &ParamTree<f64>| (&layer.forward(p, x.view()).unwrap() * &weights).sum();
            let mut grads = params.zeros_like();
            let y = layer.forward(&params, x.view()).unwrap();
            let dx = layer.backward(&params, &mut grads, x.view(), y.view(), weights.view());
            let report = grad_check(&params, &grads, loss, &GradCheckOptions::with_tolerance(1e-6));
            assert!(report.passed(), "{act:?}: {report:?}");

            // input gradient by central differences
            for (i, j) in [(0, 0), (2, 3), (4, 5)] {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[[i, j]] += 1e-5;
                xm[[i, j]] -= 1e-5;
                let f = |x: &Array2<f64>| (&layer.forward(&params, x.view()).unwrap() * &weights).sum();
                let fd = (f(&xp) - f(&xm)) / 2e-5;
                assert!((fd - dx[[i, j]]).abs() < 1e-8);
            }
        }
    }
}
