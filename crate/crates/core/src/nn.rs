//! Small dense layers with explicit forward caches and backward passes.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::seeding::{gaussian_matrix, gaussian_vector};

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `(in, out)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(in)`, small bias.
    pub fn seeded(r: &mut ChaCha8Rng, input: usize, output: usize, gain: f64) -> Self {
        Self {
            weight: gaussian_matrix(r, input, output, gain / (input as f64).sqrt()),
            bias: gaussian_vector(r, output, 0.01 * gain),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Returns parameter gradients and the gradient with respect to `x`.
    pub fn backward(&self, x: ArrayView2<'_, f64>, d_out: ArrayView2<'_, f64>) -> (LinearGrad, Array2<f64>) {
        let grad = LinearGrad {
            weight: x.t().dot(&d_out),
            bias: d_out.sum_axis(Axis(0)),
        };
        (grad, d_out.dot(&self.weight.t()))
    }
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    q_in: Array2<f64>,
    k_in: Array2<f64>,
    v_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention weights per head, `(n_q, n_k)` each.
    weights: Vec<Array2<f64>>,
    mixed: Array2<f64>,
}

impl AttentionCache {
    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGrad {
    pub q: LinearGrad,
    pub k: LinearGrad,
    pub v: LinearGrad,
    pub out: LinearGrad,
}

impl Attention {
    pub fn dim(&self) -> usize {
        self.out.weight.ncols()
    }

    fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    pub fn forward(
        &self,
        q_in: ArrayView2<'_, f64>,
        k_in: ArrayView2<'_, f64>,
        v_in: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, AttentionCache) {
        let q = self.q.forward(q_in);
        let k = self.k.forward(k_in);
        let v = self.v.forward(v_in);
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut mixed = Array2::zeros((q.nrows(), self.dim()));
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let mut w = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut w);
            mixed.slice_mut(cols).assign(&w.dot(&v.slice(cols)));
            weights.push(w);
        }
        let out = self.out.forward(mixed.view());
        let cache = AttentionCache {
            q_in: q_in.to_owned(),
            k_in: k_in.to_owned(),
            v_in: v_in.to_owned(),
            q,
            k,
            v,
            weights,
            mixed,
        };
        (out, cache)
    }

    /// Gradients of parameters and of the three inputs `(d_q_in, d_k_in, d_v_in)`.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        d_out: ArrayView2<'_, f64>,
    ) -> (AttentionGrad, Array2<f64>, Array2<f64>, Array2<f64>) {
        let (g_out, d_mixed) = self.out.backward(cache.mixed.view(), d_out);
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut d_q = Array2::zeros(cache.q.raw_dim());
        let mut d_k = Array2::zeros(cache.k.raw_dim());
        let mut d_v = Array2::zeros(cache.v.raw_dim());
        for (h, w) in cache.weights.iter().enumerate() {
            let cols = s![.., h * hd..(h + 1) * hd];
            let d_mh = d_mixed.slice(cols);
            let vh = cache.v.slice(cols);
            let d_w = d_mh.dot(&vh.t());
            d_v.slice_mut(cols).assign(&w.t().dot(&d_mh));
            // softmax backward, row by row
            let row_dot = (&d_w * w).sum_axis(Axis(1)).insert_axis(Axis(1));
            let d_scores = w * &(d_w - &row_dot) * scale;
            d_q.slice_mut(cols).assign(&d_scores.dot(&cache.k.slice(cols)));
            d_k.slice_mut(cols).assign(&d_scores.t().dot(&cache.q.slice(cols)));
        }
        let (g_q, dq_in) = self.q.backward(cache.q_in.view(), d_q.view());
        let (g_k, dk_in) = self.k.backward(cache.k_in.view(), d_k.view());
        let (g_v, dv_in) = self.v.backward(cache.v_in.view(), d_v.view());
        (
            AttentionGrad {
                q: g_q,
                k: g_k,
                v: g_v,
                out: g_out,
            },
            dq_in,
            dk_in,
            dv_in,
        )
    }
}

/// Two-layer ReLU perceptron applied row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let h = self.hidden.forward(x).mapv(|v| v.max(0.0));
        self.out.forward(h.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng;

    fn attention(seed: u64, dim: usize, heads: usize) -> Attention {
        let mut r = rng(seed, 99);
        Attention {
            heads,
            q: Linear::seeded(&mut r, dim, dim, 1.0),
            k: Linear::seeded(&mut r, dim, dim, 1.0),
            v: Linear::seeded(&mut r, dim, dim, 1.0),
            out: Linear::seeded(&mut r, dim, dim, 1.0),
        }
    }

    /// Scalar objective `sum(out * probe)` for finite differences.
    fn objective(att: &Attention, x: &Array2<f64>, y: &Array2<f64>, probe: &Array2<f64>) -> f64 {
        let (out, _) = att.forward(x.view(), y.view(), y.view());
        (&out * probe).sum()
    }

    #[test]
    fn attention_backward_matches_finite_differences() {
        let att = attention(1, 8, 2);
        let mut r = rng(2, 0);
        let x = gaussian_matrix(&mut r, 3, 8, 1.0);
        let y = gaussian_matrix(&mut r, 5, 8, 1.0);
        let probe = gaussian_matrix(&mut r, 3, 8, 1.0);
        let (_, cache) = att.forward(x.view(), y.view(), y.view());
        let (grad, dq_in, dk_in, dv_in) = att.backward(&cache, probe.view());
        let h = 1e-6;

        let mut worst: f64 = 0.0;
        let mut check = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        };
        for (i, j) in [(0, 0), (2, 5), (1, 7)] {
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            check(dq_in[[i, j]], objective(&att, &xp, &y, &probe), objective(&att, &xm, &y, &probe));
        }
        for (i, j) in [(0, 1), (4, 6)] {
            let mut yp = y.clone();
            yp[[i, j]] += h;
            let mut ym = y.clone();
            ym[[i, j]] -= h;
            check(
                dk_in[[i, j]] + dv_in[[i, j]],
                objective(&att, &x, &yp, &probe),
                objective(&att, &x, &ym, &probe),
            );
        }
        for (which, (i, j)) in [(0, (1, 2)), (1, (3, 4)), (2, (5, 0)), (3, (7, 7))] {
            let pick = |a: &mut Attention| -> *mut f64 {
                match which {
                    0 => &mut a.q.weight[[i, j]],
                    1 => &mut a.k.weight[[i, j]],
                    2 => &mut a.v.weight[[i, j]],
                    _ => &mut a.out.weight[[i, j]],
                }
            };
            let analytic = match which {
                0 => grad.q.weight[[i, j]],
                1 => grad.k.weight[[i, j]],
                2 => grad.v.weight[[i, j]],
                _ => grad.out.weight[[i, j]],
            };
            let mut ap = att.clone();
            unsafe { *pick(&mut ap) += h };
            let mut am = att.clone();
            unsafe { *pick(&mut am) -= h };
            check(analytic, objective(&ap, &x, &y, &probe), objective(&am, &x, &y, &probe));
        }
        assert!(worst < 1e-6, "max relative error {worst}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut m = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, -1e3, 0.0, 1e3]).unwrap();
        softmax_rows(&mut m);
        for row in m.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
