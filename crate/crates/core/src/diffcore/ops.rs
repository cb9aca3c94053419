use rand::Rng;

use crate::diffcore::{ParamSlot, Real, Tensor};
use crate::error::{Error, Result};

// out[r][c] += sum_k a[r][k] * b[k][c], k ascending for every element.
// Rows go in blocks so each row of `b` is loaded once per block.
fn matmul_acc<T: Real>(a: &[T], rows: usize, inner: usize, b: &[T], cols: usize, out: &mut [T]) {
    const BLOCK: usize = 8;
    for r0 in (0..rows).step_by(BLOCK) {
        let r1 = (r0 + BLOCK).min(rows);
        let o_block = &mut out[r0 * cols..r1 * cols];
        for k in 0..inner {
            let b_row = &b[k * cols..(k + 1) * cols];
            for (r, o_row) in (r0..r1).zip(o_block.chunks_exact_mut(cols)) {
                let av = a[r * inner + k];
                for (o, &bv) in o_row.iter_mut().zip(b_row) {
                    *o = *o + av * bv;
                }
            }
        }
    }
}

// out[i][j] += sum_r a[r][i] * b[r][j]   (aᵀ·b)
fn matmul_tn_acc<T: Real>(a: &[T], rows: usize, a_cols: usize, b: &[T], b_cols: usize, out: &mut [T]) {
    for r in 0..rows {
        let a_row = &a[r * a_cols..(r + 1) * a_cols];
        let b_row = &b[r * b_cols..(r + 1) * b_cols];
        for (i, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let o_row = &mut out[i * b_cols..(i + 1) * b_cols];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

// out[r][i] += sum_j a[r][j] * b[i][j]   (a·bᵀ)
fn matmul_nt_acc<T: Real>(a: &[T], rows: usize, a_cols: usize, b: &[T], b_rows: usize, out: &mut [T]) {
    for r in 0..rows {
        let a_row = &a[r * a_cols..(r + 1) * a_cols];
        let o_row = &mut out[r * b_rows..(r + 1) * b_rows];
        for (i, o) in o_row.iter_mut().enumerate() {
            let b_row = &b[i * a_cols..(i + 1) * a_cols];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            *o = *o + acc;
        }
    }
}

fn check_matrix<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::config(format!("{what}: expected a matrix, got shape {s:?}"))),
    }
}

/// `x·W + b` for `x: B×I`, `W: I×O`, `b: O`.
pub fn affine<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, inner) = check_matrix(x, "affine input")?;
    let (w_in, out_dim) = check_matrix(w, "affine weight")?;
    if w_in != inner || b.len() != out_dim {
        return Err(Error::config(format!(
            "affine shape mismatch: x {:?}, W {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[rows, out_dim]);
    for r in 0..rows {
        out.row_mut(r).copy_from_slice(b.data());
    }
    matmul_acc(x.data(), rows, inner, w.data(), out_dim, out.data_mut());
    Ok(out)
}

/// Accumulates `dW += xᵀ·dout`, `db += Σ_rows dout` and returns `dx = dout·Wᵀ`.
pub fn affine_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let (rows, inner) = check_matrix(x, "affine input")?;
    let (_, out_dim) = check_matrix(w, "affine weight")?;
    if dout.shape() != [rows, out_dim] || dw.shape() != w.shape() || db.len() != out_dim {
        return Err(Error::config("affine backward shape mismatch"));
    }
    matmul_tn_acc(x.data(), rows, inner, dout.data(), out_dim, dw.data_mut());
    for r in 0..rows {
        for (g, &d) in db.data_mut().iter_mut().zip(dout.row(r)) {
            *g = *g + d;
        }
    }
    let mut dx = Tensor::zeros(&[rows, inner]);
    matmul_nt_acc(dout.data(), rows, out_dim, w.data(), inner, dx.data_mut());
    Ok(dx)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// LSTM gate order used for parameter naming and storage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Candidate,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];

    pub fn name(self) -> &'static str {
        match self {
            Gate::Input => "input",
            Gate::Forget => "forget",
            Gate::Output => "output",
            Gate::Candidate => "candidate",
        }
    }
}

/// Weights of one LSTM layer: per gate `W: I×H`, `U: H×H`, `b: H`,
/// indexed in [`Gate::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer<T> {
    pub w: [ParamSlot<T>; 4],
    pub u: [ParamSlot<T>; 4],
    pub b: [ParamSlot<T>; 4],
}

impl<T: Real> LstmLayer<T> {
    pub fn zeros(prefix: &str, input: usize, hidden: usize) -> Self {
        let mk = |kind: &str, g: Gate, shape: &[usize]| {
            ParamSlot::new(format!("{prefix}.{kind}_{}", g.name()), Tensor::zeros(shape))
        };
        LstmLayer {
            w: Gate::ALL.map(|g| mk("w", g, &[input, hidden])),
            u: Gate::ALL.map(|g| mk("u", g, &[hidden, hidden])),
            b: Gate::ALL.map(|g| mk("b", g, &[hidden])),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w[0].value.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.u[0].value.shape()[0]
    }

    pub fn slots(&self) -> impl Iterator<Item = &ParamSlot<T>> {
        self.w.iter().chain(&self.u).chain(&self.b)
    }

    pub fn slots_mut(&mut self) -> impl Iterator<Item = &mut ParamSlot<T>> {
        self.w.iter_mut().chain(self.u.iter_mut()).chain(self.b.iter_mut())
    }

    fn check(&self) -> Result<()> {
        let (i, h) = (self.input_size(), self.hidden_size());
        for k in 0..4 {
            if self.w[k].value.shape() != [i, h] || self.u[k].value.shape() != [h, h] || self.b[k].value.shape() != [h]
            {
                return Err(Error::config(format!(
                    "inconsistent LSTM gate shapes in {}",
                    self.w[k].name
                )));
            }
        }
        Ok(())
    }
}

/// Activations saved by [`lstm_cell`] for its backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    x: Tensor<T>,
    h_prev: Tensor<T>,
    c_prev: Tensor<T>,
    /// Post-activation gate values, [`Gate::ALL`] order.
    gates: [Tensor<T>; 4],
    tanh_c: Tensor<T>,
}

/// One LSTM step for a batch: returns `(h, c, cache)`.
pub fn lstm_cell<T: Real>(
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
    layer: &LstmLayer<T>,
) -> Result<(Tensor<T>, Tensor<T>, LstmCache<T>)> {
    layer.check()?;
    let (rows, input) = check_matrix(x, "lstm input")?;
    let hidden = layer.hidden_size();
    if input != layer.input_size() {
        return Err(Error::config(format!(
            "lstm input width {input} does not match layer input size {}",
            layer.input_size()
        )));
    }
    if h_prev.shape() != [rows, hidden] || c_prev.shape() != [rows, hidden] {
        return Err(Error::config("lstm state shape mismatch"));
    }

    let gates = Gate::ALL.map(|g| {
        let k = g as usize;
        let mut pre = Tensor::zeros(&[rows, hidden]);
        for r in 0..rows {
            pre.row_mut(r).copy_from_slice(layer.b[k].value.data());
        }
        matmul_acc(x.data(), rows, input, layer.w[k].value.data(), hidden, pre.data_mut());
        matmul_acc(
            h_prev.data(),
            rows,
            hidden,
            layer.u[k].value.data(),
            hidden,
            pre.data_mut(),
        );
        let act: fn(T) -> T = if g == Gate::Candidate { T::tanh } else { sigmoid };
        pre.data_mut().iter_mut().for_each(|v| *v = act(*v));
        pre
    });

    let [i, f, o, g] = &gates;
    let mut c = Tensor::zeros(&[rows, hidden]);
    let mut tanh_c = Tensor::zeros(&[rows, hidden]);
    let mut h = Tensor::zeros(&[rows, hidden]);
    for n in 0..rows * hidden {
        let cv = f.data()[n] * c_prev.data()[n] + i.data()[n] * g.data()[n];
        let tc = cv.tanh();
        c.data_mut()[n] = cv;
        tanh_c.data_mut()[n] = tc;
        h.data_mut()[n] = o.data()[n] * tc;
    }

    let cache = LstmCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gates,
        tanh_c,
    };
    Ok((h, c, cache))
}

/// Backward of one LSTM step given upstream `dh` and `dc`. Accumulates
/// weight gradients into `layer` and returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_cell_backward<T: Real>(
    cache: &LstmCache<T>,
    dh: &Tensor<T>,
    dc: &Tensor<T>,
    layer: &mut LstmLayer<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (rows, input) = check_matrix(&cache.x, "lstm input")?;
    let hidden = layer.hidden_size();
    if dh.shape() != [rows, hidden] || dc.shape() != [rows, hidden] {
        return Err(Error::config("lstm backward gradient shape mismatch"));
    }
    let one = T::one();
    let [i, f, o, g] = &cache.gates;

    // Pre-activation gradients per gate.
    let mut da: [Tensor<T>; 4] = std::array::from_fn(|_| Tensor::zeros(&[rows, hidden]));
    let mut dc_prev = Tensor::zeros(&[rows, hidden]);
    for n in 0..rows * hidden {
        let (iv, fv, ov, gv) = (i.data()[n], f.data()[n], o.data()[n], g.data()[n]);
        let tc = cache.tanh_c.data()[n];
        let dhv = dh.data()[n];
        let dct = dc.data()[n] + dhv * ov * (one - tc * tc);
        da[0].data_mut()[n] = dct * gv * iv * (one - iv);
        da[1].data_mut()[n] = dct * cache.c_prev.data()[n] * fv * (one - fv);
        da[2].data_mut()[n] = dhv * tc * ov * (one - ov);
        da[3].data_mut()[n] = dct * iv * (one - gv * gv);
        dc_prev.data_mut()[n] = dct * fv;
    }

    let mut dx = Tensor::zeros(&[rows, input]);
    let mut dh_prev = Tensor::zeros(&[rows, hidden]);
    for k in 0..4 {
        let d = da[k].data();
        matmul_tn_acc(cache.x.data(), rows, input, d, hidden, layer.w[k].grad.data_mut());
        matmul_tn_acc(cache.h_prev.data(), rows, hidden, d, hidden, layer.u[k].grad.data_mut());
        for r in 0..rows {
            for (gb, &dv) in layer.b[k].grad.data_mut().iter_mut().zip(da[k].row(r)) {
                *gb = *gb + dv;
            }
        }
        matmul_nt_acc(d, rows, hidden, layer.w[k].value.data(), input, dx.data_mut());
        matmul_nt_acc(d, rows, hidden, layer.u[k].value.data(), hidden, dh_prev.data_mut());
    }
    Ok((dx, dh_prev, dc_prev))
}

/// Per-element scale factors of an inverted-dropout draw: `0` for dropped
/// elements, `1/(1-rate)` for survivors.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T> {
    scale: Vec<T>,
}

impl<T: Real> DropoutMask<T> {
    pub fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        let data = x.data().iter().zip(&self.scale).map(|(&v, &s)| v * s).collect();
        Tensor::from_vec(x.shape(), data).expect("mask matches input shape")
    }

    /// Dropout is linear, so the backward is the same elementwise scaling.
    pub fn backward(&self, dout: &Tensor<T>) -> Tensor<T> {
        self.apply(dout)
    }

    pub fn survivors(&self) -> usize {
        self.scale.iter().filter(|s| **s != T::zero()).count()
    }
}

/// Inverted dropout. In inference mode (or with `rate == 0`) this is the
/// identity and no random numbers are drawn.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor<T>, Option<DropoutMask<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} must be in [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let scale = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mask = DropoutMask { scale };
    Ok((mask.apply(x), Some(mask)))
}

/// Unchecked squared Euclidean distance over the common prefix.
#[inline]
pub fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc = acc + d * d;
    }
    acc
}

pub fn squared_distance<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "squared distance between vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(sq_dist(a, b))
}

/// Accumulates `upstream · ∂‖a−b‖²/∂a = upstream · 2(a−b)` into `da`.
/// The gradient with respect to `b` is the negation.
pub fn squared_distance_backward<T: Real>(a: &[T], b: &[T], upstream: T, da: &mut [T]) {
    let two = T::lit(2.0);
    for ((g, &x), &y) in da.iter_mut().zip(a).zip(b) {
        *g = *g + upstream * two * (x - y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn affine_identity_and_hand_values() {
        let out = affine(
            &t(&[1, 2], &[1., 2.]),
            &t(&[2, 2], &[1., 0., 0., 1.]),
            &t(&[2], &[0., 0.]),
        )
        .unwrap();
        assert_eq!(out.data(), &[1., 2.]);
        let out = affine(
            &t(&[1, 2], &[1., 1.]),
            &t(&[2, 2], &[2., 3., 4., 5.]),
            &t(&[2], &[1., 1.]),
        )
        .unwrap();
        assert_eq!(out.data(), &[7., 9.]);
    }

    #[test]
    fn affine_rejects_mismatch() {
        let err = affine(&t(&[1, 3], &[1., 1., 1.]), &t(&[2, 2], &[0.; 4]), &t(&[2], &[0.; 2]));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn lstm_zero_weights() {
        let layer = LstmLayer::<f64>::zeros("l", 3, 2);
        let x = t(&[1, 3], &[0.3, -1.0, 2.0]);
        let z = Tensor::zeros(&[1, 2]);
        let (h, c, _) = lstm_cell(&x, &z, &z, &layer).unwrap();
        assert_eq!(h.data(), &[0.0, 0.0]);
        assert_eq!(c.data(), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_saturated_forget_gate_carries_state() {
        let mut layer = LstmLayer::<f64>::zeros("l", 2, 2);
        layer.b[Gate::Forget as usize].value.data_mut().fill(10.0);
        let x = t(&[1, 2], &[0.5, 0.5]);
        let h0 = Tensor::zeros(&[1, 2]);
        let c0 = t(&[1, 2], &[0.7, -1.3]);
        let (h, c, _) = lstm_cell(&x, &h0, &c0, &layer).unwrap();
        let f = sigmoid(10.0);
        for k in 0..2 {
            assert!((c.data()[k] - c0.data()[k]).abs() < 1e-4);
            assert!((c.data()[k] - f * c0.data()[k]).abs() < 1e-15);
            assert!((h.data()[k] - 0.5 * (f * c0.data()[k]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = t(&[2, 2], &[1., -2., 3., 4.]);
        assert_eq!(dropout(&x, 0.25, &mut rng, false).unwrap().0, x);
        assert_eq!(dropout(&x, 0.0, &mut rng, true).unwrap().0, x);
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
        assert!(dropout(&x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn squared_distance_values() {
        assert_eq!(squared_distance(&[1.0f64, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(squared_distance(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert!(squared_distance(&[1.0f64], &[0.0, 1.0]).is_err());
    }
}
