//! Single-layer bidirectional LSTM.

use rand::Rng;

use crate::tensor::{sigmoid, ParamId, ParamSet, Tape, Tensor, Var};

/// Gate order used for every parameter triple.
pub const GATES: [&str; 4] = ["f", "i", "o", "c"];

/// One direction: `w_*` is `d_in x d_h`, `u_*` is `d_h x d_h`, `b_*` is `1 x d_h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
    pub d_in: usize,
    pub d_h: usize,
}

impl LstmParams {
    /// Registers `{prefix}.w_f`, `{prefix}.u_f`, `{prefix}.b_f`, ... with the forget bias at +1.
    pub fn register<R: Rng + ?Sized>(params: &mut ParamSet, prefix: &str, d_in: usize, d_h: usize, rng: &mut R) -> Self {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for g in GATES {
            w.push(params.add(format!("{prefix}.w_{g}"), Tensor::xavier(d_in, d_h, rng)));
            u.push(params.add(format!("{prefix}.u_{g}"), Tensor::xavier(d_h, d_h, rng)));
            let bias = if g == "f" { 1.0 } else { 0.0 };
            b.push(params.add(format!("{prefix}.b_{g}"), Tensor::row(vec![bias; d_h])));
        }
        LstmParams {
            w: w.try_into().unwrap(),
            u: u.try_into().unwrap(),
            b: b.try_into().unwrap(),
            d_in,
            d_h,
        }
    }

    /// Looks up parameters registered under `prefix`.
    pub fn find(params: &ParamSet, prefix: &str) -> Option<Self> {
        let get = |kind: &str, g: &str| params.id(&format!("{prefix}.{kind}_{g}"));
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for g in GATES {
            w.push(get("w", g)?);
            u.push(get("u", g)?);
            b.push(get("b", g)?);
        }
        let d_in = params.get(w[0]).rows();
        let d_h = params.get(w[0]).cols();
        Some(LstmParams {
            w: w.try_into().ok()?,
            u: u.try_into().ok()?,
            b: b.try_into().ok()?,
            d_in,
            d_h,
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.w.iter().chain(&self.u).chain(&self.b).copied()
    }
}

fn affine(x: &[f64], w: &Tensor, h: &[f64], u: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut out = b.data().to_vec();
    for (i, &xi) in x.iter().enumerate() {
        for (o, wv) in out.iter_mut().zip(w.row_slice(i)) {
            *o += xi * wv;
        }
    }
    for (i, &hi) in h.iter().enumerate() {
        for (o, uv) in out.iter_mut().zip(u.row_slice(i)) {
            *o += hi * uv;
        }
    }
    out
}

/// One time step without recording anything: returns `(h_t, c_t)`.
pub fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], params: &ParamSet, p: &LstmParams) -> (Vec<f64>, Vec<f64>) {
    let z: Vec<Vec<f64>> = (0..4)
        .map(|g| affine(x, params.get(p.w[g]), h_prev, params.get(p.u[g]), params.get(p.b[g])))
        .collect();
    let mut h = vec![0.0; p.d_h];
    let mut c = vec![0.0; p.d_h];
    for k in 0..p.d_h {
        let (f, i, o) = (sigmoid(z[0][k]), sigmoid(z[1][k]), sigmoid(z[2][k]));
        c[k] = c_prev[k] * f + i * z[3][k].tanh();
        h[k] = c[k].tanh() * o;
    }
    (h, c)
}

/// One direction's parameters recorded on a tape, gates concatenated as f, i, o, c.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
    pub d_h: usize,
}

impl LstmParams {
    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> LstmVars {
        let mut cat = |ids: &[ParamId; 4]| {
            let vs: Vec<Var> = ids.iter().map(|&id| tape.param(params, id)).collect();
            tape.concat_cols(&vs)
        };
        LstmVars {
            w: cat(&self.w),
            u: cat(&self.u),
            b: cat(&self.b),
            d_h: self.d_h,
        }
    }
}

/// Runs one direction over `x` (`len x d_in`); returns `len x d_h` in input order.
pub fn run_direction(tape: &mut Tape, p: &LstmVars, x: Var, reverse: bool) -> Var {
    let len = tape.value(x).rows();
    let d = p.d_h;
    // input projections for all steps at once: len x 4d
    let xw = tape.matmul(x, p.w);
    let xw = tape.add_row(xw, p.b);

    let mut hs: Vec<Var> = Vec::with_capacity(len);
    let mut state: Option<(Var, Var)> = None;
    for step in 0..len {
        let t = if reverse { len - 1 - step } else { step };
        let mut z = tape.row(xw, t);
        if let Some((h, _)) = state {
            let hu = tape.matmul(h, p.u);
            z = tape.add(z, hu);
        }
        let gates = tape.slice_cols(z, 0, 3 * d);
        let gates = tape.sigmoid(gates);
        let cand = tape.slice_cols(z, 3 * d, 4 * d);
        let cand = tape.tanh(cand);
        let i = tape.slice_cols(gates, d, 2 * d);
        let o = tape.slice_cols(gates, 2 * d, 3 * d);
        let mut c = tape.mul(i, cand);
        if let Some((_, c_prev)) = state {
            let f = tape.slice_cols(gates, 0, d);
            let kept = tape.mul(c_prev, f);
            c = tape.add(kept, c);
        }
        let tc = tape.tanh(c);
        let h = tape.mul(tc, o);
        hs.push(h);
        state = Some((h, c));
    }
    if reverse {
        hs.reverse();
    }
    tape.concat_rows(&hs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiLstm {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstm {
    pub fn register<R: Rng + ?Sized>(params: &mut ParamSet, d_in: usize, d_h: usize, rng: &mut R) -> Self {
        BiLstm {
            fwd: LstmParams::register(params, "bilstm.fwd", d_in, d_h, rng),
            bwd: LstmParams::register(params, "bilstm.bwd", d_in, d_h, rng),
        }
    }

    pub fn find(params: &ParamSet) -> Option<Self> {
        Some(BiLstm {
            fwd: LstmParams::find(params, "bilstm.fwd")?,
            bwd: LstmParams::find(params, "bilstm.bwd")?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.d_h + self.bwd.d_h
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> BiLstmVars {
        BiLstmVars {
            fwd: self.fwd.bind(tape, params),
            bwd: self.bwd.bind(tape, params),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmVars {
    pub fwd: LstmVars,
    pub bwd: LstmVars,
}

impl BiLstmVars {
    /// `H` with row `t = [fwd h_t ; bwd h_t]`, dropout applied when `train`.
    pub fn encode<R: Rng + ?Sized>(&self, tape: &mut Tape, x: Var, dropout: f64, train: bool, rng: &mut R) -> Var {
        let f = run_direction(tape, &self.fwd, x, false);
        let b = run_direction(tape, &self.bwd, x, true);
        let h = tape.concat_cols(&[f, b]);
        tape.dropout(h, dropout, train, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_params(d_in: usize, d_h: usize) -> (ParamSet, LstmParams) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LstmParams::register(&mut ps, "l", d_in, d_h, &mut rng);
        for id in p.ids() {
            ps.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        (ps, p)
    }

    #[test]
    fn zero_weights_step() {
        let (ps, p) = zero_params(3, 2);
        let (h, c) = lstm_step(&[1.0, -2.0, 0.5], &[0.0; 2], &[0.0; 2], &ps, &p);
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
        let (h, c) = lstm_step(&[1.0, -2.0, 0.5], &[0.3, 0.1], &[2.0, -1.0], &ps, &p);
        assert_eq!(c, vec![1.0, -0.5]);
        assert!((h[0] - 0.5 * 1f64.tanh()).abs() < 1e-15);
        assert!((h[1] - 0.5 * (-0.5f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn forget_bias_and_names() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bi = BiLstm::register(&mut ps, 4, 3, &mut rng);
        assert_eq!(ps.by_name("bilstm.fwd.b_f").unwrap().data(), &[1.0; 3]);
        assert_eq!(ps.by_name("bilstm.bwd.b_i").unwrap().data(), &[0.0; 3]);
        assert_eq!(BiLstm::find(&ps), Some(bi));
        assert_eq!(bi.output_dim(), 6);
    }

    fn random_input(len: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(&[len, d], 1.0, &mut rng)
    }

    #[test]
    fn tape_matches_step_function() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = LstmParams::register(&mut ps, "l", 3, 4, &mut rng);
        let x = random_input(5, 3, 1);
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let pv = p.bind(&mut tape, &ps);
        let hv = run_direction(&mut tape, &pv, xv, false);
        let (mut h, mut c) = (vec![0.0; 4], vec![0.0; 4]);
        for t in 0..5 {
            (h, c) = lstm_step(x.row_slice(t), &h, &c, &ps, &p);
            for (a, b) in tape.value(hv).row_slice(t).iter().zip(&h) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_parameters_give_zero_output_and_shapes() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bi = BiLstm::register(&mut ps, 3, 4, &mut rng);
        for id in ps.ids().collect::<Vec<_>>() {
            ps.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut tape = Tape::new();
        let x = tape.input(random_input(6, 3, 2));
        let h = bi.bind(&mut tape, &ps).encode(&mut tape, x, 0.0, false, &mut rng);
        assert_eq!(tape.value(h).shape(), &[6, 8]);
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));

        let x = tape.input(random_input(1, 3, 2));
        let h = bi.bind(&mut tape, &ps).encode(&mut tape, x, 0.0, false, &mut rng);
        assert_eq!(tape.value(h).shape(), &[1, 8]);
    }

    #[test]
    fn reversal_swaps_directions_when_tied() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bi = BiLstm::register(&mut ps, 3, 4, &mut rng);
        for (f, b) in bi.fwd.ids().zip(bi.bwd.ids()).collect::<Vec<_>>() {
            let v = ps.get(f).data().to_vec();
            ps.get_mut(b).data_mut().copy_from_slice(&v);
        }
        let x = random_input(5, 3, 3);
        let mut rev = Vec::new();
        for t in (0..5).rev() {
            rev.extend_from_slice(x.row_slice(t));
        }
        let xr = Tensor::matrix(5, 3, rev);
        let mut tape = Tape::new();
        let a = tape.input(x);
        let bv = bi.bind(&mut tape, &ps);
        let a = bv.encode(&mut tape, a, 0.0, false, &mut rng);
        let b = tape.input(xr);
        let b = bv.encode(&mut tape, b, 0.0, false, &mut rng);
        for t in 0..5 {
            let ra = tape.value(a).row_slice(4 - t);
            let rb = tape.value(b).row_slice(t);
            let swapped: Vec<f64> = ra[4..].iter().chain(&ra[..4]).copied().collect();
            for (p, q) in rb.iter().zip(&swapped) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_gradients_pass_grad_check() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = LstmParams::register(&mut ps, "l", 3, 2, &mut rng);
        let x = random_input(3, 3, 6);
        let r = grad_check(
            &mut ps,
            |ps, tape| {
                let xv = tape.input(x.clone());
                let pv = p.bind(tape, ps);
                let h = run_direction(tape, &pv, xv, false);
                tape.sum(h)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
