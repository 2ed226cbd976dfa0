//! Central finite-difference checks of the graph's analytic gradients.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{dense, lstm_cell, lstm_scan, DenseParams, LstmCellParams};
use super::{Graph, KernelError, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

/// Gradients whose magnitude is below this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, REL_FLOOR)
}

/// Relative error whose denominator never drops below `floor`. Central
/// differences carry roundoff of order `ε·|loss|/h`, so the floor used by
/// [`check_gradients`] grows with the loss value.
pub fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `∂loss/∂params` from [`Graph::backward`] with central differences.
///
/// `build` receives the graph and one var per entry of `params` and must
/// return a scalar loss. At most `max_entries` coordinates per tensor are
/// probed (all of them when `None`), chosen with `rng`.
pub fn check_gradients<F, R>(
    name: &str,
    params: &[Tensor],
    build: F,
    max_entries: Option<usize>,
    rng: &mut R,
) -> Result<GradCheck, KernelError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, KernelError>,
    R: Rng + ?Sized,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let floor = REL_FLOOR * g.value(loss).data()[0].abs().max(1.0);

    let eval = |ps: &[Tensor]| -> Result<f64, KernelError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };

    let mut worst = 0.0f64;
    let mut entries = 0;
    let mut probe = params.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        let n = params[i].len();
        let idx: Vec<usize> = match max_entries {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for j in idx {
            let orig = params[i].data()[j];
            probe[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error_floored(analytic.data()[j], numeric, floor));
            entries += 1;
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_error: worst,
        entries,
    })
}

/// Gradient checks for every graph primitive and layer on random shapes of
/// dimension at most 8.
pub fn primitive_suite(seed: u64) -> Result<Vec<GradCheck>, KernelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = |rng: &mut ChaCha8Rng| (rng.random_range(1..=8usize), rng.random_range(1..=8usize));
    let mut out = Vec::new();

    // Projects any matrix to a scalar with fixed random weights so that every
    // output element carries a distinct sensitivity.
    fn reduce(g: &mut Graph, v: Var, seed: u64) -> Result<Var, KernelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = g.value(v).shape().to_vec();
        let w = g.constant(Tensor::uniform(&shape, 1.0, &mut rng));
        let p = g.mul(v, w)?;
        Ok(g.sum(p))
    }

    let (m, k) = dims(&mut rng);
    let (_, n) = dims(&mut rng);
    let a = Tensor::uniform(&[m, k], 1.0, &mut rng);
    let b = Tensor::uniform(&[k, n], 1.0, &mut rng);
    out.push(check_gradients(
        "matmul",
        &[a, b],
        |g, v| {
            let y = g.matmul(v[0], v[1])?;
            reduce(g, y, 1)
        },
        None,
        &mut rng,
    )?);

    let (r, c) = dims(&mut rng);
    let x = Tensor::uniform(&[r, c], 2.0, &mut rng);
    let y = Tensor::uniform(&[r, c], 2.0, &mut rng);
    let row = Tensor::uniform(&[c], 1.0, &mut rng);
    out.push(check_gradients(
        "add/sub/mul/add_row",
        &[x.clone(), y.clone(), row],
        |g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(v[0], v[1])?;
            let p = g.mul(s, d)?;
            let q = g.add_row(p, v[2])?;
            reduce(g, q, 2)
        },
        None,
        &mut rng,
    )?);

    out.push(check_gradients(
        "sigmoid/tanh/square/scale",
        std::slice::from_ref(&x),
        |g, v| {
            let s = g.sigmoid(v[0]);
            let t = g.tanh(v[0]);
            let q = g.square(v[0]);
            let q = g.scale(q, -0.3);
            let u = g.add(s, t)?;
            let u = g.add(u, q)?;
            let u = g.add_scalar(u, 0.7);
            reduce(g, u, 3)
        },
        None,
        &mut rng,
    )?);

    let pos = Tensor::uniform(&[r, c], 0.4, &mut rng);
    out.push(check_gradients(
        "log/one_minus/clamp/mean",
        &[pos],
        |g, v| {
            let shifted = g.add_scalar(v[0], 0.5);
            let cl = g.clamp(shifted, 0.2, 0.8);
            let om = g.one_minus(cl);
            let l = g.log(om)?;
            let l2 = g.log(shifted)?;
            let s = g.add(l, l2)?;
            let w = reduce(g, s, 4)?;
            let m = g.mean(s);
            g.add(w, m)
        },
        None,
        &mut rng,
    )?);

    out.push(check_gradients(
        "slice/concat",
        &[x, y],
        |g, v| {
            let (rows, cols) = g.value(v[0]).dims2();
            let left = g.slice_cols(v[0], 0, cols.div_ceil(2))?;
            let top = g.slice_rows(v[1], 0, rows.div_ceil(2))?;
            let cc = g.concat_cols(&[v[0], left, v[1]])?;
            let a = reduce(g, cc, 5)?;
            let top_t = g.square(top);
            let rr = g.concat_rows(&[v[1], top_t])?;
            let b = reduce(g, rr, 6)?;
            g.add(a, b)
        },
        None,
        &mut rng,
    )?);

    let (d_in, d_out) = dims(&mut rng);
    let dp = DenseParams::init(d_in, d_out, &mut rng);
    let dx = Tensor::uniform(&[2, d_in], 1.0, &mut rng);
    out.push(check_gradients(
        "dense",
        &[dx, dp.weight, Tensor::uniform(&[d_out], 0.5, &mut rng)],
        |g, v| {
            let p = DenseParams {
                weight: v[1],
                bias: v[2],
            };
            let y = dense(g, v[0], &p)?;
            reduce(g, y, 7)
        },
        None,
        &mut rng,
    )?);

    let lp = LstmCellParams::init(3, 4, &mut rng);
    let lx = Tensor::uniform(&[1, 3], 1.0, &mut rng);
    let lh = Tensor::uniform(&[1, 4], 0.5, &mut rng);
    let lc = Tensor::uniform(&[1, 4], 0.5, &mut rng);
    out.push(check_gradients(
        "lstm_cell",
        &[lx, lh, lc, lp.w_ih.clone(), lp.w_hh.clone(), lp.bias.clone()],
        |g, v| {
            let p = LstmCellParams {
                w_ih: v[3],
                w_hh: v[4],
                bias: v[5],
            };
            let (h, c) = lstm_cell(g, v[0], v[1], v[2], &p)?;
            let a = reduce(g, h, 8)?;
            let b = reduce(g, c, 9)?;
            g.add(a, b)
        },
        None,
        &mut rng,
    )?);

    let (batch, steps) = (2, 4);
    let sx = Tensor::uniform(&[batch * steps, 3], 1.0, &mut rng);
    out.push(check_gradients(
        "lstm_scan",
        &[sx, lp.w_ih, lp.w_hh, lp.bias],
        |g, v| {
            let p = LstmCellParams {
                w_ih: v[1],
                w_hh: v[2],
                bias: v[3],
            };
            let run = lstm_scan(g, v[0], steps, None, &p)?;
            let all = g.concat_rows(&run.hidden)?;
            reduce(g, all, 10)
        },
        None,
        &mut rng,
    )?);

    Ok(out)
}
