use rand::Rng;

use super::{Graph, KernelError, Tensor, Var};

/// LSTM cell weights. Gate blocks along the `4·hidden` axis are ordered
/// input, forget, cell candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams<T = Tensor> {
    /// `input_dim × 4·hidden`
    pub w_ih: T,
    /// `hidden × 4·hidden`
    pub w_hh: T,
    /// `4·hidden`
    pub bias: T,
}

/// Fully connected layer, `y = x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T = Tensor> {
    /// `in_dim × out_dim`
    pub weight: T,
    /// `out_dim`
    pub bias: T,
}

pub const FORGET_BIAS: f64 = 1.0;

impl LstmCellParams {
    /// Weights uniform in `±1/√fan_in`; forget-gate bias 1, other biases 0.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let w_ih = Tensor::uniform(&[input_dim, 4 * hidden], 1.0 / (input_dim as f64).sqrt(), rng);
        let w_hh = Tensor::uniform(&[hidden, 4 * hidden], 1.0 / (hidden as f64).sqrt(), rng);
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(FORGET_BIAS);
        Self { w_ih, w_hh, bias }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[input_dim, 4 * hidden]),
            w_hh: Tensor::zeros(&[hidden, 4 * hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.rows()
    }
}

impl DenseParams {
    /// Weight uniform in `±1/√in_dim`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::uniform(&[in_dim, out_dim], 1.0 / (in_dim as f64).sqrt(), rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[in_dim, out_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }
}

impl<T> LstmCellParams<T> {
    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        out.push((format!("{prefix}.w_ih"), &self.w_ih));
        out.push((format!("{prefix}.w_hh"), &self.w_hh));
        out.push((format!("{prefix}.b"), &self.bias));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut T)>) {
        out.push((format!("{prefix}.w_ih"), &mut self.w_ih));
        out.push((format!("{prefix}.w_hh"), &mut self.w_hh));
        out.push((format!("{prefix}.b"), &mut self.bias));
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LstmCellParams<U> {
        LstmCellParams {
            w_ih: f(&self.w_ih),
            w_hh: f(&self.w_hh),
            bias: f(&self.bias),
        }
    }
}

impl<T> DenseParams<T> {
    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        out.push((format!("{prefix}.w"), &self.weight));
        out.push((format!("{prefix}.b"), &self.bias));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut T)>) {
        out.push((format!("{prefix}.w"), &mut self.weight));
        out.push((format!("{prefix}.b"), &mut self.bias));
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> DenseParams<U> {
        DenseParams {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

/// Gate nonlinearities and state update from pre-activations `gates`
/// (`batch × 4·hidden`).
fn lstm_gates(g: &mut Graph, gates: Var, c_prev: Var, hidden: usize) -> Result<(Var, Var), KernelError> {
    let state = g.lstm_state(gates, c_prev)?;
    let h = g.slice_cols(state, 0, hidden)?;
    let c = g.slice_cols(state, hidden, 2 * hidden)?;
    Ok((h, c))
}

/// One LSTM step on a batch: `x` is `batch × input_dim`, `h` and `c` are
/// `batch × hidden`. Returns `(h_new, c_new)`.
pub fn lstm_cell(
    g: &mut Graph,
    x: Var,
    h: Var,
    c: Var,
    p: &LstmCellParams<Var>,
) -> Result<(Var, Var), KernelError> {
    let xw = g.matmul(x, p.w_ih)?;
    lstm_step_projected(g, xw, h, c, p)
}

/// LSTM step where `x·W_ih` has already been computed.
fn lstm_step_projected(
    g: &mut Graph,
    xw: Var,
    h: Var,
    c: Var,
    p: &LstmCellParams<Var>,
) -> Result<(Var, Var), KernelError> {
    let hidden = g.value(p.w_hh).rows();
    if g.value(c).cols() != hidden {
        return Err(KernelError::Shape {
            op: "lstm_cell",
            left: g.value(c).shape().to_vec(),
            right: g.value(p.w_hh).shape().to_vec(),
        });
    }
    let hw = g.matmul(h, p.w_hh)?;
    let pre = g.add(xw, hw)?;
    let gates = g.add_row(pre, p.bias)?;
    lstm_gates(g, gates, c, hidden)
}

/// Result of running an LSTM over a sequence.
#[derive(Clone, Debug)]
pub struct LstmRun {
    /// Hidden state after every step.
    pub hidden: Vec<Var>,
    pub h: Var,
    pub c: Var,
}

/// Runs an LSTM over `steps` time steps. `xs` stacks the inputs time-major:
/// rows `[t·batch, (t+1)·batch)` hold step `t`. The input projection is done
/// as a single matrix product for the whole sequence.
///
/// Without `init` the scan starts from zero state.
pub fn lstm_scan(
    g: &mut Graph,
    xs: Var,
    steps: usize,
    init: Option<(Var, Var)>,
    p: &LstmCellParams<Var>,
) -> Result<LstmRun, KernelError> {
    let rows = g.value(xs).rows();
    if steps == 0 || !rows.is_multiple_of(steps) {
        return Err(KernelError::InvalidArgument(format!(
            "lstm_scan: {rows} input rows do not split into {steps} steps"
        )));
    }
    let batch = rows / steps;
    let hidden = g.value(p.w_hh).rows();
    let (mut h, mut c) = match init {
        Some(state) => state,
        None => {
            let h0 = g.constant(Tensor::zeros(&[batch, hidden]));
            let c0 = g.constant(Tensor::zeros(&[batch, hidden]));
            (h0, c0)
        }
    };
    let xw_all = g.matmul(xs, p.w_ih)?;
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let xw = g.slice_rows(xw_all, t * batch, (t + 1) * batch)?;
        (h, c) = lstm_step_projected(g, xw, h, c, p)?;
        out.push(h);
    }
    Ok(LstmRun { hidden: out, h, c })
}

/// `x·W + b` for a batch `x` (`batch × in_dim`).
pub fn dense(g: &mut Graph, x: Var, p: &DenseParams<Var>) -> Result<Var, KernelError> {
    let xw = g.matmul(x, p.weight)?;
    g.add_row(xw, p.bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bind_const(g: &mut Graph, p: &LstmCellParams) -> LstmCellParams<Var> {
        p.map(&mut |t| g.constant(t.clone()))
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let p = LstmCellParams::zeros(3, 2);
        let mut g = Graph::new();
        let pv = bind_const(&mut g, &p);
        let x = g.constant(Tensor::matrix(1, 3, vec![0.7, -1.2, 3.0]).unwrap());
        let h = g.constant(Tensor::zeros(&[1, 2]));
        let c = g.constant(Tensor::zeros(&[1, 2]));
        let (h1, c1) = lstm_cell(&mut g, x, h, c, &pv).unwrap();
        assert!(g.value(h1).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let mut p = LstmCellParams::zeros(1, 1);
        p.bias.data_mut()[1] = 100.0;
        let mut g = Graph::new();
        let pv = bind_const(&mut g, &p);
        let x = g.constant(Tensor::matrix(1, 1, vec![0.3]).unwrap());
        let h = g.constant(Tensor::zeros(&[1, 1]));
        let c = g.constant(Tensor::full(&[1, 1], 2.0));
        let (_, c1) = lstm_cell(&mut g, x, h, c, &pv).unwrap();
        // input gate 0.5 times candidate tanh(0) adds nothing
        assert!((g.value(c1).data()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn init_sets_forget_bias_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmCellParams::init(9, 4, &mut rng);
        assert_eq!(p.w_ih.shape(), &[9, 16]);
        assert_eq!(p.w_hh.shape(), &[4, 16]);
        assert_eq!(&p.bias.data()[4..8], &[1.0; 4]);
        assert!(p.bias.data()[..4].iter().all(|&b| b == 0.0));
        assert!(p.w_ih.data().iter().all(|v| v.abs() <= 1.0 / 3.0));
        assert!(p.w_hh.data().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn dense_hand_values() {
        let mut g = Graph::new();
        let p = DenseParams {
            weight: Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap(),
            bias: Tensor::vector(vec![0.5]).unwrap(),
        };
        let pv = p.map(&mut |t| g.constant(t.clone()));
        let x = g.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let y = dense(&mut g, x, &pv).unwrap();
        assert_eq!(g.value(y).data(), &[2.5]);
    }

    #[test]
    fn dense_identity() {
        let mut g = Graph::new();
        let p = DenseParams {
            weight: Tensor::identity(3),
            bias: Tensor::zeros(&[3]),
        };
        let pv = p.map(&mut |t| g.constant(t.clone()));
        let x = g.constant(Tensor::matrix(1, 3, vec![0.1, -2.0, 7.5]).unwrap());
        let y = dense(&mut g, x, &pv).unwrap();
        assert_eq!(g.value(y).data(), &[0.1, -2.0, 7.5]);
    }

    #[test]
    fn scan_matches_stepwise_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = LstmCellParams::init(3, 4, &mut rng);
        let xs = Tensor::uniform(&[5 * 2, 3], 1.0, &mut rng);
        let mut g = Graph::new();
        let pv = bind_const(&mut g, &p);
        let xv = g.constant(xs.clone());
        let run = lstm_scan(&mut g, xv, 5, None, &pv).unwrap();

        let mut h = g.constant(Tensor::zeros(&[2, 4]));
        let mut c = g.constant(Tensor::zeros(&[2, 4]));
        for t in 0..5 {
            let x = g.slice_rows(xv, 2 * t, 2 * t + 2).unwrap();
            (h, c) = lstm_cell(&mut g, x, h, c, &pv).unwrap();
        }
        for (a, b) in g.value(run.h).data().iter().zip(g.value(h).data()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(run.hidden.len(), 5);
    }

    #[test]
    fn cell_rejects_wrong_state_width() {
        let p = LstmCellParams::zeros(2, 3);
        let mut g = Graph::new();
        let pv = bind_const(&mut g, &p);
        let x = g.constant(Tensor::zeros(&[1, 2]));
        let h = g.constant(Tensor::zeros(&[1, 3]));
        let c = g.constant(Tensor::zeros(&[1, 2]));
        assert!(lstm_cell(&mut g, x, h, c, &pv).is_err());
    }
}
