//! Finite-difference checks for every differentiable tape op, each on five
//! seeded random shapes.

use patchprint::autodiff::gradcheck::check_gradients;
use patchprint::autodiff::{cross_attention, AutodiffError, Tape, Tensor, Var};
use patchprint::rng::{normal, rng, uniform_index, unit_f64, Rng};

pub const STEP: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
pub const SHAPES_PER_OP: usize = 5;

pub struct OpResult {
    pub op: &'static str,
    pub max_rel_error: f64,
}

fn randn(r: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal(r)).collect()).unwrap()
}

/// Values bounded away from zero so that relu kinks stay outside the stencil.
fn away_from_zero(r: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = randn(r, shape);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = if *v < 0.0 { -0.05 - v.abs() } else { 0.05 + v.abs() };
        }
    }
    t
}

/// Distinct values at least 0.05 apart, so pooling maxima never tie.
fn distinct(r: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, uniform_index(r, i + 1));
    }
    let data = idx.iter().map(|&k| k as f64 * 0.05 - n as f64 * 0.025).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn positive(r: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| 0.1 + unit_f64(r)).collect()).unwrap()
}

fn dim(r: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + uniform_index(r, hi - lo + 1)
}

type Body = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>;

fn check(op: &'static str, r: &mut Rng, make: &dyn Fn(&mut Rng) -> (Vec<Tensor<f64>>, Box<Body>)) -> OpResult {
    let mut worst: f64 = 0.0;
    for _ in 0..SHAPES_PER_OP {
        let (inputs, f) = make(r);
        let report = check_gradients(&inputs, STEP, |t, v| f(t, v)).unwrap_or_else(|e| panic!("{op}: {e}"));
        worst = worst.max(report.max_rel_error());
    }
    OpResult { op, max_rel_error: worst }
}

pub fn run_suite(seed: u64) -> Vec<OpResult> {
    let mut r = rng(seed);
    let r = &mut r;
    let mut out = Vec::new();

    out.push(check("add", r, &|r| {
        let s = [dim(r, 1, 4), dim(r, 1, 5)];
        (vec![randn(r, &s), randn(r, &s)], Box::new(|t, v| t.add(v[0], v[1])))
    }));
    out.push(check("mul", r, &|r| {
        let s = [dim(r, 1, 4), dim(r, 1, 5)];
        (vec![randn(r, &s), randn(r, &s)], Box::new(|t, v| t.mul(v[0], v[1])))
    }));
    out.push(check("scale", r, &|r| {
        let s = [dim(r, 1, 6)];
        let f = normal(r);
        (vec![randn(r, &s)], Box::new(move |t, v| Ok(t.scale(v[0], f))))
    }));
    out.push(check("relu", r, &|r| {
        let s = [dim(r, 1, 3), dim(r, 2, 6)];
        (vec![away_from_zero(r, &s)], Box::new(|t, v| Ok(t.relu(v[0]))))
    }));
    out.push(check("sigmoid", r, &|r| {
        let s = [dim(r, 1, 3), dim(r, 2, 6)];
        (vec![randn(r, &s)], Box::new(|t, v| Ok(t.sigmoid(v[0]))))
    }));
    out.push(check("sum", r, &|r| {
        let s = [dim(r, 1, 4), dim(r, 1, 4)];
        (vec![randn(r, &s)], Box::new(|t, v| Ok(t.sum(v[0]))))
    }));
    out.push(check("mean", r, &|r| {
        let s = [dim(r, 1, 4), dim(r, 1, 4)];
        (vec![randn(r, &s)], Box::new(|t, v| Ok(t.mean(v[0]))))
    }));
    out.push(check("reshape", r, &|r| {
        let (a, b) = (dim(r, 1, 4), dim(r, 1, 4));
        (vec![randn(r, &[a, b])], Box::new(move |t, v| t.reshape(v[0], &[b, a])))
    }));
    out.push(check("conv2d", r, &|r| {
        let (n, cin, cout) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3));
        let k = [1, 3][uniform_index(r, 2)];
        let stride = dim(r, 1, 2);
        let pad = uniform_index(r, k.min(2));
        let (h, w) = (dim(r, k, 6), dim(r, k, 6));
        let inputs = vec![randn(r, &[n, cin, h, w]), randn(r, &[cout, cin, k, k]), randn(r, &[cout])];
        (inputs, Box::new(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad)))
    }));
    out.push(check("conv_transpose2d", r, &|r| {
        let (n, cin, cout) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3));
        let k = dim(r, 1, 3);
        let stride = dim(r, 1, 2);
        let (h, w) = (dim(r, 1, 4), dim(r, 1, 4));
        let inputs = vec![randn(r, &[n, cin, h, w]), randn(r, &[cin, cout, k, k]), randn(r, &[cout])];
        (inputs, Box::new(move |t, v| t.conv_transpose2d(v[0], v[1], Some(v[2]), stride, 0)))
    }));
    out.push(check("linear", r, &|r| {
        let (n, fin, fout) = (dim(r, 1, 4), dim(r, 1, 5), dim(r, 1, 4));
        let inputs = vec![randn(r, &[n, fin]), randn(r, &[fout, fin]), randn(r, &[fout])];
        (inputs, Box::new(|t, v| t.linear(v[0], v[1], Some(v[2]))))
    }));
    out.push(check("matmul", r, &|r| {
        let (b, m, k, n) = (dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
        if uniform_index(r, 2) == 0 {
            (vec![randn(r, &[b, m, k]), randn(r, &[k, n])], Box::new(|t, v| t.matmul(v[0], v[1])))
        } else {
            (vec![randn(r, &[b, m, k]), randn(r, &[b, k, n])], Box::new(|t, v| t.matmul(v[0], v[1])))
        }
    }));
    out.push(check("transpose", r, &|r| {
        let s = [dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4)];
        (vec![randn(r, &s)], Box::new(|t, v| t.transpose_last2(v[0])))
    }));
    out.push(check("softmax", r, &|r| {
        let s = [dim(r, 1, 4), dim(r, 1, 6)];
        (vec![randn(r, &s)], Box::new(|t, v| Ok(t.softmax(v[0]))))
    }));
    out.push(check("max_pool2", r, &|r| {
        let s = [dim(r, 1, 2), dim(r, 1, 3), 2 * dim(r, 1, 3), 2 * dim(r, 1, 3)];
        (vec![distinct(r, &s)], Box::new(|t, v| t.max_pool2(v[0])))
    }));
    out.push(check("global_avg_pool", r, &|r| {
        let s = [dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4)];
        (vec![randn(r, &s)], Box::new(|t, v| t.global_avg_pool(v[0])))
    }));
    out.push(check("batch_norm_train", r, &|r| {
        let c = dim(r, 1, 3);
        let s = if uniform_index(r, 2) == 0 { vec![dim(r, 2, 6), c] } else { vec![dim(r, 1, 3), c, dim(r, 1, 3), 2] };
        let inputs = vec![randn(r, &s), randn(r, &[c]), randn(r, &[c])];
        (inputs, Box::new(|t, v| Ok(t.batch_norm_train(v[0], v[1], v[2])?.0)))
    }));
    out.push(check("batch_norm_eval", r, &|r| {
        let c = dim(r, 1, 3);
        let s = [dim(r, 1, 3), c, dim(r, 1, 3), dim(r, 1, 3)];
        let mean: Vec<f64> = (0..c).map(|_| normal(r)).collect();
        let var: Vec<f64> = (0..c).map(|_| 0.5 + unit_f64(r)).collect();
        let inputs = vec![randn(r, &s), randn(r, &[c]), randn(r, &[c])];
        (inputs, Box::new(move |t, v| t.batch_norm_eval(v[0], v[1], v[2], &mean, &var)))
    }));
    out.push(check("concat", r, &|r| {
        let axis = uniform_index(r, 3);
        let mut a = vec![dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3)];
        let mut b = a.clone();
        a[axis] = dim(r, 1, 3);
        b[axis] = dim(r, 1, 3);
        (vec![randn(r, &a), randn(r, &b)], Box::new(move |t, v| t.concat(&[v[0], v[1]], axis)))
    }));
    out.push(check("tokens", r, &|r| {
        let (h, w) = (dim(r, 1, 3), dim(r, 1, 3));
        let s = [dim(r, 1, 2), dim(r, 1, 4), h, w];
        (vec![randn(r, &s)], Box::new(move |t, v| {
            let tok = t.to_tokens(v[0])?;
            let sq = t.mul(tok, tok)?;
            t.from_tokens(sq, h, w)
        }))
    }));
    out.push(check("l1_normalize", r, &|r| {
        let s = [dim(r, 1, 4), dim(r, 2, 4)];
        (vec![positive(r, &s)], Box::new(|t, v| Ok(t.l1_normalize(v[0]))))
    }));
    out.push(check("bce_loss", r, &|r| {
        let n = dim(r, 1, 6);
        let target: Vec<f64> = (0..n).map(|_| uniform_index(r, 2) as f64).collect();
        (vec![randn(r, &[n, 1])], Box::new(move |t, v| {
            let p = t.sigmoid(v[0]);
            t.bce_loss(p, &target)
        }))
    }));
    out.push(check("mse_loss", r, &|r| {
        let s = [dim(r, 1, 4), dim(r, 1, 4)];
        (vec![randn(r, &s), randn(r, &s)], Box::new(|t, v| t.mse_loss(v[0], v[1])))
    }));
    out.push(check("cross_attention", r, &|r| {
        let (n, tq, s, d) = (dim(r, 1, 2), dim(r, 1, 4), dim(r, 1, 3), dim(r, 1, 4));
        let inputs = vec![
            randn(r, &[n, tq, d]),
            randn(r, &[n, s, d]),
            randn(r, &[d, d]),
            randn(r, &[d, d]),
            randn(r, &[d, d]),
        ];
        (inputs, Box::new(|t, v| cross_attention(t, v[0], v[1], v[2], v[3], v[4])))
    }));
    out
}
