use super::tape::{Tape, Var};
use super::tensor::Scalar;
use super::AutodiffError;

/// `softmax((query·Wq)(context·Wk)ᵀ / √d) (context·Wv)`.
///
/// Accepts unbatched `query: [T, d]`, `context: [S, d]` or batched
/// `[N, T, d]`, `[N, S, d]`; every projection is `[d, d]`.
pub fn cross_attention<T: Scalar>(
    tape: &mut Tape<T>,
    query: Var,
    context: Var,
    wq: Var,
    wk: Var,
    wv: Var,
) -> Result<Var, AutodiffError> {
    let (qs, cs) = (tape.shape(query).to_vec(), tape.shape(context).to_vec());
    let (query, context, unbatched) = match (qs.as_slice(), cs.as_slice()) {
        ([t, d], [s, dc]) if d == dc => (tape.reshape(query, &[1, *t, *d])?, tape.reshape(context, &[1, *s, *dc])?, true),
        ([n, _, d], [nc, _, dc]) if n == nc && d == dc => (query, context, false),
        _ => return Err(AutodiffError::ShapeMismatch(format!("cross_attention query {qs:?} context {cs:?}"))),
    };
    let d = *qs.last().expect("rank checked");
    for w in [wq, wk, wv] {
        if tape.shape(w) != [d, d] {
            return Err(AutodiffError::ShapeMismatch(format!("projection {:?} for width {d}", tape.shape(w))));
        }
    }
    let q = tape.matmul(query, wq)?;
    let k = tape.matmul(context, wk)?;
    let v = tape.matmul(context, wv)?;
    let kt = tape.transpose_last2(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let attn = tape.softmax(scaled);
    let out = tape.matmul(attn, v)?;
    if unbatched {
        tape.reshape(out, &qs)
    } else {
        Ok(out)
    }
}
