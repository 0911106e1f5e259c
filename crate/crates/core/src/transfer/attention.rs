use ndarray::{Array2, ArrayView2};

/// Row-wise numerically stable softmax.
pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn active(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

/// Attention weights of the active queries over the active keys
/// (`|queries| x |keys|`).
fn weights(q: ArrayView2<f64>, k: ArrayView2<f64>, qi: &[usize], ki: &[usize]) -> Array2<f64> {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let scores = Array2::from_shape_fn((qi.len(), ki.len()), |(a, b)| {
        q.row(qi[a]).dot(&k.row(ki[b])) * scale
    });
    softmax_rows(&scores)
}

/// `Softmax(Q K^T / sqrt(d)) V` restricted to active queries and keys.
///
/// Rows of inactive queries are zero, as is every row when no key is active.
/// `q` may come from a different image than `k`/`v`; the output has one row
/// per query.
pub fn masked_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    query_mask: &[bool],
    key_mask: &[bool],
) -> Array2<f64> {
    let mut out = Array2::zeros((q.nrows(), v.ncols()));
    let (qi, ki) = (active(query_mask), active(key_mask));
    if qi.is_empty() || ki.is_empty() {
        return out;
    }
    let p = weights(q, k, &qi, &ki);
    for (a, &i) in qi.iter().enumerate() {
        let mut row = out.row_mut(i);
        for (b, &j) in ki.iter().enumerate() {
            row.scaled_add(p[[a, b]], &v.row(j));
        }
    }
    out
}

/// Plain self-attention over all rows.
pub fn attention(q: ArrayView2<f64>, k: ArrayView2<f64>, v: ArrayView2<f64>) -> Array2<f64> {
    let all_q = vec![true; q.nrows()];
    let all_k = vec![true; k.nrows()];
    masked_attention(q, k, v, &all_q, &all_k)
}

/// Gradients of `masked_attention` given the upstream gradient `dout`.
pub struct AttentionGrads {
    pub dq: Array2<f64>,
    pub dk: Array2<f64>,
    pub dv: Array2<f64>,
}

pub fn masked_attention_backward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    query_mask: &[bool],
    key_mask: &[bool],
    dout: ArrayView2<f64>,
) -> AttentionGrads {
    let mut g = AttentionGrads {
        dq: Array2::zeros(q.raw_dim()),
        dk: Array2::zeros(k.raw_dim()),
        dv: Array2::zeros(v.raw_dim()),
    };
    let (qi, ki) = (active(query_mask), active(key_mask));
    if qi.is_empty() || ki.is_empty() {
        return g;
    }
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let p = weights(q, k, &qi, &ki);
    for (a, &i) in qi.iter().enumerate() {
        let d = dout.row(i);
        let dp: Vec<f64> = ki.iter().map(|&j| d.dot(&v.row(j))).collect();
        let mean: f64 = dp.iter().zip(p.row(a)).map(|(x, w)| x * w).sum();
        for (b, &j) in ki.iter().enumerate() {
            let w = p[[a, b]];
            g.dv.row_mut(j).scaled_add(w, &d);
            let ds = w * (dp[b] - mean) * scale;
            if ds != 0.0 {
                g.dq.row_mut(i).scaled_add(ds, &k.row(j));
                g.dk.row_mut(j).scaled_add(ds, &q.row(i));
            }
        }
    }
    g
}
