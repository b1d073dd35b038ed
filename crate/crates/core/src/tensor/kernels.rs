use super::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

const LANES: usize = 8;

/// Inner product with eight fixed accumulation lanes, combined pairwise.
///
/// The order is fixed, so results are bit-reproducible for a given length.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

const MR: usize = 4;
const NR: usize = 8;

/// `out[m,n] += a[m,k] · b[k,n]`.
///
/// Every output element accumulates its `k` products in index order onto
/// the existing value, whatever the blocking.
/// Dispatches to an AVX build of the same loops when the CPU has it. Lane
/// width never changes which products are summed or in what order, so both
/// paths give identical bits.
pub fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    assert!(
        a.len() == m * k && b.len() == k * n && out.len() == m * n,
        "matmul extents"
    );
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX, checked just above.
        unsafe { matmul_avx(a, b, m, k, n, out) };
        return;
    }
    matmul_blocked(a, b, m, k, n, out);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn matmul_avx<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    matmul_blocked(a, b, m, k, n, out);
}

#[inline(always)]
fn matmul_blocked<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    let full_cols = n - n % NR;
    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j < full_cols {
            block(a, b, i, j, k, n, out);
            j += NR;
        }
        if j < n {
            for r in i..i + MR {
                tail(a, b, r, j, k, n, out);
            }
        }
        i += MR;
    }
    for r in i..m {
        tail(a, b, r, 0, k, n, out);
    }
}

/// Register-blocked `MR × NR` tile at `(i, j)`.
#[inline(always)]
fn block<F: Real>(a: &[F], b: &[F], i: usize, j: usize, k: usize, n: usize, out: &mut [F]) {
    let mut acc = [[F::zero(); NR]; MR];
    let a_rows: [&[F]; MR] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
    for (r, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&out[(i + r) * n + j..(i + r) * n + j + NR]);
    }
    for (p, b_full) in b.chunks_exact(n).take(k).enumerate() {
        let brow: &[F; NR] = b_full[j..j + NR].try_into().expect("NR columns");
        for (row, a_row) in acc.iter_mut().zip(&a_rows) {
            let av = a_row[p];
            for c in 0..NR {
                row[c] += av * brow[c];
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        out[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(row);
    }
}

/// Row `r`, columns `j..n`, in the same accumulation order as [`block`].
#[inline(always)]
fn tail<F: Real>(a: &[F], b: &[F], r: usize, j: usize, k: usize, n: usize, out: &mut [F]) {
    let orow = &mut out[r * n + j..(r + 1) * n];
    for p in 0..k {
        axpy(a[r * k + p], &b[p * n + j..(p + 1) * n], orow);
    }
}

pub(crate) fn transpose<F: Real>(x: &[F], rows: usize, cols: usize) -> Vec<F> {
    debug_assert_eq!(x.len(), rows * cols);
    let mut out = vec![F::zero(); x.len()];
    for (r, row) in x.chunks_exact(cols).enumerate() {
        for (o, &v) in out[r..].iter_mut().step_by(rows).zip(row) {
            *o = v;
        }
    }
    out
}

/// `out[m,n] += a[m,k] · b[n,k]ᵀ`.
pub fn matmul_nt<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    matmul(a, &transpose(b, n, k), m, k, n, out);
}

/// `out[k,n] += a[m,k]ᵀ · b[m,n]`, accumulated over `m` in order.
pub(crate) fn matmul_tn<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    matmul(&transpose(a, m, k), b, k, m, n, out);
}

/// Max-subtracted softmax of one row, in place.
pub(crate) fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
    for x in row.iter_mut() {
        *x -= max;
    }
    F::exp_in_place(row);
    let mut sum = F::zero();
    for &x in row.iter() {
        sum += x;
    }
    let inv = F::one() / sum;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

/// Single-head attention on contiguous `[n_q,d]`, `[n_k,d]`, `[n_k,d_v]`
/// buffers. Writes `[n_q,d_v]` into `out` and `[n_q,n_k]` weights into `probs`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_head<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    n_q: usize,
    n_k: usize,
    d: usize,
    d_v: usize,
    out: &mut [F],
    probs: &mut [F],
) {
    let scale = F::one() / F::of(d as f64).sqrt();
    let qs: Vec<F> = q.iter().map(|&x| x * scale).collect();
    probs.fill(F::zero());
    matmul_nt(&qs, k, n_q, d, n_k, probs);
    for row in probs.chunks_exact_mut(n_k) {
        softmax_in_place(row);
    }
    matmul(probs, v, n_q, n_k, d_v, out);
}

/// Backward of [`attention_head`]; accumulates into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_head_backward<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    d_out: &[F],
    n_q: usize,
    n_k: usize,
    d: usize,
    d_v: usize,
    dq: &mut [F],
    dk: &mut [F],
    dv: &mut [F],
) {
    let scale = F::one() / F::of(d as f64).sqrt();
    matmul_tn(probs, d_out, n_q, n_k, d_v, dv);
    let mut ds = vec![F::zero(); n_q * n_k];
    matmul_nt(d_out, v, n_q, d_v, n_k, &mut ds);
    for (srow, prow) in ds.chunks_exact_mut(n_k).zip(probs.chunks_exact(n_k)) {
        let inner = dot(srow, prow);
        for (s, &p) in srow.iter_mut().zip(prow) {
            *s = p * (*s - inner) * scale;
        }
    }
    matmul(&ds, k, n_q, n_k, d, dq);
    matmul_tn(&ds, q, n_q, n_k, d, dk);
}

fn check_attention_shapes<F: Real>(q: &Tensor<F>, k: &Tensor<F>, v: &Tensor<F>) -> Result<()> {
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 {
        return shape_err("attention operands must be rank 2");
    }
    if q.cols() != k.cols() {
        return shape_err(format!(
            "query width {} differs from key width {}",
            q.cols(),
            k.cols()
        ));
    }
    if k.rows() != v.rows() {
        return shape_err(format!("{} keys but {} values", k.rows(), v.rows()));
    }
    Ok(())
}

/// Softmax weights `softmax_j(q·k_j/√d)` as an `[n_q, n_k]` tensor.
pub fn attention_weights<F: Real>(q: &Tensor<F>, k: &Tensor<F>) -> Result<Tensor<F>> {
    check_attention_shapes(q, k, k)?;
    let (n_q, n_k, d) = (q.rows(), k.rows(), q.cols());
    let scale = F::one() / F::of(d as f64).sqrt();
    let mut w = vec![F::zero(); n_q * n_k];
    for i in 0..n_q {
        let row = &mut w[i * n_k..(i + 1) * n_k];
        for (j, x) in row.iter_mut().enumerate() {
            *x = dot(q.row(i), k.row(j)) * scale;
        }
        softmax_in_place(row);
    }
    Tensor::new([n_q, n_k], w)
}

/// Scaled dot-product attention `softmax(QKᵀ/√d)·V`.
pub fn scaled_dot_attention<F: Real>(
    q: &Tensor<F>,
    k: &Tensor<F>,
    v: &Tensor<F>,
) -> Result<Tensor<F>> {
    if k.is_empty() {
        return Err(Error::InvalidArgument("empty key set".into()));
    }
    check_attention_shapes(q, k, v)?;
    let (n_q, n_k, d, d_v) = (q.rows(), k.rows(), q.cols(), v.cols());
    let mut out = vec![F::zero(); n_q * d_v];
    let mut probs = vec![F::zero(); n_q * n_k];
    attention_head(
        q.data(),
        k.data(),
        v.data(),
        n_q,
        n_k,
        d,
        d_v,
        &mut out,
        &mut probs,
    );
    Tensor::new([n_q, d_v], out)
}
