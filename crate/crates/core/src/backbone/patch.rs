//! Space-time patch tokenization of `[T, C, H, W]` volumes.

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

fn check(dims: &[usize], patch: [usize; 3]) -> Result<()> {
    if dims.len() != 4 {
        return shape_err(format!("expected [T, C, H, W], got {dims:?}"));
    }
    let [pt, ph, pw] = patch;
    if pt == 0 || ph == 0 || pw == 0 || dims[0] % pt != 0 || dims[2] % ph != 0 || dims[3] % pw != 0
    {
        return shape_err(format!("extents {dims:?} not divisible by patch {patch:?}"));
    }
    Ok(())
}

/// Tokens ordered `(t, h, w)` row-major; features ordered `(c, dt, dh, dw)`.
pub fn patchify<F: Real>(x: &Tensor<F>, patch: [usize; 3]) -> Result<Tensor<F>> {
    check(x.shape(), patch)?;
    let &[t, c, h, w] = x.shape() else {
        unreachable!()
    };
    let [pt, ph, pw] = patch;
    let (gt, gh, gw) = (t / pt, h / ph, w / pw);
    let width = c * pt * ph * pw;
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    for it in 0..gt {
        for ih in 0..gh {
            for iw in 0..gw {
                for ch in 0..c {
                    for dt in 0..pt {
                        for dh in 0..ph {
                            let base = (((it * pt + dt) * c + ch) * h + ih * ph + dh) * w + iw * pw;
                            out.extend_from_slice(&src[base..base + pw]);
                        }
                    }
                }
            }
        }
    }
    Tensor::new([gt * gh * gw, width], out)
}

/// Inverse of [`patchify`] for a volume of extents `dims`.
pub fn unpatchify<F: Real>(
    tokens: &Tensor<F>,
    dims: [usize; 4],
    patch: [usize; 3],
) -> Result<Tensor<F>> {
    check(&dims, patch)?;
    let [t, c, h, w] = dims;
    let [pt, ph, pw] = patch;
    let (gt, gh, gw) = (t / pt, h / ph, w / pw);
    if tokens.shape() != [gt * gh * gw, c * pt * ph * pw] {
        return shape_err(format!(
            "tokens {:?} do not tile {dims:?} with patch {patch:?}",
            tokens.shape()
        ));
    }
    let mut out = vec![F::zero(); tokens.len()];
    let mut src = tokens.data().chunks_exact(pw);
    for it in 0..gt {
        for ih in 0..gh {
            for iw in 0..gw {
                for ch in 0..c {
                    for dt in 0..pt {
                        for dh in 0..ph {
                            let base = (((it * pt + dt) * c + ch) * h + ih * ph + dh) * w + iw * pw;
                            out[base..base + pw].copy_from_slice(src.next().expect("sized above"));
                        }
                    }
                }
            }
        }
    }
    Tensor::new(dims.to_vec(), out)
}
