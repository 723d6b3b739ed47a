use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn check<T: Real>(a: &Tensor<T>, b: &Tensor<T>, g: &Tensor<T>) -> Result<()> {
    a.expect_same_shape(b, "fuse")?;
    let (_, h, w) = a.chw();
    if g.shape() != [1, h, w] {
        return Err(Error::contract(format!(
            "fuse: guide map {:?} must be [1, {h}, {w}]",
            g.shape()
        )));
    }
    Ok(())
}

/// `a * g + b * (1 - g)` with `g` broadcast over channels.
pub(crate) fn fuse_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    check(a, b, g)?;
    let (c, h, w) = a.chw();
    let hw = h * w;
    let gd = g.data();
    let out = a
        .data()
        .iter()
        .zip(b.data())
        .enumerate()
        .map(|(i, (&av, &bv))| {
            let gv = gd[i % hw];
            av * gv + bv * (T::one() - gv)
        })
        .collect();
    Tensor::from_vec(&[c, h, w], out)
}

pub(crate) struct FuseGrads<T> {
    pub a: Tensor<T>,
    pub b: Tensor<T>,
    pub g: Tensor<T>,
}

pub(crate) fn fuse_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> FuseGrads<T> {
    let (c, h, w) = a.chw();
    let hw = h * w;
    let gd = g.data();
    let go = grad_out.data();
    let mut ga = vec![T::zero(); c * hw];
    let mut gb = vec![T::zero(); c * hw];
    let mut gg = vec![T::zero(); hw];
    for i in 0..c * hw {
        let p = i % hw;
        ga[i] = go[i] * gd[p];
        gb[i] = go[i] * (T::one() - gd[p]);
        gg[p] += go[i] * (a.data()[i] - b.data()[i]);
    }
    FuseGrads {
        a: Tensor::from_vec(&[c, h, w], ga).expect("shape"),
        b: Tensor::from_vec(&[c, h, w], gb).expect("shape"),
        g: Tensor::from_vec(&[1, h, w], gg).expect("shape"),
    }
}
