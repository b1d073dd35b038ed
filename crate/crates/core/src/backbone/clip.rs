use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Latent video `[T_lat, C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentClip<F = f32>(Tensor<F>);

impl<F: Real> LatentClip<F> {
    pub fn new(values: Tensor<F>) -> Result<Self> {
        if values.rank() != 4 {
            return shape_err(format!(
                "latent clip must be rank 4, got {:?}",
                values.shape()
            ));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("latent clip".into()));
        }
        Ok(Self(values))
    }

    /// Skips the finiteness check, for intermediate predictions.
    pub(crate) fn unchecked(values: Tensor<F>) -> Self {
        debug_assert_eq!(values.rank(), 4);
        Self(values)
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self(Tensor::zeros(dims.to_vec()))
    }

    pub fn dims(&self) -> [usize; 4] {
        let s = self.0.shape();
        [s[0], s[1], s[2], s[3]]
    }

    /// Elements per latent frame.
    pub fn frame_len(&self) -> usize {
        let [_, c, h, w] = self.dims();
        c * h * w
    }

    pub fn frame(&self, t: usize) -> &[F] {
        let n = self.frame_len();
        &self.0.data()[t * n..(t + 1) * n]
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<F> {
        self.0
    }

    pub fn cast<G: Real>(&self) -> LatentClip<G> {
        LatentClip(self.0.cast())
    }
}

/// Conditioning channels that accompany a latent clip.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceBundle<F = f32> {
    /// `[T_lat, C_p, H, W]`
    pub pose: Tensor<F>,
    /// `[T_lat, C, H, W]`, the clip with the garment region removed.
    pub agnostic: Tensor<F>,
    /// `[T_lat, C_h, H, W]` hand prior.
    pub hand: Option<Tensor<F>>,
    /// `[C, H, W]` reference garment.
    pub garment: Tensor<F>,
}

impl<F: Real> GuidanceBundle<F> {
    /// Checks extents against a latent clip of `dims`.
    pub fn validate(
        &self,
        dims: [usize; 4],
        pose_channels: usize,
        hand_channels: usize,
    ) -> Result<()> {
        let [t, c, h, w] = dims;
        let want = |name: &str, x: &Tensor<F>, shape: &[usize]| {
            if x.shape() != shape {
                shape_err(format!("{name} {:?}, expected {shape:?}", x.shape()))
            } else {
                Ok(())
            }
        };
        want("pose", &self.pose, &[t, pose_channels, h, w])?;
        want("agnostic", &self.agnostic, &[t, c, h, w])?;
        want("garment", &self.garment, &[c, h, w])?;
        match &self.hand {
            Some(hand) => want("hand", hand, &[t, hand_channels, h, w]),
            None => Err(Error::IncompleteBundle(
                "hand prior channels missing".into(),
            )),
        }
    }

    pub fn cast<G: Real>(&self) -> GuidanceBundle<G> {
        GuidanceBundle {
            pose: self.pose.cast(),
            agnostic: self.agnostic.cast(),
            hand: self.hand.as_ref().map(Tensor::cast),
            garment: self.garment.cast(),
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F + Copy) -> Self {
        Self {
            pose: self.pose.map(f),
            agnostic: self.agnostic.map(f),
            hand: self.hand.as_ref().map(|h| h.map(f)),
            garment: self.garment.map(f),
        }
    }

    /// Pose, agnostic and the garment repeated over time, stacked along channels.
    pub fn context_stack(&self) -> Result<Tensor<F>> {
        let s = self.agnostic.shape();
        let (t, h, w) = (s[0], s[2], s[3]);
        let (cp, ca, cg) = (self.pose.shape()[1], s[1], self.garment.shape()[0]);
        let plane = h * w;
        let mut data = Vec::with_capacity(t * (cp + ca + cg) * plane);
        for f in 0..t {
            data.extend_from_slice(&self.pose.data()[f * cp * plane..(f + 1) * cp * plane]);
            data.extend_from_slice(&self.agnostic.data()[f * ca * plane..(f + 1) * ca * plane]);
            data.extend_from_slice(self.garment.data());
        }
        Tensor::new([t, cp + ca + cg, h, w], data)
    }
}
