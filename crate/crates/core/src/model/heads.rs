use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{params_struct, DecoderCache, FeatureNorm, FeatureNormCache, Linear, TokenDecoder};

/// `C^B`: token decoder to `F_BT`, then separate projections to the biometric
/// feature `f_bb` and the appearance feature `f_ba`, each followed by a
/// [`FeatureNorm`] neck so metric losses cannot collapse the batch.
/// Identity logits read `f_bb` only.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorHead {
    pub decoder: TokenDecoder,
    pub biometric: Linear,
    pub appearance: Linear,
    pub classifier: Linear,
    pub neck_bb: FeatureNorm,
    pub neck_ba: FeatureNorm,
}

params_struct!(ActorHead { decoder, biometric, appearance, classifier, neck_bb, neck_ba });

#[derive(Debug, Clone)]
pub struct ActorOutput {
    pub f_bt: Array2<f32>,
    pub f_bb: Array2<f32>,
    pub f_ba: Array2<f32>,
    pub logits: Array2<f32>,
}

#[derive(Debug, Clone)]
pub struct ActorCache {
    decoder: DecoderCache,
    f_bt: Array2<f32>,
    f_bb: Array2<f32>,
    /// Present after a training forward only.
    necks: Option<(FeatureNormCache, FeatureNormCache)>,
}

impl ActorHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        input: usize,
        tokens: usize,
        width: usize,
        layers: usize,
        heads: usize,
        biometric_dim: usize,
        appearance_dim: usize,
        num_actors: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let decoder = TokenDecoder::new(input, tokens, width, layers, heads, rng)?;
        let f = decoder.output_dim();
        Ok(Self {
            decoder,
            biometric: Linear::new(f, biometric_dim, 1.0, rng),
            appearance: Linear::new(f, appearance_dim, 1.0, rng),
            classifier: Linear::new(biometric_dim, num_actors, 1.0, rng),
            neck_bb: FeatureNorm::new(biometric_dim),
            neck_ba: FeatureNorm::new(appearance_dim),
        })
    }

    /// `train` normalizes with batch statistics and needs at least two rows.
    pub fn forward(&self, segment: ArrayView2<f32>, train: bool) -> Result<(ActorOutput, ActorCache)> {
        let (f_bt, decoder) = self.decoder.forward(segment)?;
        let bb = self.biometric.forward(f_bt.view());
        let ba = self.appearance.forward(f_bt.view());
        let (f_bb, f_ba, necks) = if train {
            if bb.nrows() < 2 {
                return Err(Error::Shape("batch statistics need at least two clips".into()));
            }
            let (f_bb, nb) = self.neck_bb.forward_train(bb.view());
            let (f_ba, na) = self.neck_ba.forward_train(ba.view());
            (f_bb, f_ba, Some((nb, na)))
        } else {
            (self.neck_bb.forward_eval(bb.view()), self.neck_ba.forward_eval(ba.view()), None)
        };
        let logits = self.classifier.forward(f_bb.view());
        let cache = ActorCache { decoder, f_bt: f_bt.clone(), f_bb: f_bb.clone(), necks };
        Ok((ActorOutput { f_bt, f_bb, f_ba, logits }, cache))
    }

    pub fn update_statistics(&mut self, cache: &ActorCache, momentum: f32) {
        if let Some((nb, na)) = &cache.necks {
            self.neck_bb.update(nb, momentum);
            self.neck_ba.update(na, momentum);
        }
    }

    /// Any of the output gradients may be absent. Needs a training forward.
    pub fn backward(
        &self,
        cache: &ActorCache,
        d_bb: Option<&Array2<f32>>,
        d_ba: Option<&Array2<f32>>,
        d_logits: Option<&Array2<f32>>,
        g: &mut ActorHead,
    ) -> Array2<f32> {
        let mut dbb = d_bb.cloned().unwrap_or_else(|| Array2::zeros(cache.f_bb.raw_dim()));
        if let Some(dl) = d_logits {
            dbb += &self.classifier.backward(cache.f_bb.view(), dl.view(), &mut g.classifier);
        }
        let (nb, na) = cache.necks.as_ref().expect("backward needs a training forward");
        let dbb = self.neck_bb.backward(nb, dbb.view());
        let mut dbt = self.biometric.backward(cache.f_bt.view(), dbb.view(), &mut g.biometric);
        if let Some(da) = d_ba {
            let da = self.neck_ba.backward(na, da.view());
            dbt += &self.appearance.backward(cache.f_bt.view(), da.view(), &mut g.appearance);
        }
        self.decoder.backward(&cache.decoder, dbt.view(), &mut g.decoder)
    }
}

/// `C^A`: token decoder, projection to `F_Ac`, activity classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityHead {
    pub decoder: TokenDecoder,
    pub project: Linear,
    pub classifier: Linear,
}

params_struct!(ActivityHead { decoder, project, classifier });

#[derive(Debug, Clone)]
pub struct ActivityOutput {
    pub f_ac: Array2<f32>,
    pub logits: Array2<f32>,
}

#[derive(Debug, Clone)]
pub struct ActivityCache {
    decoder: DecoderCache,
    decoded: Array2<f32>,
    f_ac: Array2<f32>,
}

impl ActivityHead {
    pub fn new<R: Rng>(
        input: usize,
        tokens: usize,
        width: usize,
        layers: usize,
        heads: usize,
        activity_dim: usize,
        num_activities: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let decoder = TokenDecoder::new(input, tokens, width, layers, heads, rng)?;
        let f = decoder.output_dim();
        Ok(Self {
            decoder,
            project: Linear::new(f, activity_dim, 1.0, rng),
            classifier: Linear::new(activity_dim, num_activities, 1.0, rng),
        })
    }

    pub fn forward(&self, segment: ArrayView2<f32>) -> Result<(ActivityOutput, ActivityCache)> {
        let (decoded, decoder) = self.decoder.forward(segment)?;
        let f_ac = self.project.forward(decoded.view());
        let logits = self.classifier.forward(f_ac.view());
        let cache = ActivityCache { decoder, decoded, f_ac: f_ac.clone() };
        Ok((ActivityOutput { f_ac, logits }, cache))
    }

    pub fn backward(&self, cache: &ActivityCache, d_logits: &Array2<f32>, g: &mut ActivityHead) -> Array2<f32> {
        let dac = self.classifier.backward(cache.f_ac.view(), d_logits.view(), &mut g.classifier);
        let dd = self.project.backward(cache.decoded.view(), dac.view(), &mut g.project);
        self.decoder.backward(&cache.decoder, dd.view(), &mut g.decoder)
    }
}
