//! Time-conditioned U-Net noise predictor with optional contourlet feature
//! injection at every encoder level.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::bridge::{NoiseEstimator, NoisePredictor};
use crate::contourlet::{cdem_embed, CdemConvs, ContourletPyramid, ContourletTransform};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Group count of every normalization layer.
pub const NORM_GROUPS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    /// Feature width, shared by every resolution level.
    pub base_channels: usize,
    /// Number of resolution levels; the image shrinks by two between levels.
    pub depth: usize,
    /// Width of the sinusoidal embedding and of the time MLP.
    pub time_dim: usize,
    pub cdem_enabled: bool,
    /// `j` per level: level `l` receives `2^j` directional subbands.
    pub directions: Vec<u32>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            depth: 3,
            time_dim: 64,
            cdem_enabled: true,
            directions: vec![3, 3, 2],
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidConfig("denoiser depth must be at least 1".into()));
        }
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(NORM_GROUPS) {
            return Err(Error::InvalidConfig(format!(
                "base_channels must be a positive multiple of {NORM_GROUPS}, got {}",
                self.base_channels
            )));
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "time_dim must be even and at least 2, got {}",
                self.time_dim
            )));
        }
        if self.cdem_enabled && self.directions.len() != self.depth {
            return Err(Error::InvalidConfig(format!(
                "CDEM needs one direction count per level: depth {} but {} given",
                self.depth,
                self.directions.len()
            )));
        }
        if self.cdem_enabled && self.directions.contains(&0) {
            return Err(Error::InvalidConfig("direction counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Channel count at resolution level `l`.
    pub fn channels(&self, _level: usize) -> usize {
        self.base_channels
    }
}

/// Interleaved `(sin, cos)` pairs of `t * w_k`, with `w_k` spaced
/// geometrically from 1 down to 1/10000.
pub fn time_embedding<T: Scalar>(t: usize, dim: usize) -> Result<Vec<T>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("time embedding width must be even, got {dim}")));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let omega = if half == 1 {
            1.0
        } else {
            10000f64.powf(-(k as f64) / (half - 1) as f64)
        };
        let arg = t as f64 * omega;
        out.push(T::lit(arg.sin()));
        out.push(T::lit(arg.cos()));
    }
    Ok(out)
}

const RES_GAIN: f64 = 1.0;

fn insert_conv<T: Scalar>(p: &mut ParamSet<T>, name: &str, cout: usize, cin: usize, k: usize, rng: &mut RngState) {
    p.insert_fan_in(&format!("{name}.w"), &[cout, cin, k, k], cin * k * k, RES_GAIN, rng);
    p.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
}

fn insert_linear<T: Scalar>(p: &mut ParamSet<T>, name: &str, din: usize, dout: usize, rng: &mut RngState) {
    p.insert_fan_in(&format!("{name}.w"), &[din, dout], din, RES_GAIN, rng);
    p.insert(format!("{name}.b"), Tensor::zeros(&[dout]));
}

fn insert_norm<T: Scalar>(p: &mut ParamSet<T>, name: &str, c: usize) {
    p.insert(format!("{name}.g"), Tensor::full(&[c], T::one()));
    p.insert(format!("{name}.b"), Tensor::zeros(&[c]));
}

fn insert_res<T: Scalar>(p: &mut ParamSet<T>, name: &str, c: usize, td: usize, rng: &mut RngState) {
    insert_norm(p, &format!("{name}.gn1"), c);
    insert_conv(p, &format!("{name}.conv1"), c, c, 3, rng);
    insert_linear(p, &format!("{name}.temb"), td, c, rng);
    insert_norm(p, &format!("{name}.gn2"), c);
    insert_conv(p, &format!("{name}.conv2"), c, c, 3, rng);
}

/// Fan-in scaled Gaussian weights, zero biases, unit norm gains; the output
/// convolution and the last CDEM convolution of every level start at zero.
pub fn init_params_with<T: Scalar>(rng: &mut RngState, config: &DenoiserConfig) -> Result<ParamSet<T>> {
    config.validate()?;
    let td = config.time_dim;
    let mut p = ParamSet::new();
    insert_linear(&mut p, "time.fc1", td, td, rng);
    insert_linear(&mut p, "time.fc2", td, td, rng);
    insert_conv(&mut p, "stem", config.channels(0), 1, 3, rng);
    for l in 0..config.depth {
        let c = config.channels(l);
        if l > 0 {
            insert_conv(&mut p, &format!("enc{l}.down"), c, config.channels(l - 1), 3, rng);
        }
        insert_res(&mut p, &format!("enc{l}.res"), c, td, rng);
        if config.cdem_enabled {
            let n = 1usize << config.directions[l];
            insert_conv(&mut p, &format!("cdem{l}.conv1"), c, n, 3, rng);
            insert_conv(&mut p, &format!("cdem{l}.conv2"), c, c, 1, rng);
            p.insert(format!("cdem{l}.conv3.w"), Tensor::zeros(&[c, c, 1, 1]));
            p.insert(format!("cdem{l}.conv3.b"), Tensor::zeros(&[c]));
        }
    }
    insert_res(&mut p, "mid.res", config.channels(config.depth - 1), td, rng);
    for l in (0..config.depth.saturating_sub(1)).rev() {
        let c = config.channels(l);
        insert_conv(&mut p, &format!("dec{l}.fuse"), c, config.channels(l + 1) + c, 3, rng);
        insert_res(&mut p, &format!("dec{l}.res"), c, td, rng);
    }
    let c0 = config.channels(0);
    insert_norm(&mut p, "head.gn", c0);
    p.insert("head.conv.w", Tensor::zeros(&[1, c0, 3, 3]));
    p.insert("head.conv.b", Tensor::zeros(&[1]));
    Ok(p)
}

/// [`init_params_with`] on a fresh stream for `seed`.
pub fn init_params<T: Scalar>(seed: u64, config: &DenoiserConfig) -> Result<ParamSet<T>> {
    init_params_with(&mut RngState::new(seed), config)
}

type TransformCache<T> = Mutex<HashMap<(usize, usize), Arc<ContourletTransform<T>>>>;

/// Network definition plus cached contourlet transforms per input size.
pub struct Denoiser<T: Scalar> {
    config: DenoiserConfig,
    transforms: TransformCache<T>,
}

impl<T: Scalar> Denoiser<T> {
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            transforms: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    /// Pairs this network with tape-bound parameters.
    pub fn bind<'a>(&'a self, params: BoundParams) -> BoundDenoiser<'a, T> {
        BoundDenoiser { net: self, params }
    }

    /// Inference view over fixed parameters.
    pub fn estimator<'a>(&'a self, params: &'a ParamSet<T>) -> Network<'a, T> {
        Network { net: self, params }
    }

    fn transform(&self, h: usize, w: usize) -> Result<Arc<ContourletTransform<T>>> {
        let mut cache = self.transforms.lock().expect("transform cache poisoned");
        if let Some(t) = cache.get(&(h, w)) {
            return Ok(Arc::clone(t));
        }
        let t = Arc::new(ContourletTransform::new(h, w, &self.config.directions)?);
        cache.insert((h, w), Arc::clone(&t));
        Ok(t)
    }

    /// Contourlet pyramids of every image in a `(B, 1, H, W)` batch.
    pub fn pyramids(&self, x: &Tensor<T>) -> Result<Vec<ContourletPyramid<T>>> {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let transform = self.transform(h, w)?;
        (0..x.shape()[0])
            .map(|b| transform.decompose(&x.select(b)?.reshape(&[h, w])?))
            .collect()
    }

    fn check_input(&self, shape: &[usize], t: &[usize]) -> Result<()> {
        let div = 1usize << (self.config.depth - 1).max(if self.config.cdem_enabled { self.config.depth } else { 0 });
        match shape {
            &[b, 1, h, w] if b == t.len() => {
                if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
                    return Err(Error::InvalidShape(format!(
                        "{h} x {w} input is not divisible by {div} for depth {}",
                        self.config.depth
                    )));
                }
                Ok(())
            }
            &[b, 1, _, _] => Err(Error::InvalidShape(format!(
                "batch of {b} images but {} timesteps",
                t.len()
            ))),
            s => Err(Error::InvalidShape(format!("expected (B, 1, H, W) input, got {s:?}"))),
        }
    }

    /// Predicts the noise residual of a `(B, 1, H, W)` batch at steps `t`.
    pub fn forward(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var, t: &[usize]) -> Result<Var> {
        let cfg = &self.config;
        self.check_input(tape.shape(x), t)?;
        let batch = t.len();
        let (h, w) = (tape.shape(x)[2], tape.shape(x)[3]);
        let td = cfg.time_dim;

        let mut emb = Vec::with_capacity(batch * td);
        for &step in t {
            emb.extend(time_embedding::<T>(step, td)?);
        }
        let emb = tape.constant(Tensor::new(vec![batch, td], emb)?);
        let temb = linear(tape, p, "time.fc1", emb)?;
        let temb = tape.silu(temb);
        let temb = linear(tape, p, "time.fc2", temb)?;
        let temb = tape.silu(temb);

        let cdem = if cfg.cdem_enabled {
            let pyramids = self.pyramids(tape.value(x))?;
            let targets: Vec<_> = (0..cfg.depth).map(|l| (cfg.channels(l), h >> l, w >> l)).collect();
            let convs = (0..cfg.depth)
                .map(|l| cdem_convs(p, l))
                .collect::<Result<Vec<_>>>()?;
            Some(cdem_embed(tape, &pyramids, &targets, &convs)?)
        } else {
            None
        };

        let mut skips = Vec::with_capacity(cfg.depth);
        let mut hcur = conv(tape, p, "stem", x)?;
        for l in 0..cfg.depth {
            if l > 0 {
                let pooled = tape.avg_pool2(hcur)?;
                hcur = conv(tape, p, &format!("enc{l}.down"), pooled)?;
            }
            if let Some(feats) = &cdem {
                hcur = tape.add(hcur, feats[l])?;
            }
            hcur = res_block(tape, p, &format!("enc{l}.res"), hcur, temb)?;
            skips.push(hcur);
        }
        hcur = res_block(tape, p, "mid.res", hcur, temb)?;
        for l in (0..cfg.depth - 1).rev() {
            let up = tape.upsample2(hcur)?;
            let cat = tape.concat(&[up, skips[l]])?;
            hcur = conv(tape, p, &format!("dec{l}.fuse"), cat)?;
            hcur = res_block(tape, p, &format!("dec{l}.res"), hcur, temb)?;
        }
        let out = norm(tape, p, "head.gn", hcur)?;
        let out = tape.silu(out);
        conv(tape, p, "head.conv", out)
    }
}

/// A [`Denoiser`] with parameters placed on a tape.
pub struct BoundDenoiser<'a, T: Scalar> {
    net: &'a Denoiser<T>,
    params: BoundParams,
}

impl<T: Scalar> BoundDenoiser<'_, T> {
    pub fn params(&self) -> &BoundParams {
        &self.params
    }
}

impl<T: Scalar> NoisePredictor<T> for BoundDenoiser<'_, T> {
    fn predict(&self, tape: &mut Tape<T>, x_t: Var, t: &[usize]) -> Result<Var> {
        self.net.forward(tape, &self.params, x_t, t)
    }
}

/// A [`Denoiser`] with fixed parameters, evaluated on a fresh tape per call.
pub struct Network<'a, T: Scalar> {
    net: &'a Denoiser<T>,
    params: &'a ParamSet<T>,
}

impl<T: Scalar> NoiseEstimator<T> for Network<'_, T> {
    fn estimate(&self, x_t: &Tensor<T>, t: &[usize]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(x_t.clone());
        let out = self.net.forward(&mut tape, &p, x, t)?;
        Ok(tape.value(out).clone())
    }
}

fn conv<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    let b = p.var(&format!("{name}.b"))?;
    tape.conv2d(x, w, Some(b))
}

fn linear<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    let b = p.var(&format!("{name}.b"))?;
    let y = tape.matmul(x, w)?;
    let n = tape.shape(b)[0];
    let b = tape.reshape(b, &[1, n])?;
    tape.add(y, b)
}

fn norm<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let g = p.var(&format!("{name}.g"))?;
    let b = p.var(&format!("{name}.b"))?;
    tape.group_norm(x, g, b, NORM_GROUPS)
}

fn res_block<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, name: &str, x: Var, temb: Var) -> Result<Var> {
    let h = norm(tape, p, &format!("{name}.gn1"), x)?;
    let h = tape.silu(h);
    let h = conv(tape, p, &format!("{name}.conv1"), h)?;
    let proj = linear(tape, p, &format!("{name}.temb"), temb)?;
    let (b, c) = (tape.shape(proj)[0], tape.shape(proj)[1]);
    let proj = tape.reshape(proj, &[b, c, 1, 1])?;
    let h = tape.add(h, proj)?;
    let h = norm(tape, p, &format!("{name}.gn2"), h)?;
    let h = tape.silu(h);
    let h = conv(tape, p, &format!("{name}.conv2"), h)?;
    tape.add(x, h)
}

fn cdem_convs(p: &BoundParams, l: usize) -> Result<CdemConvs> {
    let v = |s: &str| p.var(&format!("cdem{l}.{s}"));
    Ok(CdemConvs {
        w1: v("conv1.w")?,
        b1: v("conv1.b")?,
        w2: v("conv2.w")?,
        b2: v("conv2.b")?,
        w3: v("conv3.w")?,
        b3: v("conv3.b")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_values() {
        let e0 = time_embedding::<f64>(0, 8).unwrap();
        assert!(e0.chunks(2).all(|p| p[0] == 0.0 && p[1] == 1.0));
        let e1 = time_embedding::<f64>(1, 8).unwrap();
        assert!((e1[0] - 0.84147).abs() < 1e-5 && (e1[1] - 0.54030).abs() < 1e-5);
        assert!((e1[6] - 1e-4f64.sin()).abs() < 1e-15);
        let (a, b) = (time_embedding::<f64>(3, 64).unwrap(), time_embedding::<f64>(4, 64).unwrap());
        assert!(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() > 0.0);
        assert!(time_embedding::<f64>(1, 7).is_err());
    }

    #[test]
    fn default_size_is_desk_scale() {
        let p = init_params::<f32>(0, &DenoiserConfig::default()).unwrap();
        assert!((150_000..300_000).contains(&p.count()), "{}", p.count());
    }

    #[test]
    fn config_validation() {
        let bad = DenoiserConfig { directions: vec![3, 3], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DenoiserConfig { base_channels: 6, ..Default::default() };
        assert!(bad.validate().is_err());
        let ok = DenoiserConfig { directions: vec![], cdem_enabled: false, ..Default::default() };
        assert!(ok.validate().is_ok());
    }
}
