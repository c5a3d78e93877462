use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::DbnTrainCfg;
use crate::error::{config_err, numeric_err, usage_err};
use crate::numerics::{conv2d_full, conv2d_kernel_grad, conv2d_valid, sigmoid, RandomStream, Tensor};
use crate::{Error, Result};

fn geometry(keys: &str, detail: impl ToString) -> Error {
    Error::Geometry {
        keys: keys.into(),
        detail: detail.to_string(),
    }
}

/// Geometry of one convolutional RBM layer. Construction enforces
/// `MQ = MR - MN + 1` and `Q | MQ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrbmSpec {
    visible_extent: usize,
    visible_channels: usize,
    groups: usize,
    filter_extent: usize,
    pool_window: usize,
}

impl CrbmSpec {
    pub fn new(
        visible_extent: usize,
        visible_channels: usize,
        groups: usize,
        filter_extent: usize,
        pool_window: usize,
    ) -> Result<Self> {
        for (key, v) in [
            ("visible_extent", visible_extent),
            ("visible_channels", visible_channels),
            ("groups", groups),
            ("filter_extent", filter_extent),
            ("pool_window", pool_window),
        ] {
            if v == 0 {
                return Err(geometry(key, "must be positive"));
            }
        }
        if filter_extent > visible_extent {
            return Err(geometry(
                "filter_extent, visible_extent",
                format!("filter extent MN={filter_extent} exceeds visible extent MR={visible_extent}"),
            ));
        }
        let hidden = visible_extent - filter_extent + 1;
        if !hidden.is_multiple_of(pool_window) {
            return Err(geometry(
                "pool_window, visible_extent, filter_extent",
                format!("pool window Q={pool_window} does not divide hidden extent MQ={hidden} (MR - MN + 1)"),
            ));
        }
        Ok(Self {
            visible_extent,
            visible_channels,
            groups,
            filter_extent,
            pool_window,
        })
    }

    /// Also checks explicitly declared derived extents against the relations.
    pub fn with_declared(self, hidden_extent: Option<usize>, pool_extent: Option<usize>) -> Result<Self> {
        if let Some(mq) = hidden_extent {
            if mq != self.hidden_extent() {
                return Err(geometry(
                    "hidden_extent, visible_extent, filter_extent",
                    format!(
                        "MQ={mq} violates MQ = MR - MN + 1 = {} - {} + 1 = {}",
                        self.visible_extent,
                        self.filter_extent,
                        self.hidden_extent()
                    ),
                ));
            }
        }
        if let Some(np) = pool_extent {
            if np != self.pool_extent() {
                return Err(geometry(
                    "pool_extent, pool_window",
                    format!("NP={np} but MQ / Q = {}", self.pool_extent()),
                ));
            }
        }
        Ok(self)
    }

    pub fn visible_extent(&self) -> usize {
        self.visible_extent
    }
    pub fn visible_channels(&self) -> usize {
        self.visible_channels
    }
    pub fn groups(&self) -> usize {
        self.groups
    }
    pub fn filter_extent(&self) -> usize {
        self.filter_extent
    }
    pub fn pool_window(&self) -> usize {
        self.pool_window
    }
    /// Shrink factor between hidden and pooled maps; equal to the pool window.
    pub fn shrink_factor(&self) -> usize {
        self.pool_window
    }
    /// `MQ = MR - MN + 1`
    pub fn hidden_extent(&self) -> usize {
        self.visible_extent - self.filter_extent + 1
    }
    /// `NP = MQ / Q`
    pub fn pool_extent(&self) -> usize {
        self.hidden_extent() / self.pool_window
    }
    pub fn visible_shape(&self) -> [usize; 3] {
        [self.visible_channels, self.visible_extent, self.visible_extent]
    }
    pub fn hidden_shape(&self) -> [usize; 3] {
        [self.groups, self.hidden_extent(), self.hidden_extent()]
    }
    pub fn pooled_shape(&self) -> [usize; 3] {
        [self.groups, self.pool_extent(), self.pool_extent()]
    }
}

/// Shared filters and biases of one CRBM.
#[derive(Debug, Clone, PartialEq)]
pub struct CrbmParams {
    /// `[N, C_v, MN, MN]`, used in both directions.
    pub filters: Tensor<f32>,
    pub hidden_bias: Vec<f32>,
    pub visible_bias: Vec<f32>,
}

impl CrbmParams {
    pub fn zeros(spec: &CrbmSpec) -> Self {
        let mn = spec.filter_extent;
        Self {
            filters: Tensor::zeros(&[spec.groups, spec.visible_channels, mn, mn]),
            hidden_bias: vec![0.0; spec.groups],
            visible_bias: vec![0.0; spec.visible_channels],
        }
    }

    /// Small Gaussian filters (std 0.01), zero biases.
    pub fn init(spec: &CrbmSpec, stream: &mut RandomStream) -> Self {
        let mut p = Self::zeros(spec);
        p.filters.data_mut().iter_mut().for_each(|w| *w = (0.01 * stream.normal()) as f32);
        p
    }

    pub fn check(&self, spec: &CrbmSpec) -> Result<()> {
        let want = Self::zeros(spec);
        if self.filters.shape() != want.filters.shape()
            || self.hidden_bias.len() != spec.groups
            || self.visible_bias.len() != spec.visible_channels
        {
            return Err(config_err!("CRBM parameters do not match geometry {spec:?}"));
        }
        self.filters.ensure_finite("CRBM filters")?;
        if self.hidden_bias.iter().chain(&self.visible_bias).any(|v| !v.is_finite()) {
            return Err(numeric_err!("CRBM bias not finite"));
        }
        Ok(())
    }
}

fn expect_shape(t: &Tensor<f32>, shape: [usize; 3], what: &str) -> Result<()> {
    if t.shape() != shape {
        return Err(config_err!("{what} shape {:?}, layer expects {:?}", t.shape(), shape));
    }
    Ok(())
}

/// `P(h = 1 | v) = sigmoid(conv_valid(v, W_g) + b_g)`.
pub fn hidden_prob(v: &Tensor<f32>, params: &CrbmParams, spec: &CrbmSpec) -> Result<Tensor<f32>> {
    expect_shape(v, spec.visible_shape(), "visible")?;
    sigmoid(&conv2d_valid(v, &params.filters, &params.hidden_bias)?)
}

/// `P(v = 1 | h) = sigmoid(sum_g conv_full(h_g, W_g) + c)`.
pub fn visible_prob(h: &Tensor<f32>, params: &CrbmParams, spec: &CrbmSpec) -> Result<Tensor<f32>> {
    expect_shape(h, spec.hidden_shape(), "hidden")?;
    let mut pre = conv2d_full(h, &params.filters)?;
    let area = spec.visible_extent * spec.visible_extent;
    for (c, &b) in params.visible_bias.iter().enumerate() {
        pre.data_mut()[c * area..(c + 1) * area].iter_mut().for_each(|x| *x += b);
    }
    sigmoid(&pre)
}

/// Independent Bernoulli draws with the given probabilities.
pub fn sample_bernoulli(p: &Tensor<f32>, stream: &mut RandomStream) -> Result<Tensor<f32>> {
    if let Some(i) = p.data().iter().position(|x| !(0.0..=1.0).contains(x)) {
        return Err(numeric_err!("probability {} at {i} outside [0, 1]", p.data()[i]));
    }
    Ok(p.map(|q| if stream.next_f64() < q as f64 { 1.0 } else { 0.0 }))
}

/// Maximum over disjoint `q x q` blocks of each group map.
pub fn max_pool(h: &Tensor<f32>, q: usize) -> Result<Tensor<f32>> {
    let (n, mh, mw) = match *h.shape() {
        [a, b, c] => (a, b, c),
        _ => return Err(config_err!("max_pool needs [N, MQ, MQ], got {:?}", h.shape())),
    };
    if q == 0 || mh % q != 0 || mw % q != 0 {
        return Err(Error::Geometry {
            keys: "pool_window".into(),
            detail: format!("pool window {q} does not divide {mh}x{mw}"),
        });
    }
    let (ph, pw) = (mh / q, mw / q);
    let src = h.data();
    let mut out = Vec::with_capacity(n * ph * pw);
    for g in 0..n {
        for by in 0..ph {
            for bx in 0..pw {
                let mut m = f32::NEG_INFINITY;
                for y in by * q..(by + 1) * q {
                    for x in bx * q..(bx + 1) * q {
                        m = m.max(src[(g * mh + y) * mw + x]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::from_vec(&[n, ph, pw], out)
}

/// Summed sufficient statistics of one phase over a mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStats {
    /// `<v h>` per filter tap averaged over hidden positions,
    /// `[N, C_v, MN, MN]` flattened.
    pub filters: Vec<f64>,
    pub hidden: Vec<f64>,
    pub visible: Vec<f64>,
}

impl PhaseStats {
    fn zeros(spec: &CrbmSpec) -> Self {
        let mn = spec.filter_extent;
        Self {
            filters: vec![0.0; spec.groups * spec.visible_channels * mn * mn],
            hidden: vec![0.0; spec.groups],
            visible: vec![0.0; spec.visible_channels],
        }
    }
}

/// Adds the statistics of one `(visible, hidden probability)` pair to `acc`.
/// Correlations and hidden sums are divided by the hidden area, visible sums
/// by the visible area.
pub fn phase_stats(acc: &mut PhaseStats, v: &Tensor<f32>, ph: &Tensor<f32>, spec: &CrbmSpec) -> Result<()> {
    let (vw, hw) = (v.cast::<f64>(), ph.cast::<f64>());
    let (corr, hsum) = conv2d_kernel_grad(&vw, &hw, spec.filter_extent, 1)?;
    let hidden_area = (spec.hidden_extent() * spec.hidden_extent()) as f64;
    let visible_area = (spec.visible_extent * spec.visible_extent) as f64;
    for (a, &b) in acc.filters.iter_mut().zip(corr.data()) {
        *a += b / hidden_area;
    }
    for (a, b) in acc.hidden.iter_mut().zip(hsum) {
        *a += b / hidden_area;
    }
    for (c, a) in acc.visible.iter_mut().enumerate() {
        *a += vw.outer(c).iter().sum::<f64>() / visible_area;
    }
    Ok(())
}

/// `theta += lr * (pos - neg) / batch`, minus `lr * decay * W` on the filters.
pub fn apply_update(params: &mut CrbmParams, pos: &PhaseStats, neg: &PhaseStats, cfg: &DbnTrainCfg, batch: usize) -> Result<()> {
    if batch == 0 {
        return Err(usage_err!("update with an empty batch"));
    }
    let lr = cfg.learning_rate;
    let b = batch as f64;
    for ((w, p), n) in params.filters.data_mut().iter_mut().zip(&pos.filters).zip(&neg.filters) {
        let wf = *w as f64;
        *w = (wf + (lr * ((p - n) / b) - lr * cfg.weight_decay * wf)) as f32;
    }
    for (bias, (p, n)) in [
        (&mut params.hidden_bias, (&pos.hidden, &neg.hidden)),
        (&mut params.visible_bias, (&pos.visible, &neg.visible)),
    ] {
        for ((x, p), n) in bias.iter_mut().zip(p).zip(n) {
            *x = (*x as f64 + lr * ((p - n) / b)) as f32;
        }
    }
    params.check_finite()
}

impl CrbmParams {
    fn check_finite(&self) -> Result<()> {
        self.filters.ensure_finite("CRBM filters")?;
        if self.hidden_bias.iter().chain(&self.visible_bias).any(|v| !v.is_finite()) {
            return Err(numeric_err!("CRBM bias diverged"));
        }
        Ok(())
    }
}

/// One CD-k update on a mini-batch; returns the mean squared error between
/// the batch and its one-step reconstruction.
pub fn cd_step(
    batch: &[Tensor<f32>],
    params: &mut CrbmParams,
    spec: &CrbmSpec,
    cfg: &DbnTrainCfg,
    stream: &mut RandomStream,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(usage_err!("cd_step needs a non-empty batch"));
    }
    let k = cfg.cd_steps.max(1);
    let mut pos = PhaseStats::zeros(spec);
    let mut neg = PhaseStats::zeros(spec);
    let mut err = 0.0;
    for v0 in batch {
        let ph0 = hidden_prob(v0, params, spec)?;
        phase_stats(&mut pos, v0, &ph0, spec)?;
        let mut h = sample_bernoulli(&ph0, stream)?;
        let mut vk = v0.clone();
        let mut phk = ph0.clone();
        for step in 0..k {
            vk = visible_prob(&h, params, spec)?;
            if step == 0 {
                let sq: f64 = v0.data().iter().zip(vk.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
                err += sq / v0.len() as f64;
            }
            phk = hidden_prob(&vk, params, spec)?;
            if step + 1 < k {
                h = sample_bernoulli(&phk, stream)?;
            }
        }
        phase_stats(&mut neg, &vk, &phk, spec)?;
    }
    apply_update(params, &pos, &neg, cfg, batch.len())?;
    Ok(err / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec12() -> CrbmSpec {
        CrbmSpec::new(12, 1, 4, 5, 2).unwrap()
    }

    #[test]
    fn geometry_relations() {
        let s = spec12();
        assert_eq!(s.hidden_extent(), 8);
        assert_eq!(s.pool_extent(), 4);
        let s = CrbmSpec::new(32, 3, 8, 5, 2).unwrap();
        assert_eq!((s.hidden_extent(), s.pool_extent()), (28, 14));
        assert!(CrbmSpec::new(12, 1, 4, 6, 2).is_err());
        assert!(CrbmSpec::new(4, 1, 4, 5, 1).is_err());
        assert!(s.with_declared(Some(27), None).is_err());
        assert!(s.with_declared(Some(28), Some(14)).is_ok());
    }

    #[test]
    fn zero_params_half_probabilities() {
        let s = spec12();
        let p = CrbmParams::zeros(&s);
        let v = Tensor::full(&[1, 12, 12], 0.7f32);
        let h = hidden_prob(&v, &p, &s).unwrap();
        assert_eq!(h.shape(), &[4, 8, 8]);
        assert!(h.data().iter().all(|&x| x == 0.5));
        let r = visible_prob(&h, &p, &s).unwrap();
        assert!(r.data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn hidden_prob_matches_scalar_loop() {
        let s = CrbmSpec::new(7, 2, 3, 3, 1).unwrap();
        let mut r = RandomStream::new(60);
        let mut p = CrbmParams::init(&s, &mut r);
        p.filters.data_mut().iter_mut().for_each(|w| *w *= 50.0);
        p.hidden_bias = vec![0.1, -0.2, 0.05];
        let v = Tensor::from_fn(&[2, 7, 7], |_| r.next_f64() as f32);
        let h = hidden_prob(&v, &p, &s).unwrap();
        for g in 0..3 {
            for y in 0..5 {
                for x in 0..5 {
                    let mut z = p.hidden_bias[g] as f64;
                    for c in 0..2 {
                        for a in 0..3 {
                            for b in 0..3 {
                                z += v.data()[v.idx3(c, y + a, x + b)] as f64
                                    * p.filters.data()[((g * 2 + c) * 3 + a) * 3 + b] as f64;
                            }
                        }
                    }
                    let want = 1.0 / (1.0 + (-z).exp());
                    assert!((h.data()[h.idx3(g, y, x)] as f64 - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn one_by_one_filter_visible_closed_form() {
        let s = CrbmSpec::new(4, 1, 1, 1, 1).unwrap();
        let mut p = CrbmParams::zeros(&s);
        p.filters.data_mut()[0] = 0.8;
        p.visible_bias[0] = -0.3;
        let v = visible_prob(&Tensor::full(&[1, 4, 4], 1.0), &p, &s).unwrap();
        let want = 1.0 / (1.0 + (-(0.8f64 - 0.3)).exp());
        assert!(v.data().iter().all(|&x| (x as f64 - want).abs() < 1e-7));
    }

    #[test]
    fn visible_linear_part_is_adjoint_of_hidden() {
        let s = CrbmSpec::new(8, 2, 3, 3, 2).unwrap();
        let mut r = RandomStream::new(61);
        let p = CrbmParams::init(&s, &mut r);
        let v = Tensor::from_fn(&[2, 8, 8], |_| r.next_f64() as f32);
        let h = Tensor::from_fn(&[3, 6, 6], |_| r.next_f64() as f32);
        let zero = [0.0f32; 3];
        let lhs = conv2d_valid(&v, &p.filters, &zero).unwrap().dot(&h).unwrap();
        let rhs = v.dot(&conv2d_full(&h, &p.filters).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-5 * lhs.abs().max(1e-3));
    }

    #[test]
    fn bernoulli_edges_and_mean() {
        let mut r = RandomStream::new(62);
        let zeros = sample_bernoulli(&Tensor::zeros(&[10]), &mut r).unwrap();
        assert!(zeros.data().iter().all(|&x| x == 0.0));
        let ones = sample_bernoulli(&Tensor::full(&[10], 1.0), &mut r).unwrap();
        assert!(ones.data().iter().all(|&x| x == 1.0));
        let half = Tensor::full(&[100_000], 0.5f32);
        let draw = sample_bernoulli(&half, &mut RandomStream::new(63)).unwrap();
        assert!((draw.sum() / 1e5 - 0.5).abs() < 0.01);
        assert_eq!(draw, sample_bernoulli(&half, &mut RandomStream::new(63)).unwrap());
        assert!(sample_bernoulli(&Tensor::full(&[2], 1.5f32), &mut r).is_err());
    }

    #[test]
    fn max_pool_blocks() {
        let h = Tensor::from_vec(
            &[1, 4, 4],
            vec![1.0, 2.0, 5.0, 0.0, 3.0, 4.0, 1.0, 1.0, 0.0, 0.0, 9.0, 8.0, 0.0, 0.0, 7.0, 6.0],
        )
        .unwrap();
        assert_eq!(max_pool(&h, 2).unwrap().data(), &[4.0, 5.0, 0.0, 9.0]);
        assert!(max_pool(&h, 3).is_err());
        let c = max_pool(&Tensor::full(&[2, 8, 8], 0.3f32), 2).unwrap();
        assert_eq!(c.shape(), &[2, 4, 4]);
        assert!(c.data().iter().all(|&x| x == 0.3));
    }

    #[test]
    fn zero_rate_keeps_params_exactly() {
        let s = spec12();
        let mut r = RandomStream::new(64);
        let mut p = CrbmParams::init(&s, &mut r);
        let before = p.clone();
        let batch: Vec<Tensor<f32>> = (0..3).map(|_| Tensor::from_fn(&[1, 12, 12], |_| r.next_f64() as f32)).collect();
        let cfg = DbnTrainCfg { learning_rate: 0.0, weight_decay: 0.01, ..DbnTrainCfg::default() };
        cd_step(&batch, &mut p, &s, &cfg, &mut r).unwrap();
        assert_eq!(p, before);
        assert!(cd_step(&[], &mut p, &s, &cfg, &mut r).is_err());
    }

    #[test]
    fn cancelled_statistics_leave_pure_decay() {
        let s = spec12();
        let mut r = RandomStream::new(65);
        let mut p = CrbmParams::init(&s, &mut r);
        let before = p.clone();
        let v = Tensor::from_fn(&[1, 12, 12], |_| r.next_f64() as f32);
        let ph = hidden_prob(&v, &p, &s).unwrap();
        let mut stats = PhaseStats::zeros(&s);
        phase_stats(&mut stats, &v, &ph, &s).unwrap();
        let cfg = DbnTrainCfg { learning_rate: 0.1, weight_decay: 0.01, ..DbnTrainCfg::default() };
        apply_update(&mut p, &stats, &stats, &cfg, 1).unwrap();
        for (a, &b) in p.filters.data().iter().zip(before.filters.data()) {
            let w = b as f64;
            assert_eq!(*a, (w - 0.1 * 0.01 * w) as f32);
        }
        assert_eq!(p.hidden_bias, before.hidden_bias);
        assert_eq!(p.visible_bias, before.visible_bias);
    }
}
