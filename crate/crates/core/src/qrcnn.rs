//! Quantile-region convolutional block: four parallel 1-D convolutions, quick
//! region pooling into a fixed-length vector, and the quantile regression head
//! `ŷ_τ = β₀^τ + Σ_j β_j^τ h_j(x)`.

use crate::error::{Error, Result};
use crate::ops::{ConvSpec, PoolMode};
use crate::param::{Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Valid 1-D convolution over `[C_in × L]` inputs.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub spec: ConvSpec,
}

impl Conv1d {
    /// Registers `{name}.weight: [C_out × C_in × k]` (Glorot) and
    /// `{name}.bias: [C_out]` (zeros).
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &Init,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        spec: ConvSpec,
    ) -> Result<Self> {
        if kernel == 0 || spec.stride == 0 || spec.dilation == 0 {
            return Err(Error::Config(format!(
                "{name}: kernel, stride and dilation must be positive"
            )));
        }
        let wname = format!("{name}.weight");
        let w = init.glorot(
            &wname,
            &[out_channels, in_channels, kernel],
            in_channels * kernel,
            out_channels * kernel,
        );
        let weight = store.add(wname, w)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]))?;
        Ok(Conv1d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            spec,
        })
    }

    pub fn output_len(&self, len: usize) -> Result<usize> {
        self.spec.output_len(len, self.kernel)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        tape.conv1d(x, bound[self.weight], bound[self.bias], self.spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QrcnnConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Exactly four branch widths.
    pub kernels: Vec<usize>,
    pub regions: usize,
    pub pool: PoolMode,
    pub stride: usize,
}

impl QrcnnConfig {
    pub const BRANCHES: usize = 4;

    pub fn new(in_channels: usize) -> Self {
        QrcnnConfig {
            in_channels,
            out_channels: 8,
            kernels: vec![2, 3, 4, 5],
            regions: 2,
            pool: PoolMode::Max,
            stride: 1,
        }
    }

    /// Feature length `J = 4 · C_out · R`.
    pub fn output_len(&self) -> usize {
        Self::BRANCHES * self.row_len()
    }

    /// Length of one branch row, `C_out · R`.
    pub fn row_len(&self) -> usize {
        self.out_channels * self.regions
    }

    pub fn max_kernel(&self) -> usize {
        self.kernels.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.len() != Self::BRANCHES {
            return Err(Error::Config(format!(
                "qrcnn needs exactly {} kernel widths, got {}",
                Self::BRANCHES,
                self.kernels.len()
            )));
        }
        if self.kernels.contains(&0) || self.regions == 0 || self.out_channels == 0 {
            return Err(Error::Config(
                "qrcnn kernel widths, region count and channels must be positive".into(),
            ));
        }
        if self.in_channels == 0 || self.stride == 0 {
            return Err(Error::Config("qrcnn input channels and stride must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct QrcnnBlock {
    pub config: QrcnnConfig,
    pub branches: Vec<Conv1d>,
}

impl QrcnnBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &Init,
        name: &str,
        config: QrcnnConfig,
    ) -> Result<Self> {
        config.validate()?;
        let spec = ConvSpec {
            stride: config.stride,
            ..ConvSpec::default()
        };
        let branches = config
            .kernels
            .iter()
            .enumerate()
            .map(|(b, &k)| {
                Conv1d::new(
                    store,
                    init,
                    &format!("{name}.branch{b}"),
                    config.in_channels,
                    config.out_channels,
                    k,
                    spec,
                )
            })
            .collect::<Result<_>>()?;
        Ok(QrcnnBlock { config, branches })
    }

    /// One pooled row per branch: `[4 × C_out·R]`.
    pub fn forward_rows<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let rows = self
            .branches
            .iter()
            .map(|branch| {
                let fmap = branch.forward(tape, bound, x)?;
                tape.region_pool(fmap, self.config.regions, self.config.pool)
            })
            .collect::<Result<Vec<_>>>()?;
        tape.stack_rows(&rows)
    }

    /// Branch features concatenated in branch order: `[J]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let rows = self.forward_rows(tape, bound, x)?;
        tape.reshape(rows, &[self.config.output_len()])
    }
}

/// Affine quantile head with non-crossing rectification.
#[derive(Clone, Debug)]
pub struct QuantileHead {
    pub weight: ParamId,
    pub intercept: ParamId,
    pub taus: Vec<f64>,
    pub input_len: usize,
}

/// Raw affine outputs and their non-decreasing rectification, both `[K]`.
#[derive(Clone, Copy, Debug)]
pub struct QuantileOutput {
    pub raw: Var,
    pub quantiles: Var,
}

pub fn validate_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::Config("at least one quantile level is required".into()));
    }
    if taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::Config(format!("quantile levels must lie in (0, 1): {taus:?}")));
    }
    if taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("quantile levels must be strictly ascending: {taus:?}")));
    }
    Ok(())
}

/// Index of the level closest to 0.5 (the first on a tie).
pub fn median_index(taus: &[f64]) -> usize {
    let mut best = 0;
    for (i, t) in taus.iter().enumerate() {
        if (t - 0.5).abs() < (taus[best] - 0.5).abs() {
            best = i;
        }
    }
    best
}

impl QuantileHead {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &Init,
        name: &str,
        input_len: usize,
        taus: Vec<f64>,
    ) -> Result<Self> {
        validate_taus(&taus)?;
        let k = taus.len();
        let wname = format!("{name}.weight");
        let weight = store.add(wname.clone(), init.glorot(&wname, &[k, input_len], input_len, k))?;
        let intercept = store.add(format!("{name}.intercept"), Tensor::zeros(&[k]))?;
        Ok(QuantileHead {
            weight,
            intercept,
            taus,
            input_len,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        h: Var,
    ) -> Result<QuantileOutput> {
        let len = tape.value(h).shape();
        if len != [self.input_len] {
            return Err(Error::shape("quantile_head", len, &[self.input_len]));
        }
        let affine = tape.matvec(bound[self.weight], h)?;
        let raw = tape.add(affine, bound[self.intercept])?;
        let quantiles = tape.cum_softplus(raw)?;
        Ok(QuantileOutput { raw, quantiles })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_length_contract() {
        let mut cfg = QrcnnConfig::new(3);
        cfg.out_channels = 6;
        cfg.regions = 2;
        assert_eq!(cfg.output_len(), 48);
    }

    #[test]
    fn branch_count_enforced() {
        let mut cfg = QrcnnConfig::new(1);
        cfg.kernels = vec![2, 3];
        let mut store = ParamStore::<f64>::new();
        assert!(QrcnnBlock::new(&mut store, &Init::new(0), "q", cfg).is_err());
    }

    #[test]
    fn taus_validation() {
        assert!(validate_taus(&[0.1, 0.5, 0.9]).is_ok());
        assert!(validate_taus(&[0.5, 0.1]).is_err());
        assert!(validate_taus(&[0.0, 0.5]).is_err());
        assert!(validate_taus(&[]).is_err());
        assert_eq!(median_index(&[0.1, 0.5, 0.9]), 1);
        assert_eq!(median_index(&[0.25, 0.75]), 0);
    }

    #[test]
    fn zero_weights_pass_intercepts_through() {
        let mut store = ParamStore::<f64>::new();
        let head = QuantileHead::new(&mut store, &Init::new(1), "head", 4, vec![0.1, 0.5, 0.9]).unwrap();
        *store.get_mut(head.weight) = Tensor::zeros(&[3, 4]);
        *store.get_mut(head.intercept) = Tensor::vector(vec![-1.0, 0.0, 1.0]);
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let h = tape.constant(Tensor::vector(vec![0.3, -2.0, 5.0, 1.0]));
        let out = head.forward(&mut tape, &bound, h).unwrap();
        assert_eq!(tape.value(out.raw).data(), &[-1.0, 0.0, 1.0]);
        let q = tape.value(out.quantiles).data();
        assert_eq!(q[0], -1.0);
        assert!(q.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn head_length_mismatch() {
        let mut store = ParamStore::<f64>::new();
        let head = QuantileHead::new(&mut store, &Init::new(1), "head", 4, vec![0.5]).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let h = tape.constant(Tensor::vector(vec![0.0; 5]));
        assert!(matches!(head.forward(&mut tape, &bound, h), Err(Error::Shape { .. })));
    }
}
