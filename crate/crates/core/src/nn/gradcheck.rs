//! Central finite-difference verification of `backward`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    backward, forward, init_random, ConvSpec, DenseSpec, ForwardCache, NetworkParams, NetworkSpec, NnError, N_ACTIONS,
    N_SCALARS,
};

pub const STEP: f64 = 1e-5;
pub const SAMPLES_PER_LAYER: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub layers: Vec<LayerCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_err).fold(0.0, f64::max)
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

fn relu_pattern(params: &NetworkParams<f64>, cache: &ForwardCache<f64>) -> Vec<bool> {
    params
        .layout()
        .layers
        .iter()
        .zip(cache.pre_activations())
        .filter(|(g, _)| g.relu)
        .flat_map(|(_, pre)| pre.iter().map(|&v| v > 0.0))
        .collect()
}

/// Check on a freshly randomized network of the given shape, with objective `q[3]`.
pub fn gradcheck<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R, tolerance: f64) -> Result<GradcheckReport, NnError> {
    let params: NetworkParams<f64> = init_random(spec, rng)?;
    let spectrum: Vec<f64> = (0..spec.n_bins).map(|_| rng.sample(StandardNormal)).collect();
    let scalars: Vec<f64> = (0..spec.n_scalars).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut dq = [0.0; N_ACTIONS];
    dq[3] = 1.0;
    let (_, cache) = forward(&params, &spectrum, &scalars)?;
    let analytic = backward(&params, &cache, &dq)?;
    check_gradients(&params, &spectrum, &scalars, &dq, &analytic, tolerance, rng)
}

/// Compare `analytic` against central differences of `qᵀ·dq` on randomly
/// chosen parameters of every layer. Parameters whose perturbation flips any
/// ReLU are passed over, since the difference quotient straddles a kink there.
pub fn check_gradients<R: Rng + ?Sized>(
    params: &NetworkParams<f64>,
    spectrum: &[f64],
    scalars: &[f64],
    dq: &[f64],
    analytic: &NetworkParams<f64>,
    tolerance: f64,
    rng: &mut R,
) -> Result<GradcheckReport, NnError> {
    if analytic.len() != params.len() {
        return Err(NnError::Size { what: "analytic gradient", expected: params.len(), got: analytic.len() });
    }
    let objective = |p: &NetworkParams<f64>| -> Result<(f64, Vec<bool>), NnError> {
        let (q, cache) = forward(p, spectrum, scalars)?;
        let f = q.iter().zip(dq).map(|(a, b)| a * b).sum();
        Ok((f, relu_pattern(p, &cache)))
    };
    let (_, base_pattern) = objective(params)?;
    let mut probe = params.clone();
    let mut layers = Vec::new();
    for (li, geom) in params.layout().layers.iter().enumerate() {
        let mut idx: Vec<usize> = (geom.w_offset..geom.b_offset + geom.b_len).collect();
        idx.shuffle(rng);
        let want = SAMPLES_PER_LAYER.min(idx.len());
        let mut checked = 0;
        let mut max_err: f64 = 0.0;
        for &i in &idx {
            if checked == want {
                break;
            }
            let orig = probe.values[i];
            probe.values[i] = orig + STEP;
            let (f_plus, pat_plus) = objective(&probe)?;
            probe.values[i] = orig - STEP;
            let (f_minus, pat_minus) = objective(&probe)?;
            probe.values[i] = orig;
            if pat_plus != base_pattern || pat_minus != base_pattern {
                continue;
            }
            let numeric = (f_plus - f_minus) / (2.0 * STEP);
            max_err = max_err.max(relative_error(analytic.values[i], numeric));
            checked += 1;
        }
        layers.push(LayerCheck { name: geom.name(li), checked, max_rel_err: max_err });
    }
    let passed = layers.iter().all(|l| l.max_rel_err < tolerance && l.checked > 0);
    Ok(GradcheckReport { layers, tolerance, passed })
}

/// Dense-only network: scalar path and head, no convolutions.
pub fn dense_toy() -> NetworkSpec {
    NetworkSpec {
        spectrum_path: vec![],
        scalar_path: vec![DenseSpec { out_units: 10, relu: true }],
        head: vec![DenseSpec { out_units: 6, relu: true }, DenseSpec { out_units: N_ACTIONS, relu: false }],
        n_bins: 8,
        n_scalars: N_SCALARS,
    }
}

/// One width-3, stride-1 convolution over 8 bins.
pub fn conv_small() -> NetworkSpec {
    NetworkSpec {
        spectrum_path: vec![ConvSpec { out_channels: 8, width: 3, stride: 1, relu: true }],
        scalar_path: vec![],
        head: vec![DenseSpec { out_units: N_ACTIONS, relu: false }],
        n_bins: 8,
        n_scalars: N_SCALARS,
    }
}

/// One width-8, stride-2 convolution over 32 bins.
pub fn conv_strided() -> NetworkSpec {
    NetworkSpec {
        spectrum_path: vec![ConvSpec { out_channels: 4, width: 8, stride: 2, relu: true }],
        scalar_path: vec![DenseSpec { out_units: 10, relu: true }],
        head: vec![DenseSpec { out_units: N_ACTIONS, relu: false }],
        n_bins: 32,
        n_scalars: N_SCALARS,
    }
}

/// The shapes `specseek gradcheck` runs: each layer type plus the default network.
pub fn standard_cases() -> Vec<(&'static str, NetworkSpec)> {
    vec![
        ("dense", dense_toy()),
        ("conv-w3-s1", conv_small()),
        ("conv-w8-s2", conv_strided()),
        ("default", NetworkSpec::default()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_toy_passes() {
        let r = gradcheck(&dense_toy(), &mut ChaCha8Rng::seed_from_u64(1), 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
        let counts: Vec<usize> = r.layers.iter().map(|l| l.checked).collect();
        assert_eq!(counts, vec![20, 20, 20]);
    }

    #[test]
    fn small_conv_passes() {
        let r = gradcheck(&conv_small(), &mut ChaCha8Rng::seed_from_u64(2), 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn strided_conv_passes() {
        let r = gradcheck(&conv_strided(), &mut ChaCha8Rng::seed_from_u64(6), 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.layers.iter().all(|l| l.checked == SAMPLES_PER_LAYER));
    }

    #[test]
    fn default_network_passes() {
        let r = gradcheck(&NetworkSpec::default(), &mut ChaCha8Rng::seed_from_u64(3), 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.layers.len(), 5);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = dense_toy();
        let params: NetworkParams<f64> = init_random(&spec, &mut rng).unwrap();
        let s: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
        let sc = [0.3, 0.6];
        let mut dq = [0.0; 7];
        dq[3] = 1.0;
        let (_, cache) = forward(&params, &s, &sc).unwrap();
        let mut g = backward(&params, &cache, &dq).unwrap();
        let ok = check_gradients(&params, &s, &sc, &dq, &g, 1e-6, &mut rng).unwrap();
        assert!(ok.passed);
        g.values.iter_mut().for_each(|v| *v *= 1.1);
        let bad = check_gradients(&params, &s, &sc, &dq, &g, 1e-6, &mut rng).unwrap();
        assert!(!bad.passed);
        assert!(bad.max_rel_err() > 0.05);
    }

    #[test]
    fn zero_tolerance_never_passes() {
        let r = gradcheck(&dense_toy(), &mut ChaCha8Rng::seed_from_u64(5), 0.0).unwrap();
        assert!(!r.passed);
    }
}
