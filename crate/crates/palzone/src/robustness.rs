//! Transfer-function perturbation model and seeded Monte-Carlo sweeps.
//!
//! Each tensor entry H is replaced by
//! (|H| + U_amp) exp(i(angle(H) + U_phase)) where U_amp is Gaussian with
//! standard deviation rms(|H|) * 10^(-SNR/20) (rms over the whole
//! tensor), U_phase is R * N(0,1) with R in degrees, and perturbed
//! amplitudes clamp at zero. The noise stream is a ChaCha counter stream
//! keyed by (seed, trial index, tensor kind) with a fixed entry
//! traversal, so trials are independent and reproducible in any order.

use crate::field::{ArrayKind, TensorData, TransferTensor};
use crate::linalg::C64;
use crate::model::{EvaluateOn, Model};
use crate::optimizer::{acc_edl, acc_pal_multi, acoustic_contrast, mix_seed, standard_normal};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RobustnessError {
    #[error("tensor contains non-finite entries")]
    NonFiniteTensor,
}

/// Amplitude/phase perturbation parameters of one Monte-Carlo cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationSpec {
    /// Amplitude SNR in dB; +inf disables amplitude noise.
    pub snr_db: f64,
    /// Phase range R in degrees (scale of the Gaussian phase noise).
    pub phase_range_deg: f64,
    pub seed: u64,
    pub n_trials: usize,
}

/// Apply one perturbation realization. `trial_index` selects an
/// independent noise stream; the clean tensor is never mutated.
pub fn perturb_tensor(
    tensor: &TransferTensor,
    spec: &PerturbationSpec,
    trial_index: usize,
) -> Result<TransferTensor, RobustnessError> {
    if !tensor.all_finite() {
        return Err(RobustnessError::NonFiniteTensor);
    }
    let sigma = if spec.snr_db.is_infinite() && spec.snr_db > 0.0 {
        0.0
    } else {
        tensor.rms_magnitude() * 10f64.powf(-spec.snr_db / 20.0)
    };
    let phase_scale = spec.phase_range_deg.to_radians();
    if sigma == 0.0 && phase_scale == 0.0 {
        return Ok(tensor.clone());
    }
    let kind_bit = match tensor.kind() {
        ArrayKind::Pal => 0u64,
        ArrayKind::Edl => 1u64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream((trial_index as u64) << 1 | kind_bit);
    let mut noise = |h: C64| -> C64 {
        let amp_noise = sigma * standard_normal(&mut rng);
        let phase_noise = phase_scale * standard_normal(&mut rng);
        let amp = (h.norm() + amp_noise).max(0.0);
        C64::from_polar(amp, h.arg() + phase_noise)
    };
    let mut out = tensor.clone();
    match &mut out.data {
        TensorData::Pal(ms) => {
            for m in ms.iter_mut() {
                for v in m.data_mut() {
                    *v = noise(*v);
                }
            }
        }
        TensorData::Edl(vs) => {
            for v in vs.iter_mut() {
                for z in v.iter_mut() {
                    *z = noise(*z);
                }
            }
        }
    }
    Ok(out)
}

/// Per-cell Monte-Carlo statistics for one array kind.
#[derive(Clone, Debug)]
pub struct RobustnessSummary {
    pub spec: PerturbationSpec,
    /// Per-trial contrast (dB) in trial order; failed trials carry the
    /// error message instead of aborting the sweep.
    pub trials: Vec<Result<f64, String>>,
    pub mean_db: f64,
    pub std_db: f64,
    pub min_db: f64,
    pub max_db: f64,
}

impl RobustnessSummary {
    fn from_trials(spec: PerturbationSpec, trials: Vec<Result<f64, String>>) -> Self {
        let ok: Vec<f64> = trials.iter().filter_map(|t| t.as_ref().ok().copied()).collect();
        let n = ok.len() as f64;
        let mean = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / n };
        let std = if ok.len() < 2 {
            0.0
        } else {
            (ok.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let min = ok.iter().copied().fold(f64::INFINITY, f64::min);
        let max = ok.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        RobustnessSummary { spec, trials, mean_db: mean, std_db: std, min_db: min, max_db: max }
    }

    pub fn contrasts(&self) -> Vec<f64> {
        self.trials.iter().filter_map(|t| t.as_ref().ok().copied()).collect()
    }
}

/// One (frequency, SNR, phase-range) sweep cell with both array kinds.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub frequency_hz: f64,
    pub snr_db: f64,
    pub phase_range_deg: f64,
    pub pal: RobustnessSummary,
    pub edl: RobustnessSummary,
}

/// Run the Monte-Carlo sweep over the given (SNR, phase-range) cells for
/// one frequency's clean tensor pair. Every trial perturbs both tensors,
/// reruns the full optimization on the perturbed tensors, and evaluates
/// contrast on the perturbed (default) or clean tensor. Trials run
/// concurrently; output order is canonical (by trial index).
pub fn run_robustness_sweep(
    model: &Model,
    frequency_hz: f64,
    pal_clean: &TransferTensor,
    edl_clean: &TransferTensor,
    cells: &[(f64, f64)],
) -> Vec<SweepCell> {
    let n_trials = model.perturbation.n_trials;
    let evaluate_on = model.perturbation.evaluate_on;
    let opt = &model.optimizer;
    cells
        .iter()
        .map(|&(snr_db, phase_range_deg)| {
            let spec = PerturbationSpec {
                snr_db,
                phase_range_deg,
                seed: model.perturbation.seed,
                n_trials,
            };
            let run_trial = |trial: usize| -> (Result<f64, String>, Result<f64, String>) {
                let acc_seed = mix_seed(opt.seed, trial as u64);
                let pal = perturb_tensor(pal_clean, &spec, trial)
                    .map_err(|e| e.to_string())
                    .and_then(|perturbed| {
                        acc_pal_multi(
                            &perturbed,
                            opt.n_iterations,
                            acc_seed,
                            opt.ridge_scale,
                            opt.n_starts,
                        )
                        .map_err(|e| e.to_string())
                        .and_then(|res| match evaluate_on {
                            EvaluateOn::Perturbed => Ok(res.contrast_db),
                            EvaluateOn::Clean => acoustic_contrast(pal_clean, &res.drives)
                                .map_err(|e| e.to_string()),
                        })
                    });
                let edl = perturb_tensor(edl_clean, &spec, trial)
                    .map_err(|e| e.to_string())
                    .and_then(|perturbed| {
                        acc_edl(&perturbed, opt.ridge_scale)
                            .map_err(|e| e.to_string())
                            .and_then(|res| match evaluate_on {
                                EvaluateOn::Perturbed => Ok(res.contrast_db),
                                EvaluateOn::Clean => acoustic_contrast(edl_clean, &res.drives)
                                    .map_err(|e| e.to_string()),
                            })
                    });
                (pal, edl)
            };
            let outcomes: Vec<_> = (0..n_trials).into_par_iter().map(run_trial).collect();
            let (pal_trials, edl_trials): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
            SweepCell {
                frequency_hz,
                snr_db,
                phase_range_deg,
                pal: RobustnessSummary::from_trials(spec, pal_trials),
                edl: RobustnessSummary::from_trials(spec, edl_trials),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CMat;
    use crate::model::Point2;
    use rand_chacha::rand_core::RngCore;

    fn edl_tensor(n_points: usize, n_elem: usize, seed: u64) -> TransferTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let vs: Vec<Vec<C64>> = (0..n_points)
            .map(|_| {
                (0..n_elem)
                    .map(|_| C64::from_polar(0.5 + uniform(), std::f64::consts::TAU * uniform()))
                    .collect()
            })
            .collect();
        TransferTensor {
            points: (0..n_points).map(|i| Point2::new(i as f64, 0.5)).collect(),
            bright_count: n_points / 2,
            f_audio: 1000.0,
            data: TensorData::Edl(vs),
        }
    }

    #[test]
    fn infinite_snr_and_zero_range_is_identity() {
        let t = edl_tensor(10, 4, 1);
        let spec = PerturbationSpec {
            snr_db: f64::INFINITY,
            phase_range_deg: 0.0,
            seed: 3,
            n_trials: 1,
        };
        let p = perturb_tensor(&t, &spec, 0).unwrap();
        assert_eq!(t, p);
    }

    #[test]
    fn zero_phase_range_preserves_phases_exactly() {
        let t = edl_tensor(10, 4, 2);
        let spec =
            PerturbationSpec { snr_db: 20.0, phase_range_deg: 0.0, seed: 3, n_trials: 1 };
        let p = perturb_tensor(&t, &spec, 0).unwrap();
        let (tv, pv) = match (&t.data, &p.data) {
            (TensorData::Edl(a), TensorData::Edl(b)) => (a, b),
            _ => unreachable!(),
        };
        let mut any_amp_changed = false;
        for (a, b) in tv.iter().flatten().zip(pv.iter().flatten()) {
            assert!((a.arg() - b.arg()).abs() < 1e-12, "phase changed");
            any_amp_changed |= (a.norm() - b.norm()).abs() > 1e-12;
        }
        assert!(any_amp_changed);
    }

    #[test]
    fn noise_moments_match_configuration() {
        // 1000-entry tensor: sample std of amplitude noise within 10 % of
        // sigma, sample std of phase noise within 10 % of R.
        let t = edl_tensor(125, 8, 3);
        let snr_db = 20.0;
        let r_deg = 15.0;
        let spec = PerturbationSpec { snr_db, phase_range_deg: r_deg, seed: 17, n_trials: 1 };
        let p = perturb_tensor(&t, &spec, 0).unwrap();
        let sigma = t.rms_magnitude() * 10f64.powf(-snr_db / 20.0);
        let (tv, pv) = match (&t.data, &p.data) {
            (TensorData::Edl(a), TensorData::Edl(b)) => (a, b),
            _ => unreachable!(),
        };
        let amp_noise: Vec<f64> = tv
            .iter()
            .flatten()
            .zip(pv.iter().flatten())
            .map(|(a, b)| b.norm() - a.norm())
            .collect();
        let phase_noise: Vec<f64> = tv
            .iter()
            .flatten()
            .zip(pv.iter().flatten())
            .map(|(a, b)| {
                let mut d = b.arg() - a.arg();
                while d > std::f64::consts::PI {
                    d -= std::f64::consts::TAU;
                }
                while d < -std::f64::consts::PI {
                    d += std::f64::consts::TAU;
                }
                d
            })
            .collect();
        let std = |xs: &[f64]| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        assert_eq!(amp_noise.len(), 1000);
        let amp_std = std(&amp_noise);
        let phase_std = std(&phase_noise);
        assert!(
            (amp_std - sigma).abs() < 0.1 * sigma,
            "amplitude std {amp_std} vs sigma {sigma}"
        );
        let r_rad = r_deg.to_radians();
        assert!(
            (phase_std - r_rad).abs() < 0.1 * r_rad,
            "phase std {phase_std} vs R {r_rad}"
        );
    }

    #[test]
    fn amplitudes_never_negative_and_trials_reproducible() {
        let t = edl_tensor(20, 5, 4);
        let spec =
            PerturbationSpec { snr_db: -10.0, phase_range_deg: 45.0, seed: 5, n_trials: 3 };
        for trial in 0..3 {
            let a = perturb_tensor(&t, &spec, trial).unwrap();
            let b = perturb_tensor(&t, &spec, trial).unwrap();
            assert_eq!(a, b, "trial {trial} not reproducible");
            assert!(a.entries().all(|z| z.norm() >= 0.0 && z.re.is_finite()));
        }
        // different trials differ
        let a = perturb_tensor(&t, &spec, 0).unwrap();
        let b = perturb_tensor(&t, &spec, 1).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn trial_order_is_immaterial() {
        let t = edl_tensor(12, 3, 6);
        let spec =
            PerturbationSpec { snr_db: 25.0, phase_range_deg: 10.0, seed: 9, n_trials: 4 };
        let forward: Vec<TransferTensor> =
            (0..4).map(|i| perturb_tensor(&t, &spec, i).unwrap()).collect();
        let backward: Vec<TransferTensor> =
            (0..4).rev().map(|i| perturb_tensor(&t, &spec, i).unwrap()).collect();
        for (i, f) in forward.iter().enumerate() {
            assert_eq!(*f, backward[3 - i]);
        }
    }

    #[test]
    fn pal_and_edl_streams_are_distinct() {
        // A PAL tensor and an EDL tensor with the same entry count must not
        // receive the same noise sequence.
        let n = 3usize;
        let mut m = CMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = C64::new(1.0, 0.5);
            }
        }
        let pal = TransferTensor {
            points: vec![Point2::new(0.0, 0.5)],
            bright_count: 1,
            f_audio: 1000.0,
            data: TensorData::Pal(vec![m]),
        };
        let edl = TransferTensor {
            points: (0..3).map(|i| Point2::new(i as f64, 0.5)).collect(),
            bright_count: 1,
            f_audio: 1000.0,
            data: TensorData::Edl(vec![vec![C64::new(1.0, 0.5); 3]; 3]),
        };
        let spec =
            PerturbationSpec { snr_db: 20.0, phase_range_deg: 10.0, seed: 11, n_trials: 1 };
        let p_pal = perturb_tensor(&pal, &spec, 0).unwrap();
        let p_edl = perturb_tensor(&edl, &spec, 0).unwrap();
        let first_pal = p_pal.entries().next().unwrap();
        let first_edl = p_edl.entries().next().unwrap();
        assert_ne!(first_pal, first_edl);
    }
}
