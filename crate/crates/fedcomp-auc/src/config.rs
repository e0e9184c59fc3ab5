//! Experiment configuration (flat TOML) and the end-to-end experiment
//! driver: dataset preparation, one federated run per `(algorithm, seed)`
//! pair, and CSV trace/summary output.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    gen_gaussian_mixture, imbalance_subsample, load_csv, train_test_split, LabeledDataset,
};
use crate::error::Error;
use crate::fedsim::{run_federation, Algo, FederationConfig, Sampling};
use crate::metrics::{trace_row, MetricsRecord, TRACE_HEADER};
use crate::model::Classifier;
use crate::optim::HyperParams;
use crate::Result;

/// One experiment, fully described by flat key/value pairs so a TOML file
/// and CLI flags can address every knob uniformly. Unknown keys are
/// rejected, so typos fail loudly instead of silently running defaults.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Algorithms to run: any of `localscgdam`, `localsgdm`, `localsgdam`,
    /// `coda`.
    pub algos: Vec<String>,
    pub devices: usize,
    /// Iterations between averaging rounds.
    pub period: usize,
    pub iterations: usize,
    pub eval_every: usize,
    /// Base seed; repeat `r` runs with seed `seed + r`.
    pub seed: u64,
    pub repeats: usize,

    // Step-size and tracker coefficients of the compositional method.
    pub eta: f64,
    pub gamma_x: f64,
    pub gamma_y: f64,
    pub alpha: f64,
    pub beta_x: f64,
    pub beta_y: f64,
    pub rho: f64,
    pub batch_size: usize,

    // Baseline coefficients.
    pub baseline_lr: f64,
    pub baseline_momentum: f64,

    /// Dual clamp interval as `[lo, hi]`; empty disables clamping.
    pub dual_clamp: Vec<f64>,
    pub independent_batches: bool,
    pub average_momentum: bool,
    /// `with-replacement` or `epoch`.
    pub sampling: String,
    pub decay: bool,

    /// `gaussian` (synthetic mixture) or `csv`.
    pub dataset: String,
    pub csv_path: String,
    pub csv_header: bool,
    /// Mixture size before splitting.
    pub n: usize,
    pub d_feat: usize,
    pub separation: f64,
    /// Positive fraction the training set is subsampled to after the split;
    /// zero or negative keeps the natural class balance.
    pub imbalance_ratio: f64,
    pub test_fraction: f64,
    pub data_seed: u64,

    /// `logistic` or `mlp`.
    pub model: String,
    pub mlp_width: usize,

    pub out_dir: String,
    /// Worker threads for device steps; 0 uses the library default.
    pub threads: usize,
    /// Record wall-clock times (off keeps traces byte-identical).
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        Self {
            algos: vec!["localscgdam".into()],
            devices: 4,
            period: hp.period,
            iterations: 2000,
            eval_every: 100,
            seed: 17,
            repeats: 1,
            eta: hp.eta,
            gamma_x: hp.gamma_x,
            gamma_y: hp.gamma_y,
            alpha: hp.alpha,
            beta_x: hp.beta_x,
            beta_y: hp.beta_y,
            rho: hp.rho,
            batch_size: hp.batch_size,
            baseline_lr: 0.1,
            baseline_momentum: 0.1,
            dual_clamp: Vec::new(),
            independent_batches: false,
            average_momentum: true,
            sampling: "with-replacement".into(),
            decay: true,
            dataset: "gaussian".into(),
            csv_path: String::new(),
            csv_header: false,
            n: 2000,
            d_feat: 20,
            separation: 2.0,
            imbalance_ratio: 0.1,
            test_fraction: 0.5,
            data_seed: 93,
            model: "logistic".into(),
            mlp_width: 16,
            out_dir: "runs".into(),
            threads: 0,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    /// Parse a TOML file.
    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn hyper_params(&self) -> Result<HyperParams> {
        let dual_clamp = match self.dual_clamp.as_slice() {
            [] => None,
            &[lo, hi] if lo < hi => Some((lo, hi)),
            other => {
                return Err(Error::Config(format!(
                    "dual_clamp must be empty or [lo, hi] with lo < hi, got {other:?}"
                )))
            }
        };
        let hp = HyperParams {
            eta: self.eta,
            gamma_x: self.gamma_x,
            gamma_y: self.gamma_y,
            alpha: self.alpha,
            beta_x: self.beta_x,
            beta_y: self.beta_y,
            rho: self.rho,
            period: self.period,
            batch_size: self.batch_size,
            dual_clamp,
        };
        hp.validate()?;
        Ok(hp)
    }

    fn sampling(&self) -> Result<Sampling> {
        match self.sampling.to_ascii_lowercase().as_str() {
            "with-replacement" | "replacement" => Ok(Sampling::WithReplacement),
            "epoch" => Ok(Sampling::Epoch),
            other => Err(Error::Config(format!(
                "unknown sampling mode {other:?} (expected with-replacement or epoch)"
            ))),
        }
    }

    fn threads(&self) -> Option<usize> {
        (self.threads > 0).then_some(self.threads)
    }

    pub fn algorithms(&self) -> Result<Vec<Algo>> {
        if self.algos.is_empty() {
            return Err(Error::Config("algos must name at least one algorithm".into()));
        }
        let algos: Vec<Algo> = self
            .algos
            .iter()
            .map(|s| Algo::parse(s))
            .collect::<Result<_>>()?;
        for (i, a) in algos.iter().enumerate() {
            if algos[..i].contains(a) {
                return Err(Error::Config(format!(
                    "algorithm {} listed twice",
                    a.name()
                )));
            }
        }
        Ok(algos)
    }

    pub fn federation_config(&self, algo: Algo, master_seed: u64) -> Result<FederationConfig> {
        let cfg = FederationConfig {
            devices: self.devices,
            algo,
            total_iterations: self.iterations,
            eval_every: self.eval_every,
            master_seed,
            hp: self.hyper_params()?,
            baseline_lr: self.baseline_lr,
            baseline_momentum: self.baseline_momentum,
            independent_batches: self.independent_batches,
            average_momentum: self.average_momentum,
            sampling: self.sampling()?,
            decay: self.decay,
            threads: self.threads(),
            timing: self.timing,
            ..FederationConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn build_model(&self, feature_dim: usize) -> Result<Classifier> {
        match self.model.to_ascii_lowercase().as_str() {
            "logistic" => Ok(Classifier::logistic(feature_dim)),
            "mlp" => {
                if self.mlp_width == 0 {
                    return Err(Error::Config("mlp_width must be at least 1".into()));
                }
                Ok(Classifier::mlp(feature_dim, self.mlp_width))
            }
            other => Err(Error::Config(format!(
                "unknown model {other:?} (expected logistic or mlp)"
            ))),
        }
    }

    /// Prepare `(train, test)`: generate or load the pool, split it
    /// stratified, then subsample the training positives to the target
    /// imbalance. The test set keeps its natural balance so AUC estimates
    /// stay tight.
    pub fn build_dataset(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let pool = match self.dataset.to_ascii_lowercase().as_str() {
            "gaussian" => gen_gaussian_mixture(self.n, self.d_feat, self.separation, self.data_seed)?,
            "csv" => {
                if self.csv_path.is_empty() {
                    return Err(Error::Config("csv dataset needs csv_path".into()));
                }
                load_csv(Path::new(&self.csv_path), self.csv_header)?
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown dataset {other:?} (expected gaussian or csv)"
                )))
            }
        };
        let (train, test) = train_test_split(&pool, self.test_fraction, self.data_seed)?;
        let train = if self.imbalance_ratio > 0.0 {
            imbalance_subsample(&train, self.imbalance_ratio, self.data_seed)?
        } else {
            train
        };
        Ok((train, test))
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper_params()?;
        self.sampling()?;
        self.algorithms()?;
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.out_dir.is_empty() {
            return Err(Error::Config("out_dir must not be empty".into()));
        }
        Ok(())
    }
}

/// Aggregate over the repeats of one algorithm.
#[derive(Clone, Debug)]
pub struct AlgoSummary {
    pub algo: Algo,
    pub seeds: usize,
    /// Mean/stddev of the final test AUC of the averaged model.
    pub final_auc_mean: f64,
    pub final_auc_std: f64,
}

/// Everything `run_experiment` wrote and computed.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub trace_files: Vec<PathBuf>,
    pub summaries: Vec<AlgoSummary>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn write_trace(path: &Path, records: &[MetricsRecord], seed: u64) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    let ctx = || path.display().to_string();
    writeln!(out, "{TRACE_HEADER}").map_err(|e| Error::io(ctx(), e))?;
    for rec in records {
        writeln!(out, "{}", trace_row(rec, seed)).map_err(|e| Error::io(ctx(), e))?;
    }
    out.flush().map_err(|e| Error::io(ctx(), e))
}

/// Run every `(algorithm, seed)` pair of the experiment, writing one trace
/// CSV per run, the resolved configuration, and a cross-seed summary into
/// `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let (train, test) = cfg.build_dataset()?;
    let model = cfg.build_model(train.feature_dim())?;
    let algos = cfg.algorithms()?;

    let out_dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let resolved = toml::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("serializing resolved config: {e}")))?;
    let resolved_path = out_dir.join("config_resolved.toml");
    fs::write(&resolved_path, resolved).map_err(|e| Error::io(resolved_path.display().to_string(), e))?;

    let mut trace_files = Vec::new();
    let mut summaries = Vec::new();
    for algo in algos {
        let mut finals = Vec::with_capacity(cfg.repeats);
        for r in 0..cfg.repeats {
            let seed = cfg.seed + r as u64;
            let fed = cfg.federation_config(algo, seed)?;
            let records = run_federation(&model, &train, &test, &fed)?;
            let last = records
                .last()
                .ok_or_else(|| Error::Config("run produced no records".into()))?;
            finals.push(last.test_auc_avg_model.unwrap_or(f64::NAN));
            let path = out_dir.join(format!("{}_seed{seed}.csv", algo.name()));
            write_trace(&path, &records, seed)?;
            trace_files.push(path);
        }
        let (mean, std) = mean_std(&finals);
        summaries.push(AlgoSummary {
            algo,
            seeds: cfg.repeats,
            final_auc_mean: mean,
            final_auc_std: std,
        });
    }

    let summary_path = out_dir.join("summary.csv");
    {
        let file = fs::File::create(&summary_path)
            .map_err(|e| Error::io(summary_path.display().to_string(), e))?;
        let mut out = BufWriter::new(file);
        let ctx = || summary_path.display().to_string();
        writeln!(out, "algo,seeds,final_test_auc_mean,final_test_auc_std")
            .map_err(|e| Error::io(ctx(), e))?;
        for s in &summaries {
            writeln!(
                out,
                "{},{},{},{}",
                s.algo.name(),
                s.seeds,
                crate::metrics::fmt_f64(s.final_auc_mean),
                crate::metrics::fmt_f64(s.final_auc_std)
            )
            .map_err(|e| Error::io(ctx(), e))?;
        }
        out.flush().map_err(|e| Error::io(ctx(), e))?;
    }

    Ok(RunSummary {
        out_dir,
        trace_files,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_fields() {
        let cfg = ExperimentConfig {
            algos: vec!["localscgdam".into(), "coda".into()],
            dual_clamp: vec![-2.0, 2.0],
            threads: 3,
            ..ExperimentConfig::default()
        };
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.algos, cfg.algos);
        assert_eq!(back.dual_clamp, cfg.dual_clamp);
        assert_eq!(back.threads, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ExperimentConfig>("etaa = 0.5").unwrap_err();
        assert!(err.to_string().contains("etaa"), "{err}");
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: ExperimentConfig = toml::from_str("eta = 0.2\ndevices = 8").unwrap();
        assert_eq!(cfg.devices, 8);
        assert_eq!(cfg.eta, 0.2);
        assert_eq!(cfg.period, HyperParams::default().period);
    }

    #[test]
    fn bad_dual_clamp_is_rejected() {
        let mut cfg = ExperimentConfig {
            dual_clamp: vec![1.0],
            ..ExperimentConfig::default()
        };
        assert!(cfg.hyper_params().is_err());
        cfg.dual_clamp = vec![2.0, 1.0];
        assert!(cfg.hyper_params().is_err());
        cfg.dual_clamp = vec![-1.0, 1.0];
        assert!(cfg.hyper_params().is_ok());
    }

    #[test]
    fn duplicate_algos_are_rejected() {
        let cfg = ExperimentConfig {
            algos: vec!["scgdam".into(), "localscgdam".into()],
            ..ExperimentConfig::default()
        };
        assert!(cfg.algorithms().is_err());
    }

    #[test]
    fn dataset_pipeline_applies_imbalance_to_train_only() {
        let cfg = ExperimentConfig {
            n: 400,
            d_feat: 4,
            imbalance_ratio: 0.1,
            ..ExperimentConfig::default()
        };
        let (train, test) = cfg.build_dataset().unwrap();
        assert!(train.positive_fraction() <= 0.1);
        assert!((test.positive_fraction() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn experiment_writes_traces_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            algos: vec!["scgdam".into(), "sgdm".into()],
            n: 160,
            d_feat: 4,
            devices: 2,
            iterations: 6,
            eval_every: 3,
            batch_size: 8,
            repeats: 2,
            imbalance_ratio: 0.25,
            threads: 1,
            out_dir: dir.path().join("exp").display().to_string(),
            ..ExperimentConfig::default()
        };
        let summary = run_experiment(&cfg).unwrap();
        assert_eq!(summary.trace_files.len(), 4);
        for f in &summary.trace_files {
            let text = fs::read_to_string(f).unwrap();
            let mut lines = text.lines();
            assert_eq!(lines.next().unwrap(), TRACE_HEADER);
            assert!(lines.count() >= 2);
        }
        assert!(summary.out_dir.join("summary.csv").exists());
        assert!(summary.out_dir.join("config_resolved.toml").exists());
        assert_eq!(summary.summaries.len(), 2);
        for s in &summary.summaries {
            assert!(s.final_auc_mean.is_finite());
            assert!((0.0..=1.0).contains(&s.final_auc_mean));
        }
    }
}
