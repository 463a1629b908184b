//! Plain-text `key=value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use duskmot::ald::Fusion;
use duskmot::dsl::DslConfig;
use duskmot::metrics::{Aggregation, MetricsConfig};
use duskmot::noise::{NoiseKind, NoiseParams};
use duskmot::toynet::{Optimizer, PairedSetConfig, TrainConfig};
use duskmot::tracker::TrackerConfig;
use sha2::{Digest, Sha256};

use crate::exit::Usage;

const SECTIONS: [&str; 5] = ["noise", "tracker", "metrics", "train", "io"];

fn defaults() -> BTreeMap<String, String> {
    let n = NoiseParams::default();
    let t = TrackerConfig::default();
    let m = MetricsConfig::default();
    let tr = TrainConfig::default();
    let d = DslConfig::default();
    let ps = PairedSetConfig::default();
    let layers: Vec<String> = d.layers.iter().map(|l| l.to_string()).collect();
    let entries: Vec<(&str, String)> = vec![
        ("noise.kind", n.kind.to_string()),
        ("noise.K", n.gain.to_string()),
        ("noise.sigma_read", n.sigma_read.to_string()),
        ("noise.sigma_row", n.sigma_row.to_string()),
        ("noise.quant_step", n.quant_step.to_string()),
        ("noise.gp_a", n.gp_a.to_string()),
        ("noise.gp_b", n.gp_b.to_string()),
        ("noise.ratio", n.ratio.to_string()),
        ("tracker.tau_high", t.tau_high.to_string()),
        ("tracker.tau_low", t.tau_low.to_string()),
        ("tracker.iou_gate", t.iou_gate.to_string()),
        ("tracker.iou_gate_low", t.iou_gate_low.to_string()),
        ("tracker.max_age", t.max_age.to_string()),
        ("tracker.min_hits", t.min_hits.to_string()),
        ("tracker.appearance_weight", t.appearance_weight.to_string()),
        ("tracker.use_oru", t.use_oru.to_string()),
        ("tracker.ocm_weight", t.ocm_weight.to_string()),
        ("tracker.embedding_momentum", t.embedding_momentum.to_string()),
        ("tracker.max_gap", t.max_gap.to_string()),
        ("tracker.interpolate", "true".into()),
        ("metrics.aggregation", agg_name(m.aggregation).into()),
        ("metrics.iou_threshold", m.iou_threshold.to_string()),
        ("metrics.min_visibility", m.min_visibility.to_string()),
        ("train.steps", tr.steps.to_string()),
        ("train.lr", tr.lr.to_string()),
        ("train.batch", tr.batch.to_string()),
        ("train.channels", tr.channels.to_string()),
        ("train.fusion", fusion_name(tr.fusion).into()),
        ("train.optimizer", optimizer_name(tr.optimizer).into()),
        ("train.clip_norm", tr.clip_norm.to_string()),
        ("train.alpha", d.alpha.to_string()),
        ("train.beta", d.beta.to_string()),
        ("train.gamma", d.gamma.to_string()),
        ("train.layers", layers.join(",")),
        ("train.detach_well", d.detach_well.to_string()),
        ("train.pairs", ps.count.to_string()),
        ("train.heldout", (ps.count / 2).to_string()),
        ("train.size", ps.size.to_string()),
        ("io.wb_gains", "2.0,1.0,1.6".into()),
        ("io.gamma", "2.2".into()),
        ("io.exposure", "1".into()),
        ("io.timing", "true".into()),
    ];
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn agg_name(a: Aggregation) -> &'static str {
    match a {
        Aggregation::ClassAvg => "class_avg",
        Aggregation::DetAvg => "det_avg",
    }
}

fn fusion_name(f: Fusion) -> &'static str {
    match f {
        Fusion::Additive => "additive",
        Fusion::Convex => "convex",
    }
}

fn optimizer_name(o: Optimizer) -> &'static str {
    match o {
        Optimizer::Sgd => "sgd",
        Optimizer::Adam => "adam",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn new(seed: Option<u64>) -> Self {
        Self {
            values: defaults(),
            seed,
        }
    }

    /// Parse a config file; `[section]` headers prefix the keys that follow.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), Usage> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(s) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let s = s.trim();
                if !SECTIONS.contains(&s) {
                    return Err(Usage(format!("{origin}:{}: unknown section [{s}]", i + 1)));
                }
                section = format!("{s}.");
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Usage(format!("{origin}:{}: expected key=value", i + 1)))?;
            let key = format!("{section}{}", k.trim());
            self.set(&key, v.trim()).map_err(|Usage(m)| Usage(format!("{origin}:{}: {m}", i + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> anyhow::Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| duskmot::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.merge_text(&text, &path.display().to_string())?;
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Usage> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(Usage(format!("unknown config key {key:?}"))),
        }
    }

    /// `KEY=VALUE` override from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), Usage> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Usage(format!("override {pair:?} is not KEY=VALUE")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, Usage>
    where
        T::Err: std::fmt::Display,
    {
        let raw = &self.values[key];
        raw.parse()
            .map_err(|e| Usage(format!("config {key}={raw:?}: {e}")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, Usage>
    where
        T::Err: std::fmt::Display,
    {
        let raw = &self.values[key];
        raw.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(|e| Usage(format!("config {key}={raw:?}: {e}"))))
            .collect()
    }

    pub fn resolved(&self) -> String {
        let mut s = String::new();
        match self.seed {
            Some(seed) => _ = writeln!(s, "seed={seed}"),
            None => _ = writeln!(s, "seed=none"),
        }
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.resolved().as_bytes()))
    }

    pub fn noise(&self) -> Result<NoiseParams, Usage> {
        let p = NoiseParams {
            kind: self.get::<NoiseKind>("noise.kind")?,
            gain: self.get("noise.K")?,
            sigma_read: self.get("noise.sigma_read")?,
            sigma_row: self.get("noise.sigma_row")?,
            quant_step: self.get("noise.quant_step")?,
            gp_a: self.get("noise.gp_a")?,
            gp_b: self.get("noise.gp_b")?,
            ratio: self.get("noise.ratio")?,
        };
        p.validate().map_err(|e| Usage(e.to_string()))?;
        Ok(p)
    }

    pub fn tracker(&self, fps: f64) -> Result<TrackerConfig, Usage> {
        let t = TrackerConfig {
            tau_high: self.get("tracker.tau_high")?,
            tau_low: self.get("tracker.tau_low")?,
            iou_gate: self.get("tracker.iou_gate")?,
            iou_gate_low: self.get("tracker.iou_gate_low")?,
            max_age: self.get("tracker.max_age")?,
            min_hits: self.get("tracker.min_hits")?,
            appearance_weight: self.get("tracker.appearance_weight")?,
            use_oru: self.get("tracker.use_oru")?,
            ocm_weight: self.get("tracker.ocm_weight")?,
            embedding_momentum: self.get("tracker.embedding_momentum")?,
            max_gap: self.get("tracker.max_gap")?,
            fps,
            ..Default::default()
        };
        t.validate().map_err(|e| Usage(e.to_string()))?;
        Ok(t)
    }

    pub fn metrics(&self, aggregation: Aggregation) -> Result<MetricsConfig, Usage> {
        Ok(MetricsConfig {
            aggregation,
            iou_threshold: self.get("metrics.iou_threshold")?,
            min_visibility: self.get("metrics.min_visibility")?,
        })
    }

    pub fn aggregation(&self) -> Result<Aggregation, Usage> {
        self.get("metrics.aggregation")
    }

    pub fn train(&self, seed: u64) -> Result<TrainConfig, Usage> {
        let fusion = match self.values["train.fusion"].as_str() {
            "additive" => Fusion::Additive,
            "convex" => Fusion::Convex,
            other => return Err(Usage(format!("config train.fusion={other:?}: expected additive or convex"))),
        };
        let cfg = TrainConfig {
            steps: self.get("train.steps")?,
            lr: self.get("train.lr")?,
            batch: self.get("train.batch")?,
            seed,
            channels: self.get("train.channels")?,
            fusion,
            optimizer: self.get("train.optimizer")?,
            clip_norm: self.get("train.clip_norm")?,
            dsl: DslConfig {
                alpha: self.get("train.alpha")?,
                beta: self.get("train.beta")?,
                gamma: self.get("train.gamma")?,
                layers: self.list("train.layers")?,
                detach_well: self.get("train.detach_well")?,
            },
        };
        cfg.dsl.validate().map_err(|e| Usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn paired_set(&self) -> Result<(PairedSetConfig, usize), Usage> {
        let count: usize = self.get("train.pairs")?;
        let heldout: usize = self.get("train.heldout")?;
        if heldout == 0 || heldout >= count {
            return Err(Usage(format!(
                "train.heldout={heldout} must lie in 1..train.pairs ({count})"
            )));
        }
        let cfg = PairedSetConfig {
            size: self.get("train.size")?,
            count,
            noise: self.noise()?,
            ..Default::default()
        };
        Ok((cfg, heldout))
    }

    pub fn wb_gains(&self) -> Result<[f64; 3], Usage> {
        let v: Vec<f64> = self.list("io.wb_gains")?;
        v.try_into()
            .map_err(|_| Usage("config io.wb_gains needs three comma-separated values".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_every_section() {
        let c = RunConfig::new(Some(1));
        assert_eq!(c.noise().unwrap(), NoiseParams::default());
        assert_eq!(c.tracker(20.0).unwrap(), TrackerConfig::default());
        assert_eq!(c.metrics(Aggregation::DetAvg).unwrap(), MetricsConfig::default());
        assert_eq!(c.train(0).unwrap(), TrainConfig::default());
        assert_eq!(c.paired_set().unwrap(), (PairedSetConfig::default(), 128));
        assert_eq!(c.wb_gains().unwrap(), [2.0, 1.0, 1.6]);
    }

    #[test]
    fn file_sections_and_overrides() {
        let mut c = RunConfig::new(None);
        c.merge_text("# comment\ntracker.min_hits=2\n[noise]\nratio = 0.5\n\n[tracker]\nmax_age=7 # inline\n", "cfg")
            .unwrap();
        assert_eq!(c.noise().unwrap().ratio, 0.5);
        let t = c.tracker(20.0).unwrap();
        assert_eq!((t.max_age, t.min_hits), (7, 2));
        c.set_pair("noise.ratio=0.25").unwrap();
        assert_eq!(c.noise().unwrap().ratio, 0.25);
        // section keys are not re-qualified
        assert!(c.merge_text("[noise]\ntracker.max_age=3\n", "cfg").is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let mut c = RunConfig::new(None);
        assert!(c.set_pair("noise.bogus=1").is_err());
        assert!(c.merge_text("[nope]\n", "x").is_err());
        assert!(c.merge_text("ratio=1\n", "x").unwrap_err().0.contains("x:1"));
        c.set_pair("noise.ratio=2").unwrap();
        assert!(c.noise().is_err());
        c.set_pair("train.fusion=mult").unwrap();
        assert!(c.train(0).is_err());
    }

    #[test]
    fn hash_tracks_every_value() {
        let a = RunConfig::new(Some(3));
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.set_pair("io.gamma=2.4").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig::new(Some(4)).hash());
        assert_eq!(a.hash().len(), 64);
    }
}
