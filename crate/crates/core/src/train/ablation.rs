use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;

use super::{Session, TrainConfig};
use crate::blocks::Domain;
use crate::data::{evaluate, Dataset, Method};
use crate::error::Result;
use crate::model::ModelConfig;

/// Which domains carry the global-initialization and local-detail modules.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Placement {
    pub glim: BTreeSet<Domain>,
    pub plde: BTreeSet<Domain>,
}

fn label(set: &BTreeSet<Domain>) -> &'static str {
    match (set.contains(&Domain::Image), set.contains(&Domain::Kspace)) {
        (false, false) => "none",
        (true, false) => "image",
        (false, true) => "kspace",
        (true, true) => "both",
    }
}

fn parse_set(s: &str) -> Option<BTreeSet<Domain>> {
    Some(match s {
        "none" => BTreeSet::new(),
        "image" => [Domain::Image].into(),
        "kspace" => [Domain::Kspace].into(),
        "both" => [Domain::Image, Domain::Kspace].into(),
        _ => return None,
    })
}

impl Placement {
    pub fn new(glim: &[Domain], plde: &[Domain]) -> Self {
        Self {
            glim: glim.iter().copied().collect(),
            plde: plde.iter().copied().collect(),
        }
    }

    pub fn baseline() -> Self {
        Self::new(&[], &[])
    }

    /// Global module on k-space, local module on the image.
    pub fn full() -> Self {
        Self::new(&[Domain::Kspace], &[Domain::Image])
    }

    /// Baseline, each module alone in each domain choice, and the full
    /// placement.
    pub fn preset() -> Vec<Self> {
        use Domain::{Image, Kspace};
        vec![
            Self::baseline(),
            Self::new(&[Image], &[]),
            Self::new(&[Kspace], &[]),
            Self::new(&[Image, Kspace], &[]),
            Self::new(&[], &[Image]),
            Self::new(&[], &[Kspace]),
            Self::new(&[], &[Image, Kspace]),
            Self::full(),
        ]
    }

    /// `glim=<set>,plde=<set>` with sets `none|image|kspace|both`, or the
    /// shorthands `baseline` and `full`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" => return Some(Self::baseline()),
            "full" => return Some(Self::full()),
            _ => {}
        }
        let mut glim = None;
        let mut plde = None;
        for part in s.split(',') {
            let (k, v) = part.split_once('=')?;
            match k.trim() {
                "glim" => glim = Some(parse_set(v.trim())?),
                "plde" => plde = Some(parse_set(v.trim())?),
                _ => return None,
            }
        }
        Some(Self {
            glim: glim.unwrap_or_default(),
            plde: plde.unwrap_or_default(),
        })
    }

    pub fn name(&self) -> String {
        format!("glim={},plde={}", label(&self.glim), label(&self.plde))
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            glim_domains: self.glim.clone(),
            plde_domains: self.plde.clone(),
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub placement: Placement,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub params: usize,
    /// Why the row has no metrics.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationMatrix {
    pub rows: Vec<AblationRow>,
}

impl AblationMatrix {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("glim,plde,params,psnr,ssim,mse,status\n");
        for r in &self.rows {
            let status = r.error.as_deref().map_or("ok".to_string(), |e| {
                format!("\"error: {}\"", e.replace('"', "'"))
            });
            s.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{status}\n",
                label(&r.placement.glim),
                label(&r.placement.plde),
                r.params,
                r.psnr,
                r.ssim,
                r.mse
            ));
        }
        s
    }

    pub fn row(&self, p: &Placement) -> Option<&AblationRow> {
        self.rows.iter().find(|r| &r.placement == p)
    }
}

fn run_row(
    placement: &Placement,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    (train, val, test): (&Dataset, &Dataset, &Dataset),
    out: Option<&Path>,
) -> AblationRow {
    let cfg = placement.apply(base);
    let result = (|| -> Result<(usize, crate::data::MetricsReport)> {
        let height = train.targets.first().map_or(0, |t| t.plane().0);
        let mut session = Session::new(cfg.clone(), train_cfg.clone(), height)?;
        let dir = out.map(|d| d.join(placement.name().replace([',', '='], "_")));
        session.run(train, val, dir.as_deref(), |_| {})?;
        let mask = session.mask().clone();
        let model = session.into_best_model();
        let refs = test.references.as_deref();
        let report = evaluate(
            Method::Model(&model),
            &test.targets,
            refs,
            &mask,
            train_cfg.batch_size,
        )?;
        Ok((model.param_count(), report))
    })();
    match result {
        Ok((params, r)) => AblationRow {
            placement: placement.clone(),
            psnr: r.psnr.mean,
            ssim: r.ssim.mean,
            mse: r.mse.mean,
            params,
            error: None,
        },
        Err(e) => AblationRow {
            placement: placement.clone(),
            psnr: f64::NAN,
            ssim: f64::NAN,
            mse: f64::NAN,
            params: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Trains and tests every placement with the same seed and schedule. A
/// failing row records its error and the others still run. With
/// `parallel`, rows run on separate threads; results do not depend on it.
pub fn run_ablation(
    placements: &[Placement],
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    data: (&Dataset, &Dataset, &Dataset),
    out: Option<&Path>,
    parallel: bool,
) -> AblationMatrix {
    let rows = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = placements
                .iter()
                .map(|p| s.spawn(move || run_row(p, base, train_cfg, data, out)))
                .collect();
            handles
                .into_iter()
                .zip(placements)
                .map(|(h, p)| {
                    h.join().unwrap_or_else(|_| AblationRow {
                        placement: p.clone(),
                        psnr: f64::NAN,
                        ssim: f64::NAN,
                        mse: f64::NAN,
                        params: 0,
                        error: Some("row thread panicked".into()),
                    })
                })
                .collect()
        })
    } else {
        placements
            .iter()
            .map(|p| run_row(p, base, train_cfg, data, out))
            .collect()
    };
    AblationMatrix { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_rows_are_distinct_and_named() {
        let rows = Placement::preset();
        assert_eq!(rows.len(), 8);
        for (i, a) in rows.iter().enumerate() {
            assert_eq!(Placement::parse(&a.name()).as_ref(), Some(a));
            for b in &rows[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(Placement::parse("full"), Some(Placement::full()));
        assert!(Placement::parse("glim=sideways").is_none());
    }
}
