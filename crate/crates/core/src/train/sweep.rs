use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{train, History, Sample, TrainConfig, TrainError};
use crate::arch::ArchId;
use crate::augment::AugmentationType;

/// Dropout setting of a sweep cell; architectures without dropout layers
/// report `NA`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dropout {
    NotApplicable,
    Rate(f64),
}

impl Dropout {
    pub fn rate(self) -> f64 {
        match self {
            Dropout::NotApplicable => 0.0,
            Dropout::Rate(r) => r,
        }
    }
}

impl fmt::Display for Dropout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dropout::NotApplicable => f.write_str("NA"),
            Dropout::Rate(r) => write!(f, "{r}"),
        }
    }
}

impl FromStr for Dropout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "NA" {
            return Ok(Dropout::NotApplicable);
        }
        s.parse::<f64>().map(Dropout::Rate).map_err(|_| format!("bad dropout value {s:?}"))
    }
}

impl Serialize for Dropout {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Dropout::NotApplicable => s.serialize_str("NA"),
            Dropout::Rate(r) => s.serialize_f64(*r),
        }
    }
}

impl<'de> Deserialize<'de> for Dropout {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Dropout;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a dropout rate or \"NA\"")
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Dropout, E> {
                v.parse().map_err(E::custom)
            }

            fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<Dropout, E> {
                Ok(Dropout::Rate(v))
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Dropout, E> {
                Ok(Dropout::Rate(v as f64))
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Dropout, E> {
                Ok(Dropout::Rate(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub arch: ArchId,
    pub aug_type: AugmentationType,
    pub dropout: Dropout,
}

/// Cartesian product of the axes. Architectures without dropout get a single
/// `NA` cell per augmentation type, so the dropout axis may be empty when
/// only such architectures are swept.
pub fn sweep_cells(archs: &[ArchId], aug_types: &[AugmentationType], dropouts: &[f64]) -> Result<Vec<SweepCell>, TrainError> {
    if archs.is_empty() {
        return Err(TrainError::EmptyAxis("archs"));
    }
    if aug_types.is_empty() {
        return Err(TrainError::EmptyAxis("aug_types"));
    }
    if dropouts.is_empty() && archs.iter().any(|a| a.has_dropout()) {
        return Err(TrainError::EmptyAxis("dropouts"));
    }
    if let Some(d) = dropouts.iter().find(|d| !(0.0..1.0).contains(*d)) {
        return Err(TrainError::Config(format!("dropout {d} outside [0, 1)")));
    }
    let mut cells = Vec::new();
    for &arch in archs {
        for &aug_type in aug_types {
            if arch.has_dropout() {
                cells.extend(dropouts.iter().map(|&d| SweepCell { arch, aug_type, dropout: Dropout::Rate(d) }));
            } else {
                cells.push(SweepCell { arch, aug_type, dropout: Dropout::NotApplicable });
            }
        }
    }
    Ok(cells)
}

/// Trains one sweep cell.
pub trait CellRunner: Sync {
    fn run(&self, cell: &SweepCell) -> Result<History, TrainError>;
}

/// Runs real training for every cell on fixed train and test sets.
pub struct TrainingRunner {
    pub base: TrainConfig,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl CellRunner for TrainingRunner {
    fn run(&self, cell: &SweepCell) -> Result<History, TrainError> {
        let config = TrainConfig {
            arch: cell.arch,
            aug_type: cell.aug_type,
            dropout: cell.dropout.rate(),
            checkpoint: None,
            ..self.base.clone()
        };
        Ok(train(&config, &self.train, &self.test)?.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub arch: ArchId,
    pub aug_type: u8,
    pub dropout: Dropout,
    pub max_accuracy: f64,
    pub best_epoch: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

/// Runs every cell, in parallel when asked. Rows keep the order of `cells`.
pub fn run_sweep(cells: &[SweepCell], runner: &dyn CellRunner, parallel: bool) -> Result<SweepReport, TrainError> {
    let one = |cell: &SweepCell| -> Result<SweepRow, TrainError> {
        let history = runner.run(cell)?;
        log::info!("{} aug {} dropout {}: {:.4}", cell.arch, cell.aug_type, cell.dropout, history.max_total_accuracy());
        Ok(SweepRow {
            arch: cell.arch,
            aug_type: cell.aug_type.id(),
            dropout: cell.dropout,
            max_accuracy: history.max_total_accuracy(),
            best_epoch: history.best_epoch().unwrap_or(0),
        })
    };
    let rows = if parallel {
        cells.par_iter().map(one).collect::<Result<Vec<_>, _>>()?
    } else {
        cells.iter().map(one).collect::<Result<Vec<_>, _>>()?
    };
    Ok(SweepReport { rows })
}

impl SweepReport {
    /// Highest-accuracy row of each architecture (first one on ties), in
    /// order of first appearance.
    pub fn best_per_arch(&self) -> Vec<SweepRow> {
        let mut best: Vec<SweepRow> = Vec::new();
        for row in &self.rows {
            match best.iter_mut().find(|b| b.arch == row.arch) {
                Some(b) if row.max_accuracy > b.max_accuracy => *b = row.clone(),
                Some(_) => {}
                None => best.push(row.clone()),
            }
        }
        best
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        serde_json::from_str(text).map_err(|e| TrainError::Report(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("rows serialize to csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, TrainError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<Result<Vec<SweepRow>, _>>().map_err(|e| TrainError::Report(e.to_string()))?;
        Ok(Self { rows })
    }

    /// Plain-text table of the best configuration per architecture.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<24} {:>8} {:>8} {:>9} {:>6}", "arch", "aug", "dropout", "accuracy", "epoch").unwrap();
        for r in self.best_per_arch() {
            writeln!(
                s,
                "{:<24} {:>8} {:>8} {:>8.2}% {:>6}",
                r.arch.as_str(),
                r.aug_type,
                r.dropout.to_string(),
                100.0 * r.max_accuracy,
                r.best_epoch
            )
            .unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Metrics;

    fn augs(ids: &[u8]) -> Vec<AugmentationType> {
        ids.iter().map(|&i| AugmentationType::new(i).unwrap()).collect()
    }

    /// Accuracy is a fixed function of the cell, reported at epoch 1.
    struct Stub;

    impl CellRunner for Stub {
        fn run(&self, cell: &SweepCell) -> Result<History, TrainError> {
            let hits = 10 + cell.aug_type.id() as u64 + (cell.dropout.rate() * 10.0).round() as u64 + cell.arch as u64;
            let mut h = History::default();
            h.push(Metrics::from_confusion([[hits, 30 - hits, 0], [0, 30, 0], [0, 0, 30]], 1), 0.5);
            Ok(h)
        }
    }

    #[test]
    fn lenet_alone_is_one_na_run() {
        let cells = sweep_cells(&[ArchId::LeNet5], &augs(&[0]), &[]).unwrap();
        assert_eq!(cells.len(), 1);
        let report = run_sweep(&cells, &Stub, false).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].dropout, Dropout::NotApplicable);
        assert!(report.to_csv().contains(",NA,"));
        assert!(report.to_json().contains("\"NA\""));
    }

    #[test]
    fn full_grid_counts() {
        let cells = sweep_cells(&ArchId::ALL, &augs(&[0, 1, 2, 3, 4, 5]), &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(cells.len(), 3 * 6 * 6 + 6);
    }

    #[test]
    fn empty_axes_are_rejected() {
        assert!(matches!(sweep_cells(&[], &augs(&[0]), &[0.0]), Err(TrainError::EmptyAxis("archs"))));
        assert!(matches!(sweep_cells(&[ArchId::AlexNet], &[], &[0.0]), Err(TrainError::EmptyAxis("aug_types"))));
        assert!(matches!(sweep_cells(&[ArchId::AlexNet], &augs(&[0]), &[]), Err(TrainError::EmptyAxis("dropouts"))));
    }

    #[test]
    fn best_rows_and_round_trips() {
        let cells = sweep_cells(&ArchId::ALL, &augs(&[0, 2, 5]), &[0.0, 0.2, 0.5]).unwrap();
        let report = run_sweep(&cells, &Stub, true).unwrap();
        let serial = run_sweep(&cells, &Stub, false).unwrap();
        assert_eq!(report, serial);
        for best in report.best_per_arch() {
            let max = report.rows.iter().filter(|r| r.arch == best.arch).map(|r| r.max_accuracy).fold(0.0, f64::max);
            assert_eq!(best.max_accuracy, max);
        }
        assert_eq!(SweepReport::from_json(&report.to_json()).unwrap(), report);
        assert_eq!(SweepReport::from_csv(&report.to_csv()).unwrap(), report);
        assert!(report.summary().lines().count() == 5);
    }
}
