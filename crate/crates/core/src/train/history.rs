use std::path::Path;

use crate::error::{Error, Result};

pub const HISTORY_HEADER: [&str; 7] = [
    "epoch",
    "train_loss",
    "val_loss",
    "val_dice",
    "val_tversky",
    "val_accuracy",
    "seconds",
];

/// Metrics of one completed epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
    pub val_tversky: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
    /// Soft Dice of the training predictions made during the epoch. Not
    /// written to the CSV log.
    pub train_dice: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// Record with the lowest validation loss (first one on ties).
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochRecord>, e| match best {
                Some(b) if b.val_loss <= e.val_loss => Some(b),
                _ => Some(e),
            })
    }

    pub fn to_writer<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(HISTORY_HEADER)?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                e.val_dice.to_string(),
                e.val_tversky.to_string(),
                e.val_accuracy.to_string(),
                e.seconds.to_string(),
            ])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn from_reader<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.iter().ne(HISTORY_HEADER) {
            return Err(Error::Config(format!(
                "history header must be `{}`",
                HISTORY_HEADER.join(",")
            )));
        }
        let mut epochs = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| -> Result<f64> {
                rec[k]
                    .parse()
                    .map_err(|_| Error::Config(format!("history row {}: bad {}", i + 1, HISTORY_HEADER[k])))
            };
            epochs.push(EpochRecord {
                epoch: rec[0]
                    .parse()
                    .map_err(|_| Error::Config(format!("history row {}: bad epoch", i + 1)))?,
                train_loss: field(1)?,
                val_loss: field(2)?,
                val_dice: field(3)?,
                val_tversky: field(4)?,
                val_accuracy: field(5)?,
                seconds: field(6)?,
                train_dice: None,
            });
        }
        Ok(Self { epochs })
    }

    /// Writes the CSV log.
    pub fn write(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(std::io::BufWriter::new(f)).map_err(|e| match e {
            Error::Csv(c) => Error::io(path, std::io::Error::other(c.to_string())),
            other => other,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }
}
