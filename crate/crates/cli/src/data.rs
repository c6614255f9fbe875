use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use motiontok::skeleton::{read_mskl, synth_dataset, PoseSequence};
use motiontok::vgmt::{Clip, Vgmt};

use crate::config::{DataSource, RunConfig};
use crate::error::CliError;

/// Expands directories into their `.mskl` files, sorted by name.
pub fn mskl_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "mskl"))
                .collect();
            files.sort();
            out.extend(files);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(CliError::data(format!("{} does not exist", p.display())));
        }
    }
    if out.is_empty() {
        return Err(CliError::data("no .mskl files found"));
    }
    Ok(out)
}

pub fn read_sequence(path: &Path) -> Result<PoseSequence, CliError> {
    let file = File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let f = read_mskl(&mut BufReader::new(file)).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(f.sequence)
}

pub fn load_sequences(cfg: &RunConfig) -> Result<Vec<PoseSequence>, CliError> {
    match cfg.data.source {
        DataSource::Synthetic => Ok(synth_dataset(&cfg.data.synth, cfg.data.count, cfg.seed)?),
        DataSource::Files => mskl_files(&cfg.data.paths)?.iter().map(|p| read_sequence(p)).collect(),
    }
}

/// Splits off the last `eval_fraction` of the sequences, at least one when
/// the fraction is positive and there are two or more sequences.
pub fn split(seqs: Vec<PoseSequence>, eval_fraction: f64) -> (Vec<PoseSequence>, Vec<PoseSequence>) {
    let n = seqs.len();
    let mut held = (n as f64 * eval_fraction).ceil() as usize;
    if held >= n {
        held = n.saturating_sub(1);
    }
    let mut train = seqs;
    let eval = train.split_off(n - held);
    (train, eval)
}

/// Cuts every sequence into non-overlapping crops of `len` frames. The
/// remainder of each sequence is dropped.
pub fn crops(seqs: &[PoseSequence], len: usize) -> Result<Vec<PoseSequence>, CliError> {
    let mut out = Vec::new();
    for s in seqs {
        for i in 0..s.frames() / len {
            out.push(s.slice_frames(i * len, (i + 1) * len)?);
        }
    }
    if out.is_empty() {
        return Err(CliError::data(format!("no sequence has the {len} frames a clip needs")));
    }
    Ok(out)
}

pub fn prepare(vgmt: &Vgmt, seqs: &[PoseSequence]) -> Result<Vec<Clip>, CliError> {
    seqs.iter().map(|s| Ok(vgmt.prepare(s)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use motiontok::skeleton::SynthConfig;

    fn seqs(n: usize, frames: usize) -> Vec<PoseSequence> {
        synth_dataset(&SynthConfig { frames, ..SynthConfig::default() }, n, 1).unwrap()
    }

    #[test]
    fn split_holds_out_the_tail() {
        let all = seqs(10, 4);
        let (train, eval) = split(all.clone(), 0.2);
        assert_eq!((train.len(), eval.len()), (8, 2));
        assert_eq!(eval[1], all[9]);
        let (train, eval) = split(seqs(1, 4), 0.5);
        assert_eq!((train.len(), eval.len()), (1, 0));
        let (_, eval) = split(seqs(3, 4), 0.0);
        assert!(eval.is_empty());
    }

    #[test]
    fn crops_drop_the_remainder() {
        let c = crops(&seqs(2, 10), 4).unwrap();
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|s| s.frames() == 4));
        assert!(crops(&seqs(2, 3), 4).is_err());
    }
}
