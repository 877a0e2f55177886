//! On-disk dataset layout: `catalog.tsv` (`item_id<TAB>index`, one per line)
//! and `train.tsv` / `valid.tsv` / `test.tsv` with one sample per line:
//! `user_id<TAB>space-joined history indices<TAB>target index<TAB>timestamp<TAB>position`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Catalog, Dataset, UserSequence};
use crate::error::{Error, Result};

pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut catalog = String::new();
    for (i, item) in data.catalog.iter().enumerate() {
        check_field(item)?;
        writeln!(catalog, "{item}\t{i}").unwrap();
    }
    write(&dir.join("catalog.tsv"), &catalog)?;
    for (name, seqs) in [
        ("train.tsv", &data.train),
        ("valid.tsv", &data.valid),
        ("test.tsv", &data.test),
    ] {
        let mut out = String::new();
        for s in seqs {
            check_field(&s.user_id)?;
            let hist: Vec<String> = s.history.iter().map(usize::to_string).collect();
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                s.user_id,
                hist.join(" "),
                s.target,
                s.timestamp,
                s.position
            )
            .unwrap();
        }
        write(&dir.join(name), &out)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut catalog = Catalog::new();
    let text = read(&dir.join("catalog.tsv"))?;
    for (lineno, line) in text.lines().enumerate() {
        let (item, idx) = line
            .split_once('\t')
            .ok_or_else(|| bad("catalog.tsv", lineno))?;
        let idx: usize = idx.parse().map_err(|_| bad("catalog.tsv", lineno))?;
        if catalog.intern(item) != idx {
            return Err(bad("catalog.tsv", lineno));
        }
    }
    let n_items = catalog.len();
    let load = |name: &str| -> Result<Vec<UserSequence>> {
        let text = read(&dir.join(name))?;
        text.lines()
            .enumerate()
            .map(|(lineno, line)| parse_sequence(line, n_items).ok_or_else(|| bad(name, lineno)))
            .collect()
    };
    Ok(Dataset {
        train: load("train.tsv")?,
        valid: load("valid.tsv")?,
        test: load("test.tsv")?,
        catalog,
    })
}

fn parse_sequence(line: &str, n_items: usize) -> Option<UserSequence> {
    let mut cols = line.split('\t');
    let user_id = cols.next()?.to_owned();
    let history = cols
        .next()?
        .split(' ')
        .map(|x| x.parse::<usize>().ok().filter(|&i| i < n_items))
        .collect::<Option<Vec<_>>>()?;
    let target = cols.next()?.parse::<usize>().ok().filter(|&i| i < n_items)?;
    let timestamp = cols.next()?.parse().ok()?;
    let position = cols.next()?.parse().ok()?;
    if cols.next().is_some() || history.is_empty() {
        return None;
    }
    Some(UserSequence {
        user_id,
        history,
        target,
        timestamp,
        position,
    })
}

fn check_field(s: &str) -> Result<()> {
    if s.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidInput(format!(
            "identifier {s:?} contains a tab or newline"
        )));
    }
    Ok(())
}

fn bad(file: &str, lineno: usize) -> Error {
    Error::InvalidInput(format!("{file}: malformed line {}", lineno + 1))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
