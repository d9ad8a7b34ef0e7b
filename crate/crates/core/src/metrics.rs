//! Hamming loss, micro-averaged precision/recall/F1, and frequency-band F1.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Examples × labels indicator matrix; column `j` is label id `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryLabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

pub fn to_binary(ids: &[u32], labels: usize) -> Result<Vec<bool>> {
    let mut row = vec![false; labels];
    for &id in ids {
        let id = id as usize;
        if id >= labels {
            return Err(Error::Metrics(format!(
                "label id {id} out of range for {labels} labels"
            )));
        }
        row[id] = true;
    }
    Ok(row)
}

impl BinaryLabelMatrix {
    pub fn from_label_sets<S: AsRef<[u32]>>(sets: &[S], labels: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(sets.len() * labels);
        for s in sets {
            data.extend(to_binary(s.as_ref(), labels)?);
        }
        Ok(Self {
            rows: sets.len(),
            cols: labels,
            data,
        })
    }

    pub fn from_rows(rows: Vec<Vec<bool>>, labels: usize) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != labels) {
            return Err(Error::Metrics(format!(
                "row of width {} in a {labels}-label matrix",
                r.len()
            )));
        }
        Ok(Self {
            rows: rows.len(),
            cols: labels,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

fn check_shapes(pred: &BinaryLabelMatrix, gold: &BinaryLabelMatrix) -> Result<()> {
    if pred.rows != gold.rows || pred.cols != gold.cols {
        return Err(Error::Metrics(format!(
            "prediction matrix is {}x{} but gold is {}x{}",
            pred.rows, pred.cols, gold.rows, gold.cols
        )));
    }
    if pred.rows == 0 || pred.cols == 0 {
        return Err(Error::Metrics("empty label matrix".into()));
    }
    Ok(())
}

/// Mean over examples of the fraction of label positions that disagree.
pub fn hamming_loss(pred: &BinaryLabelMatrix, gold: &BinaryLabelMatrix) -> Result<f64> {
    check_shapes(pred, gold)?;
    let total: f64 = (0..pred.rows)
        .map(|r| {
            let wrong = pred.row(r).iter().zip(gold.row(r)).filter(|(a, b)| a != b).count();
            wrong as f64 / pred.cols as f64
        })
        .sum();
    Ok(total / pred.rows as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn counts(pred: &BinaryLabelMatrix, gold: &BinaryLabelMatrix, from_col: usize) -> Counts {
    let mut c = Counts::default();
    for r in 0..pred.rows {
        for (&p, &g) in pred.row(r)[from_col..].iter().zip(&gold.row(r)[from_col..]) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    c
}

fn ratio(num: usize, den: usize, what: &str) -> f64 {
    if den == 0 {
        log::warn!("{what} has an empty denominator; reporting 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn prf(c: Counts) -> Prf {
    let p = ratio(c.tp, c.tp + c.fp, "micro precision");
    let r = ratio(c.tp, c.tp + c.fn_, "micro recall");
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    Prf { p, r, f1 }
}

pub fn micro_prf(pred: &BinaryLabelMatrix, gold: &BinaryLabelMatrix) -> Result<Prf> {
    check_shapes(pred, gold)?;
    Ok(prf(counts(pred, gold, 0)))
}

/// Micro-F1 restricted to labels outside the `k` most frequent. Label ids are
/// frequency ranks, so this keeps columns `k..L`.
pub fn band_micro_f1(pred: &BinaryLabelMatrix, gold: &BinaryLabelMatrix, k: usize) -> Result<f64> {
    check_shapes(pred, gold)?;
    if k >= pred.cols {
        return Err(Error::Metrics(format!(
            "cannot exclude the top {k} of {} labels",
            pred.cols
        )));
    }
    Ok(prf(counts(pred, gold, k)).f1)
}

/// Headline metrics plus optional band F1 keyed by the number of excluded
/// top labels. Serializes flat: `hl, p, r, f1, band_f1_k10, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub hl: f64,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub bands: BTreeMap<usize, f64>,
}

impl EvalReport {
    pub fn compute(pred: &BinaryLabelMatrix, gold: &BinaryLabelMatrix, bands: &[usize]) -> Result<Self> {
        let hl = hamming_loss(pred, gold)?;
        let Prf { p, r, f1 } = micro_prf(pred, gold)?;
        let bands = bands
            .iter()
            .map(|&k| Ok((k, band_micro_f1(pred, gold, k)?)))
            .collect::<Result<_>>()?;
        Ok(Self { hl, p, r, f1, bands })
    }
}

impl Serialize for EvalReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(4 + self.bands.len()))?;
        m.serialize_entry("hl", &self.hl)?;
        m.serialize_entry("p", &self.p)?;
        m.serialize_entry("r", &self.r)?;
        m.serialize_entry("f1", &self.f1)?;
        for (k, v) in &self.bands {
            m.serialize_entry(&format!("band_f1_k{k}"), v)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for EvalReport {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut raw = BTreeMap::<String, f64>::deserialize(d)?;
        let mut take = |k: &str| raw.remove(k).ok_or_else(|| D::Error::missing_field("metric"));
        let (hl, p, r, f1) = (take("hl")?, take("p")?, take("r")?, take("f1")?);
        let mut bands = BTreeMap::new();
        for (key, v) in raw {
            let k = key
                .strip_prefix("band_f1_k")
                .and_then(|k| k.parse().ok())
                .ok_or_else(|| D::Error::custom(format!("unknown report key {key}")))?;
            bands.insert(k, v);
        }
        Ok(Self { hl, p, r, f1, bands })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn m(sets: &[&[u32]], l: usize) -> BinaryLabelMatrix {
        BinaryLabelMatrix::from_label_sets(sets, l).unwrap()
    }

    #[test]
    fn binary_rows() {
        assert_eq!(to_binary(&[], 4).unwrap(), vec![false; 4]);
        assert_eq!(to_binary(&[0, 2], 4).unwrap(), vec![true, false, true, false]);
        assert!(to_binary(&[4], 4).is_err());
    }

    #[test]
    fn hamming_examples() {
        let gold = m(&[&[0, 1]], 4);
        assert_eq!(hamming_loss(&gold, &gold).unwrap(), 0.0);
        assert_eq!(hamming_loss(&m(&[&[0, 2]], 4), &gold).unwrap(), 0.5);
        assert_eq!(hamming_loss(&m(&[&[2, 3]], 4), &gold).unwrap(), 1.0);
        assert!(hamming_loss(&m(&[&[0]], 3), &gold).is_err());
    }

    #[test]
    fn micro_example() {
        // A=0, B=1, C=2
        let gold = m(&[&[0, 1], &[1]], 3);
        let pred = m(&[&[0], &[1, 2]], 3);
        let r = micro_prf(&pred, &gold).unwrap();
        for x in [r.p, r.r, r.f1] {
            assert!((x - 2.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(
            micro_prf(&gold, &gold).unwrap(),
            Prf {
                p: 1.0,
                r: 1.0,
                f1: 1.0
            }
        );
        let empty = m(&[&[], &[]], 3);
        assert_eq!(
            micro_prf(&empty, &gold).unwrap(),
            Prf {
                p: 0.0,
                r: 0.0,
                f1: 0.0
            }
        );
    }

    #[test]
    fn band_boundaries() {
        let gold = m(&[&[0, 1, 3], &[2, 3]], 4);
        let pred = m(&[&[0, 3], &[1, 3]], 4);
        assert_eq!(
            band_micro_f1(&pred, &gold, 0).unwrap(),
            micro_prf(&pred, &gold).unwrap().f1
        );
        assert_eq!(band_micro_f1(&pred, &gold, 3).unwrap(), 1.0);
        assert!(band_micro_f1(&pred, &gold, 4).is_err());
    }

    #[test]
    fn report_serializes_flat() {
        let gold = m(&[&[0, 1, 3], &[2, 3]], 4);
        let pred = m(&[&[0, 3], &[1, 3]], 4);
        let rep = EvalReport::compute(&pred, &gold, &[1, 2]).unwrap();
        let json = serde_json::to_value(&rep).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        for k in ["hl", "p", "r", "f1", "band_f1_k1", "band_f1_k2"] {
            assert!(keys.contains(&k), "{k}");
        }
        let back: EvalReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, rep);
    }

    fn matrix_pair() -> impl Strategy<Value = (Vec<Vec<bool>>, Vec<Vec<bool>>, usize)> {
        (1usize..10, 1usize..9).prop_flat_map(|(l, n)| {
            let rows = prop::collection::vec(prop::collection::vec(any::<bool>(), l), n);
            (rows.clone(), rows, Just(l))
        })
    }

    proptest! {
        #[test]
        fn column_permutation_invariance((p, g, l) in matrix_pair(), seed: u64) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..l).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permute = |rows: &Vec<Vec<bool>>| rows.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
            let (a, b) = (BinaryLabelMatrix::from_rows(p.clone(), l).unwrap(), BinaryLabelMatrix::from_rows(g.clone(), l).unwrap());
            let (pa, pb) = (BinaryLabelMatrix::from_rows(permute(&p), l).unwrap(), BinaryLabelMatrix::from_rows(permute(&g), l).unwrap());
            prop_assert_eq!(hamming_loss(&a, &b).unwrap(), hamming_loss(&pa, &pb).unwrap());
            prop_assert_eq!(micro_prf(&a, &b).unwrap(), micro_prf(&pa, &pb).unwrap());
        }

        #[test]
        fn ranges_and_f1_identity((p, g, l) in matrix_pair()) {
            let (a, b) = (BinaryLabelMatrix::from_rows(p, l).unwrap(), BinaryLabelMatrix::from_rows(g, l).unwrap());
            let hl = hamming_loss(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&hl));
            let r = micro_prf(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.f1));
            if r.p + r.r > 0.0 {
                prop_assert_eq!(r.f1, 2.0 * r.p * r.r / (r.p + r.r));
            }
        }
    }
}
