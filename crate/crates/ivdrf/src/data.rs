//! Domain data model: observations, datasets, fold plans, and the target
//! treatment interval.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single observed unit `[L, Z, A, Y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub l: Vec<f64>,
    pub z: Vec<f64>,
    pub a: f64,
    pub y: f64,
}

impl Observation {
    pub fn validate(&self) -> Result<()> {
        let finite = self.a.is_finite()
            && self.y.is_finite()
            && self.l.iter().all(|v| v.is_finite())
            && self.z.iter().all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::Misuse("observation contains non-finite values".into()))
        }
    }
}

/// Columnar store of observations, optionally with the latent confounder
/// kept for simulation studies.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    l_dim: usize,
    z_dim: usize,
    /// Row-major `n x l_dim`.
    l: Vec<f64>,
    /// Row-major `n x z_dim`.
    z: Vec<f64>,
    a: Vec<f64>,
    y: Vec<f64>,
    /// Latent confounder values, simulation only.
    latent_u: Option<Vec<f64>>,
    treatment_support: (f64, f64),
}

impl Dataset {
    /// Builds a dataset from parallel columns; treatment support defaults to
    /// the observed range.
    pub fn from_columns(
        l: Vec<f64>,
        l_dim: usize,
        z: Vec<f64>,
        z_dim: usize,
        a: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(Error::EmptyData);
        }
        if y.len() != n || l.len() != n * l_dim || z.len() != n * z_dim || z_dim == 0 {
            return Err(Error::Schema(format!(
                "column shapes inconsistent (n = {n}, l_dim = {l_dim}, z_dim = {z_dim})"
            )));
        }
        for (name, col) in [("l", &l), ("z", &z), ("a", &a), ("y", &y)] {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("column '{name}' has non-finite entries")));
            }
        }
        let a_min = a.iter().cloned().fold(f64::INFINITY, f64::min);
        let a_max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Dataset {
            n,
            l_dim,
            z_dim,
            l,
            z,
            a,
            y,
            latent_u: None,
            treatment_support: (a_min, a_max),
        })
    }

    pub fn from_observations(obs: &[Observation]) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::EmptyData);
        }
        let l_dim = obs[0].l.len();
        let z_dim = obs[0].z.len();
        for (i, o) in obs.iter().enumerate() {
            o.validate()?;
            if o.l.len() != l_dim || o.z.len() != z_dim {
                return Err(Error::Schema(format!(
                    "row {i} has inconsistent dimensions (l {} vs {l_dim}, z {} vs {z_dim})",
                    o.l.len(),
                    o.z.len()
                )));
            }
        }
        let mut l = Vec::with_capacity(obs.len() * l_dim);
        let mut z = Vec::with_capacity(obs.len() * z_dim);
        let mut a = Vec::with_capacity(obs.len());
        let mut y = Vec::with_capacity(obs.len());
        for o in obs {
            l.extend_from_slice(&o.l);
            z.extend_from_slice(&o.z);
            a.push(o.a);
            y.push(o.y);
        }
        Self::from_columns(l, l_dim, z, z_dim, a, y)
    }

    /// Attaches latent confounder values (one scalar per row).
    pub fn with_latent_u(mut self, u: Vec<f64>) -> Result<Self> {
        if u.len() != self.n {
            return Err(Error::Schema(format!(
                "latent U length {} does not match n = {}",
                u.len(),
                self.n
            )));
        }
        self.latent_u = Some(u);
        Ok(self)
    }

    /// Overrides the treatment support with a known closed range.
    pub fn with_treatment_support(mut self, lo: f64, hi: f64) -> Result<Self> {
        let (a_min, a_max) = self.observed_treatment_range();
        if lo > a_min || hi < a_max {
            return Err(Error::Schema(format!(
                "declared support [{lo}, {hi}] does not contain observed range [{a_min}, {a_max}]"
            )));
        }
        self.treatment_support = (lo, hi);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn l_dim(&self) -> usize {
        self.l_dim
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn treatment_support(&self) -> (f64, f64) {
        self.treatment_support
    }

    fn observed_treatment_range(&self) -> (f64, f64) {
        let a_min = self.a.iter().cloned().fold(f64::INFINITY, f64::min);
        let a_max = self.a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (a_min, a_max)
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn l_row(&self, i: usize) -> &[f64] {
        &self.l[i * self.l_dim..(i + 1) * self.l_dim]
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.z_dim..(i + 1) * self.z_dim]
    }

    pub fn latent_u(&self) -> Option<&[f64]> {
        self.latent_u.as_deref()
    }

    pub fn row(&self, i: usize) -> Observation {
        Observation {
            l: self.l_row(i).to_vec(),
            z: self.z_row(i).to_vec(),
            a: self.a[i],
            y: self.y[i],
        }
    }

    /// New dataset containing `indices` in order (repeats allowed, so this
    /// also serves bootstrap resampling). Treatment support is inherited.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut l = Vec::with_capacity(indices.len() * self.l_dim);
        let mut z = Vec::with_capacity(indices.len() * self.z_dim);
        let mut a = Vec::with_capacity(indices.len());
        let mut y = Vec::with_capacity(indices.len());
        let mut u = self.latent_u.as_ref().map(|_| Vec::with_capacity(indices.len()));
        for &i in indices {
            l.extend_from_slice(self.l_row(i));
            z.extend_from_slice(self.z_row(i));
            a.push(self.a[i]);
            y.push(self.y[i]);
            if let (Some(us), Some(src)) = (u.as_mut(), self.latent_u.as_ref()) {
                us.push(src[i]);
            }
        }
        let mut out = Dataset {
            n: indices.len(),
            l_dim: self.l_dim,
            z_dim: self.z_dim,
            l,
            z,
            a,
            y,
            latent_u: u,
            treatment_support: self.treatment_support,
        };
        // keep the declared support only if it still covers the rows
        let (a_min, a_max) = out.observed_treatment_range();
        if out.treatment_support.0 > a_min || out.treatment_support.1 < a_max {
            out.treatment_support = (a_min, a_max);
        }
        Ok(out)
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Schema {
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    pub instruments: Vec<String>,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        if self.instruments.is_empty() {
            return Err(Error::Schema("at least one instrument column is required".into()));
        }
        let mut names: Vec<&str> = vec![&self.treatment, &self.outcome];
        names.extend(self.covariates.iter().map(|s| s.as_str()));
        names.extend(self.instruments.iter().map(|s| s.as_str()));
        let mut seen = BTreeMap::new();
        for n in names {
            if seen.insert(n, ()).is_some() {
                return Err(Error::Schema(format!("column '{n}' mapped more than once")));
            }
        }
        Ok(())
    }
}

/// Loads a dataset from a headered CSV file using the column mapping.
pub fn load_dataset<P: AsRef<Path>>(path: P, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_dataset_from_reader(file, schema)
}

pub fn load_dataset_from_reader<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let a_idx = col(&schema.treatment)?;
    let y_idx = col(&schema.outcome)?;
    let l_idx: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    let z_idx: Vec<usize> = schema
        .instruments
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;

    let parse = |record: &csv::StringRecord, idx: usize, row: usize| -> Result<f64> {
        let cell = record.get(idx).ok_or_else(|| Error::Parse {
            row,
            column: headers.get(idx).unwrap_or("?").to_string(),
            message: "missing cell".into(),
        })?;
        cell.trim().parse::<f64>().map_err(|e| Error::Parse {
            row,
            column: headers.get(idx).unwrap_or("?").to_string(),
            message: e.to_string(),
        })
    };

    let mut l = Vec::new();
    let mut z = Vec::new();
    let mut a = Vec::new();
    let mut y = Vec::new();
    for (row_i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = row_i + 1; // 1-based data row
        for &i in &l_idx {
            l.push(parse(&record, i, row)?);
        }
        for &i in &z_idx {
            z.push(parse(&record, i, row)?);
        }
        a.push(parse(&record, a_idx, row)?);
        y.push(parse(&record, y_idx, row)?);
    }
    if a.is_empty() {
        return Err(Error::EmptyData);
    }
    Dataset::from_columns(l, l_idx.len(), z, z_idx.len(), a, y)
}

/// Writes a dataset back to CSV with shortest round-trip decimal text, so
/// `load(write(d))` reproduces `d` bit for bit.
pub fn write_dataset<W: Write>(data: &Dataset, mut w: W) -> Result<()> {
    let mut header = Vec::new();
    for j in 0..data.l_dim() {
        header.push(format!("l{j}"));
    }
    for j in 0..data.z_dim() {
        header.push(format!("z{j}"));
    }
    header.push("a".into());
    header.push("y".into());
    writeln!(w, "{}", header.join(","))?;
    for i in 0..data.len() {
        let mut cells = Vec::with_capacity(header.len());
        for v in data.l_row(i) {
            cells.push(format!("{v}"));
        }
        for v in data.z_row(i) {
            cells.push(format!("{v}"));
        }
        cells.push(format!("{}", data.a()[i]));
        cells.push(format!("{}", data.y()[i]));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Default schema matching [`write_dataset`] output.
pub fn default_schema(l_dim: usize, z_dim: usize) -> Schema {
    Schema {
        treatment: "a".into(),
        outcome: "y".into(),
        covariates: (0..l_dim).map(|j| format!("l{j}")).collect(),
        instruments: (0..z_dim).map(|j| format!("z{j}")).collect(),
    }
}

/// Target treatment interval, strictly interior to the support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetInterval {
    pub lo: f64,
    pub hi: f64,
}

impl TargetInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidInterval(format!("[{lo}, {hi}] is not a proper interval")));
        }
        Ok(TargetInterval { lo, hi })
    }

    /// Checks strict interiority against a treatment support.
    pub fn validate_inside(&self, support: (f64, f64)) -> Result<()> {
        if support.0 < self.lo && self.hi < support.1 {
            Ok(())
        } else {
            Err(Error::InvalidInterval(format!(
                "[{}, {}] must be strictly inside the treatment support [{}, {}]",
                self.lo, self.hi, support.0, support.1
            )))
        }
    }

    pub fn contains(&self, a: f64) -> bool {
        self.lo <= a && a <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Equally spaced grid of `count >= 2` points covering the interval.
    pub fn grid(&self, count: usize) -> Vec<f64> {
        (0..count)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (count - 1) as f64)
            .collect()
    }
}

/// Deterministic cross-fitting plan: `K` folds plus the two training
/// subsamples of each fold complement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    /// Fold index of each observation.
    pub fold_of: Vec<u32>,
    /// Fold membership, `folds[k]` sorted ascending.
    pub folds: Vec<Vec<usize>>,
    /// First training subsample of each complement (nuisance fitting).
    pub part1: Vec<Vec<usize>>,
    /// Second training subsample of each complement (empirical measure).
    pub part2: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn complement_len(&self, k: usize) -> usize {
        self.part1[k].len() + self.part2[k].len()
    }
}

/// Derives an independent child seed from a master seed and a stream index
/// (splitmix64 finalizer). Adding workers never changes which child seed a
/// given stream receives.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut x = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Splits `0..n` into `K` folds by seeded shuffle and contiguous blocks,
/// then splits each complement into two parts of ratio `subsplit_fraction`.
pub fn make_folds(n: usize, k: usize, subsplit_fraction: f64, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidPlan(format!("need at least 2 folds, got {k}")));
    }
    if n < 2 * k {
        return Err(Error::InvalidPlan(format!(
            "need n >= 2K for nonempty folds and subsplits (n = {n}, K = {k})"
        )));
    }
    if !(subsplit_fraction > 0.0 && subsplit_fraction < 1.0) {
        return Err(Error::InvalidPlan(format!(
            "subsplit fraction must lie in (0, 1), got {subsplit_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    // contiguous blocks of the shuffled order; sizes differ by at most one
    let base = n / k;
    let extra = n % k;
    let mut folds: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut cursor = 0usize;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let mut members: Vec<usize> = order[cursor..cursor + size].to_vec();
        members.sort_unstable();
        folds.push(members);
        cursor += size;
    }

    let mut fold_of = vec![0u32; n];
    for (fold, members) in folds.iter().enumerate() {
        for &i in members {
            fold_of[i] = fold as u32;
        }
    }

    let mut part1 = Vec::with_capacity(k);
    let mut part2 = Vec::with_capacity(k);
    for fold in 0..k {
        // complement in shuffled order so the subsplit is seed-determined
        let complement: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| fold_of[i] as usize != fold)
            .collect();
        let m = complement.len();
        let take = ((subsplit_fraction * m as f64).round() as usize).clamp(1, m - 1);
        let mut p1: Vec<usize> = complement[..take].to_vec();
        let mut p2: Vec<usize> = complement[take..].to_vec();
        p1.sort_unstable();
        p2.sort_unstable();
        part1.push(p1);
        part2.push(p2);
    }

    Ok(FoldPlan {
        n,
        k,
        seed,
        fold_of,
        folds,
        part1,
        part2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_three_rows() {
        let csv = "l,z,a,y\n0.1,1.0,0.5,2.0\n-0.2,0.0,0.25,1.5\n0.0,1.0,0.75,3.25\n";
        let schema = Schema {
            treatment: "a".into(),
            outcome: "y".into(),
            covariates: vec!["l".into()],
            instruments: vec!["z".into()],
        };
        let data = load_dataset_from_reader(csv.as_bytes(), &schema).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.l_dim(), 1);
        assert_eq!(data.z_dim(), 1);
        assert_eq!(data.treatment_support(), (0.25, 0.75));

        let mut out = Vec::new();
        write_dataset(&data, &mut out).unwrap();
        let schema2 = default_schema(1, 1);
        let reread = load_dataset_from_reader(out.as_slice(), &schema2).unwrap();
        assert_eq!(data, reread);
    }

    #[test]
    fn degenerate_covariates_allowed() {
        let csv = "z,a,y\n1.0,0.5,2.0\n0.0,0.25,1.5\n";
        let schema = Schema {
            treatment: "a".into(),
            outcome: "y".into(),
            covariates: vec![],
            instruments: vec!["z".into()],
        };
        let data = load_dataset_from_reader(csv.as_bytes(), &schema).unwrap();
        assert_eq!(data.l_dim(), 0);
        assert_eq!(data.l_row(0).len(), 0);
    }

    #[test]
    fn parse_error_cites_row() {
        let mut csv = String::from("z,a,y\n");
        for i in 0..6 {
            csv.push_str(&format!("1.0,0.{i},2.0\n"));
        }
        csv.push_str("1.0,not_a_number,2.0\n");
        let schema = Schema {
            treatment: "a".into(),
            outcome: "y".into(),
            covariates: vec![],
            instruments: vec!["z".into()],
        };
        let err = load_dataset_from_reader(csv.as_bytes(), &schema).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 7);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "z,a,y\n1.0,0.5,2.0\n";
        let schema = Schema {
            treatment: "a".into(),
            outcome: "y".into(),
            covariates: vec!["l".into()],
            instruments: vec!["z".into()],
        };
        assert!(matches!(
            load_dataset_from_reader(csv.as_bytes(), &schema),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn zero_rows_is_empty_data_error() {
        let csv = "z,a,y\n";
        let schema = Schema {
            treatment: "a".into(),
            outcome: "y".into(),
            covariates: vec![],
            instruments: vec!["z".into()],
        };
        assert!(matches!(
            load_dataset_from_reader(csv.as_bytes(), &schema),
            Err(Error::EmptyData)
        ));
    }

    #[test]
    fn folds_partition_and_balance() {
        let plan = make_folds(10, 5, 0.5, 1).unwrap();
        let mut seen = vec![false; 10];
        for members in &plan.folds {
            assert_eq!(members.len(), 2);
            for &i in members {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        for k in 0..5 {
            assert_eq!(plan.part1[k].len(), 4);
            assert_eq!(plan.part2[k].len(), 4);
            let mut all: Vec<usize> = plan.part1[k]
                .iter()
                .chain(plan.part2[k].iter())
                .copied()
                .collect();
            all.sort_unstable();
            let expected: Vec<usize> = (0..10).filter(|i| !plan.folds[k].contains(i)).collect();
            assert_eq!(all, expected);
        }
    }

    #[test]
    fn folds_deterministic() {
        let p1 = make_folds(10, 5, 0.5, 1).unwrap();
        let p2 = make_folds(10, 5, 0.5, 1).unwrap();
        assert_eq!(p1, p2);
        let p3 = make_folds(10, 5, 0.5, 2).unwrap();
        assert_ne!(p1, p3);
    }

    #[test]
    fn paper_scale_plan() {
        let plan = make_folds(5000, 5, 0.5, 42).unwrap();
        assert_eq!(plan.folds.iter().map(Vec::len).sum::<usize>(), 5000);
        for k in 0..5 {
            assert_eq!(plan.folds[k].len(), 1000);
            assert_eq!(plan.complement_len(k), 4000);
            assert_eq!(plan.part1[k].len(), 2000);
        }
    }

    #[test]
    fn invalid_plans_rejected() {
        assert!(matches!(make_folds(10, 1, 0.5, 0), Err(Error::InvalidPlan(_))));
        assert!(matches!(make_folds(9, 5, 0.5, 0), Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn interval_validation() {
        let iv = TargetInterval::new(0.25, 0.75).unwrap();
        iv.validate_inside((0.0, 1.0)).unwrap();
        assert!(iv.validate_inside((0.3, 1.0)).is_err());
        assert!(TargetInterval::new(0.5, 0.5).is_err());
        let g = iv.grid(51);
        assert_eq!(g.len(), 51);
        assert_eq!(g[0], 0.25);
        assert_eq!(g[50], 0.75);
        assert!((g[25] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn subset_supports_repeats() {
        let data = Dataset::from_columns(
            vec![],
            0,
            vec![1.0, 2.0, 3.0],
            1,
            vec![0.1, 0.2, 0.3],
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        let sub = data.subset(&[2, 2, 0]).unwrap();
        assert_eq!(sub.len(), 3);
        assert_eq!(sub.a(), &[0.3, 0.3, 0.1]);
    }
}
