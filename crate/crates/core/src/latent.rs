//! Latent vectors, uncertainty scalars and exact cosine k-NN search over them.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible uncertainty. Smaller positive values are clamped up to it.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidLatent {
    Empty,
    NonFinite,
    Zero,
}

/// A finite, nonzero embedding vector. The Euclidean norm is cached.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    values: Vec<f64>,
    norm: f64,
}

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self, InvalidLatent> {
        if values.is_empty() {
            return Err(InvalidLatent::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(InvalidLatent::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(InvalidLatent::Zero);
        }
        Ok(Self { values, norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

/// ⟨a,b⟩ / (‖a‖‖b‖), clamped to [-1, 1].
pub fn cosine_similarity(a: &LatentVector, b: &LatentVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            line: None,
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(cosine_unchecked(a, b))
}

#[inline]
pub(crate) fn cosine_unchecked(a: &LatentVector, b: &LatentVector) -> f64 {
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    (dot / (a.norm * b.norm)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Labeled,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub z: LatentVector,
    pub sigma: f64,
    pub pool: Pool,
}

impl SampleRecord {
    /// Builds a record, rejecting non-finite or non-positive sigma and clamping
    /// small sigma to [`SIGMA_FLOOR`].
    pub fn new(id: impl Into<String>, z: LatentVector, sigma: f64, pool: Pool) -> Result<Self> {
        let id = id.into();
        if !sigma.is_finite() {
            return Err(Error::MalformedRow {
                line: 0,
                reason: format!("sample `{id}` has a non-finite sigma"),
            });
        }
        if sigma <= 0.0 {
            return Err(Error::NonPositiveSigma(id));
        }
        Ok(Self {
            id,
            z,
            sigma: sigma.max(SIGMA_FLOOR),
            pool,
        })
    }
}

/// An immutable, dimension-homogeneous collection of samples with unique ids.
#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    records: Vec<SampleRecord>,
    dimension: usize,
    index: HashMap<String, usize>,
}

impl PartialEq for SampleSet {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records && self.dimension == other.dimension
    }
}

impl SampleSet {
    pub fn new(records: Vec<SampleRecord>) -> Result<Self> {
        let dimension = records.first().map_or(0, |r| r.z.dim());
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.z.dim() != dimension {
                return Err(Error::DimensionMismatch {
                    line: None,
                    expected: dimension,
                    found: r.z.dim(),
                });
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            records,
            dimension,
            index,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SampleRecord> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Zero for an empty set.
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn into_records(self) -> Vec<SampleRecord> {
        self.records
    }

    /// Same samples with every sigma replaced by `f(sigma)`.
    pub fn map_sigma(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|r| SampleRecord::new(r.id.clone(), r.z.clone(), f(r.sigma), r.pool))
            .collect::<Result<Vec<_>>>()?;
        Self::new(records)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(Error::InvalidConfig(format!("unknown sample format `{other}`"))),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    id: String,
    z: Vec<f64>,
    sigma: f64,
}

/// Reads `id,z_1,..,z_d,sigma` CSV rows (an optional `id,...` header line is
/// skipped) or JSONL objects with keys `id`, `z`, `sigma`. The dimension is
/// taken from the first row.
pub fn load_samples(path: &Path, format: Format, pool: Pool) -> Result<SampleSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_samples(BufReader::new(file), format, pool).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_samples(reader: impl BufRead, format: Format, pool: Pool) -> Result<SampleSet> {
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut dimension = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (id, z, sigma) = match format {
            Format::Csv => {
                if lineno == 1 && trimmed.starts_with("id,") {
                    continue;
                }
                parse_csv_row(trimmed, lineno)?
            }
            Format::Jsonl => {
                let row: JsonRow = serde_json::from_str(trimmed).map_err(|e| Error::MalformedRow {
                    line: lineno,
                    reason: e.to_string(),
                })?;
                (row.id, row.z, row.sigma)
            }
        };
        let expected = *dimension.get_or_insert(z.len());
        if z.len() != expected {
            return Err(Error::DimensionMismatch {
                line: Some(lineno),
                expected,
                found: z.len(),
            });
        }
        if !sigma.is_finite() {
            return Err(Error::MalformedRow {
                line: lineno,
                reason: "sigma is not finite".into(),
            });
        }
        let z = LatentVector::new(z).map_err(|e| match e {
            InvalidLatent::Zero => Error::ZeroVector(id.clone()),
            InvalidLatent::Empty => Error::MalformedRow {
                line: lineno,
                reason: "empty latent vector".into(),
            },
            InvalidLatent::NonFinite => Error::MalformedRow {
                line: lineno,
                reason: "latent vector has a non-finite entry".into(),
            },
        })?;
        if seen.insert(id.clone(), lineno).is_some() {
            return Err(Error::DuplicateId(id));
        }
        records.push(SampleRecord::new(id, z, sigma, pool)?);
    }
    SampleSet::new(records)
}

fn parse_csv_row(line: &str, lineno: usize) -> Result<(String, Vec<f64>, f64)> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 3 {
        return Err(Error::MalformedRow {
            line: lineno,
            reason: format!("expected id, at least one coordinate and sigma; got {} fields", fields.len()),
        });
    }
    let id = fields[0];
    if id.is_empty() {
        return Err(Error::MalformedRow {
            line: lineno,
            reason: "empty id".into(),
        });
    }
    let parse = |s: &str| {
        s.parse::<f64>().map_err(|_| Error::MalformedRow {
            line: lineno,
            reason: format!("`{s}` is not a number"),
        })
    };
    let z = fields[1..fields.len() - 1]
        .iter()
        .map(|s| parse(s))
        .collect::<Result<Vec<_>>>()?;
    let sigma = parse(fields[fields.len() - 1])?;
    Ok((id.to_string(), z, sigma))
}

pub fn save_samples(set: &SampleSet, path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_samples(set, &mut w, format)
        .and_then(|_| w.flush().map_err(|e| Error::io(path, e)))
}

pub fn write_samples(set: &SampleSet, w: &mut impl Write, format: Format) -> Result<()> {
    let io = |e| Error::io("<writer>", e);
    for r in set.iter() {
        match format {
            Format::Csv => {
                let mut line = r.id.clone();
                for v in r.z.values() {
                    line.push(',');
                    line.push_str(&v.to_string());
                }
                line.push(',');
                line.push_str(&r.sigma.to_string());
                writeln!(w, "{line}").map_err(io)?;
            }
            Format::Jsonl => {
                let row = JsonRow {
                    id: r.id.clone(),
                    z: r.z.values().to_vec(),
                    sigma: r.sigma,
                };
                serde_json::to_writer(&mut *w, &row)?;
                writeln!(w).map_err(io)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<'a> {
    pub id: &'a str,
    pub index: usize,
    pub similarity: f64,
}

/// The `m` pool samples most cosine-similar to `query`, by descending
/// similarity with ties broken by ascending id. `exclude_id` is skipped.
/// Exact linear scan.
pub fn nearest_neighbors<'a>(
    query: &LatentVector,
    pool: &'a SampleSet,
    m: usize,
    exclude_id: Option<&str>,
) -> Result<Vec<Neighbor<'a>>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if m == 0 {
        return Err(Error::InvalidConfig("neighbor count must be at least 1".into()));
    }
    if query.dim() != pool.dimension() {
        return Err(Error::DimensionMismatch {
            line: None,
            expected: pool.dimension(),
            found: query.dim(),
        });
    }
    let mut all: Vec<Neighbor<'a>> = pool
        .iter()
        .enumerate()
        .filter(|(_, r)| exclude_id != Some(r.id.as_str()))
        .map(|(index, r)| Neighbor {
            id: &r.id,
            index,
            similarity: cosine_unchecked(query, &r.z),
        })
        .collect();
    let order = |a: &Neighbor<'_>, b: &Neighbor<'_>| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.id.cmp(b.id))
    };
    if m < all.len() {
        all.select_nth_unstable_by(m - 1, order);
        all.truncate(m);
    }
    all.sort_unstable_by(order);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn lv(v: &[f64]) -> LatentVector {
        LatentVector::new(v.to_vec()).unwrap()
    }

    fn set(rows: &[(&str, &[f64])]) -> SampleSet {
        SampleSet::new(
            rows.iter()
                .map(|(id, z)| SampleRecord::new(*id, lv(z), 1.0, Pool::Labeled).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn parse(text: &str, format: Format) -> Result<SampleSet> {
        read_samples(text.as_bytes(), format, Pool::Labeled)
    }

    #[test]
    fn csv_row_parses() {
        let s = parse("a,1.0,0.0,0.5\n", Format::Csv).unwrap();
        assert_eq!(s.dimension(), 2);
        let r = s.get("a").unwrap();
        assert_eq!(r.z.values(), &[1.0, 0.0]);
        assert_eq!(r.sigma, 0.5);
    }

    #[test]
    fn csv_header_is_skipped() {
        let s = parse("id,z1,z2,sigma\na,1,2,0.5\n", Format::Csv).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn zero_sigma_rejected() {
        assert!(matches!(
            parse("a,1.0,0.0,0\n", Format::Csv),
            Err(Error::NonPositiveSigma(id)) if id == "a"
        ));
    }

    #[test]
    fn tiny_sigma_clamped() {
        let s = parse("a,1.0,0.0,1e-9\n", Format::Csv).unwrap();
        assert_eq!(s.get("a").unwrap().sigma, SIGMA_FLOOR);
    }

    #[test]
    fn dimension_mismatch_reports_line() {
        let err = parse("a,1,0,1\nb,0,1,1\nc,1,1,1,1\n", Format::Csv).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch { line: Some(3), expected: 2, found: 3 }
        ));
    }

    #[test]
    fn bad_rows() {
        assert!(matches!(parse("a,1,x,1\n", Format::Csv), Err(Error::MalformedRow { line: 1, .. })));
        assert!(matches!(parse("a,1\n", Format::Csv), Err(Error::MalformedRow { .. })));
        assert!(matches!(parse("a,1,NaN\n", Format::Csv), Err(Error::MalformedRow { .. })));
        assert!(matches!(parse("a,NaN,1\n", Format::Csv), Err(Error::MalformedRow { .. })));
        assert!(matches!(parse("a,0,0,1\n", Format::Csv), Err(Error::ZeroVector(id)) if id == "a"));
        assert!(matches!(parse("a,1,1\na,2,1\n", Format::Csv), Err(Error::DuplicateId(_))));
        assert!(matches!(parse("{\"id\":1}\n", Format::Jsonl), Err(Error::MalformedRow { .. })));
    }

    #[test]
    fn jsonl_parses() {
        let s = parse("{\"id\":\"q\",\"z\":[0.5,-1],\"sigma\":2}\n", Format::Jsonl).unwrap();
        assert_eq!(s.get("q").unwrap().z.values(), &[0.5, -1.0]);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&lv(&[1., 0.]), &lv(&[1., 0.])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&lv(&[1., 0.]), &lv(&[0., 1.])).unwrap(), 0.0);
        assert!((cosine_similarity(&lv(&[1., 1.]), &lv(&[2., 2.])).unwrap() - 1.0).abs() < 1e-15);
        assert!(cosine_similarity(&lv(&[1., 1.]), &lv(&[2., 2., 2.])).is_err());
    }

    #[test]
    fn exact_match_wins() {
        let pool = set(&[("a", &[1., 0.]), ("b", &[0., 1.])]);
        let nn = nearest_neighbors(&lv(&[1., 0.]), &pool, 1, None).unwrap();
        assert_eq!(nn.len(), 1);
        assert_eq!((nn[0].id, nn[0].similarity), ("a", 1.0));
    }

    #[test]
    fn truncation_and_exclusion() {
        let pool = set(&[("a", &[1., 0.]), ("b", &[0., 1.]), ("c", &[1., 1.])]);
        let nn = nearest_neighbors(&lv(&[1., 0.]), &pool, 10, None).unwrap();
        let ids: Vec<_> = nn.iter().map(|n| n.id).collect();
        assert_eq!(ids, ["a", "c", "b"]);
        let nn = nearest_neighbors(&lv(&[1., 0.]), &pool, 10, Some("a")).unwrap();
        assert_eq!(nn.len(), 2);
        assert!(nn.iter().all(|n| n.id != "a"));
        assert!(matches!(
            nearest_neighbors(&lv(&[1., 0.]), &SampleSet::empty(), 1, None),
            Err(Error::EmptyPool)
        ));
    }

    #[test]
    fn ties_broken_by_id() {
        let pool = set(&[("b", &[1., 0.]), ("a", &[2., 0.]), ("c", &[3., 0.])]);
        let nn = nearest_neighbors(&lv(&[1., 0.]), &pool, 2, None).unwrap();
        assert_eq!(nn.iter().map(|n| n.id).collect::<Vec<_>>(), ["a", "b"]);
    }

    // Brute force: compute every similarity, full sort, take the prefix.
    fn brute_force(query: &[f64], pool: &[(String, Vec<f64>)], m: usize) -> Vec<(String, f64)> {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut all: Vec<(String, f64)> = pool
            .iter()
            .map(|(id, v)| {
                let dot: f64 = query.iter().zip(v).map(|(a, b)| a * b).sum();
                (id.clone(), (dot / (norm(query) * norm(v))).clamp(-1.0, 1.0))
            })
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(m);
        all
    }

    #[test]
    fn matches_exhaustive_sort_on_random_vectors() {
        let mut rng = crate::seed::rng(11);
        let mut gauss = |n: usize| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>();
        let raw: Vec<(String, Vec<f64>)> = (0..50).map(|i| (format!("s{i:02}"), gauss(8))).collect();
        let pool = SampleSet::new(
            raw.iter()
                .map(|(id, v)| SampleRecord::new(id.clone(), lv(v), 1.0, Pool::Labeled).unwrap())
                .collect(),
        )
        .unwrap();
        for _ in 0..20 {
            let q = gauss(8);
            let got = nearest_neighbors(&lv(&q), &pool, 5, None).unwrap();
            let want = brute_force(&q, &raw, 5);
            assert_eq!(got.len(), 5);
            for (g, w) in got.iter().zip(&want) {
                assert_eq!(g.id, w.0);
                assert!((g.similarity - w.1).abs() < 1e-12);
            }
        }
    }

    fn finite_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, d).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(a in finite_vec(5), b in finite_vec(5), k in 0.01f64..100.0) {
            let (va, vb) = (lv(&a), lv(&b));
            let ab = cosine_similarity(&va, &vb).unwrap();
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((ab - cosine_similarity(&vb, &va).unwrap()).abs() < 1e-12);
            let scaled = lv(&a.iter().map(|x| x * k).collect::<Vec<_>>());
            prop_assert!((ab - cosine_similarity(&scaled, &vb).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn neighbors_sorted_and_match_brute_force(
            rows in prop::collection::vec(finite_vec(3), 1..30),
            q in finite_vec(3),
            m in 1usize..10,
        ) {
            let raw: Vec<(String, Vec<f64>)> = rows.into_iter().enumerate().map(|(i, v)| (format!("{i:03}"), v)).collect();
            let pool = SampleSet::new(raw.iter().map(|(id, v)| SampleRecord::new(id.clone(), lv(v), 1.0, Pool::Unlabeled).unwrap()).collect()).unwrap();
            let got = nearest_neighbors(&lv(&q), &pool, m, None).unwrap();
            prop_assert_eq!(got.len(), m.min(raw.len()));
            prop_assert!(got.windows(2).all(|w| w[0].similarity >= w[1].similarity));
            let want = brute_force(&q, &raw, m);
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g.similarity - w.1).abs() < 1e-12);
            }
        }

        #[test]
        fn save_load_round_trip(rows in prop::collection::vec((finite_vec(4), 1e-3f64..1e3), 1..20), jsonl in any::<bool>()) {
            let format = if jsonl { Format::Jsonl } else { Format::Csv };
            let set = SampleSet::new(rows.iter().enumerate().map(|(i, (z, s))| SampleRecord::new(format!("id{i}"), lv(z), *s, Pool::Labeled).unwrap()).collect()).unwrap();
            let mut first = Vec::new();
            write_samples(&set, &mut first, format).unwrap();
            let back = read_samples(first.as_slice(), format, Pool::Labeled).unwrap();
            prop_assert_eq!(&back, &set);
            let mut second = Vec::new();
            write_samples(&back, &mut second, format).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
