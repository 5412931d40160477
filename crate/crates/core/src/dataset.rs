//! User-base ingestion: IDX image/label files, delimited matrix files, and
//! stratified subsampling.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Read, Write};

use flate2::read::GzDecoder;
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Ground-truth class tags paired with a user base (simulation only).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(pub Vec<u8>);

impl LabelVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }
}

/// Users with their feature vectors and, in simulations, their true class.
#[derive(Debug, Clone, PartialEq)]
pub struct UserBase {
    ids: Vec<u64>,
    features: Matrix,
    labels: Option<Vec<u8>>,
}

impl UserBase {
    /// Validates and assembles a user base with at least one user and one feature.
    pub fn new(ids: Vec<u64>, features: Matrix, labels: Option<Vec<u8>>) -> Result<Self> {
        if features.rows() == 0 || features.cols() == 0 {
            return Err(Error::invalid("user base needs N >= 1 and d >= 1"));
        }
        Self::checked(ids, features, labels)
    }

    /// A user base with no users, useful as the identity for [`merge_train_test`].
    pub fn empty(dim: usize) -> Self {
        UserBase {
            ids: Vec::new(),
            features: Matrix::zeros(0, dim),
            labels: None,
        }
    }

    fn checked(ids: Vec<u64>, features: Matrix, labels: Option<Vec<u8>>) -> Result<Self> {
        if ids.len() != features.rows() {
            return Err(Error::Dimension {
                expected: features.rows(),
                actual: ids.len(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != ids.len() {
                return Err(Error::Dimension {
                    expected: ids.len(),
                    actual: l.len(),
                });
            }
        }
        if !features.all_finite() {
            return Err(Error::invalid("features contain non-finite values"));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::invalid(format!("duplicate user id {dup}")));
        }
        Ok(UserBase {
            ids,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Attaches labels parsed from a separate file.
    pub fn with_labels(self, labels: LabelVector) -> Result<Self> {
        Self::checked(self.ids, self.features, Some(labels.0))
    }

    /// Row positions grouped by class tag, in ascending row order.
    pub fn class_members(&self) -> Result<BTreeMap<u8, Vec<usize>>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("user base has no labels"))?;
        let mut groups: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (row, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(row);
        }
        Ok(groups)
    }

    /// Keeps the given rows in the given order.
    pub fn select(&self, rows: &[usize]) -> UserBase {
        UserBase {
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            features: self.features.select_rows(rows),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
        }
    }
}

/// Returns the payload, inflating it first if it carries the gzip magic.
pub fn maybe_decompress(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[..2] == GZIP_MAGIC {
        let mut out = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let word = bytes.get(at..at + 4).ok_or(Error::Length {
        expected: at + 4,
        actual: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([word[0], word[1], word[2], word[3]]))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let actual = be_u32(bytes, 0)?;
    if actual != expected {
        return Err(Error::Magic { expected, actual });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, payload: usize) -> Result<()> {
    let expected = header + payload;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Parses an IDX3 image file (optionally gzipped) into a user base.
///
/// Pixels are scaled to `[0, 1]` by dividing by 255, and ids are assigned
/// `0..N` in file order.
pub fn parse_idx_images(bytes: &[u8]) -> Result<UserBase> {
    let bytes = maybe_decompress(bytes)?;
    check_magic(&bytes, IDX_IMAGES_MAGIC)?;
    let count = be_u32(&bytes, 4)? as usize;
    let rows = be_u32(&bytes, 8)? as usize;
    let cols = be_u32(&bytes, 12)? as usize;
    let dim = rows * cols;
    check_payload(&bytes, 16, count * dim)?;
    let data = bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    let features = Matrix::from_vec(count, dim, data)?;
    let ids = (0..count as u64).collect();
    if count == 0 {
        return Ok(UserBase::empty(dim));
    }
    UserBase::new(ids, features, None)
}

/// Parses an IDX1 label file (optionally gzipped).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<LabelVector> {
    let bytes = maybe_decompress(bytes)?;
    check_magic(&bytes, IDX_LABELS_MAGIC)?;
    let count = be_u32(&bytes, 4)? as usize;
    check_payload(&bytes, 8, count)?;
    Ok(LabelVector(bytes[8..].to_vec()))
}

/// Encodes images as an uncompressed IDX3 file. Values are rounded from `[0, 1]` back to bytes.
pub fn encode_idx_images(base: &UserBase, rows: u32, cols: u32) -> Result<Vec<u8>> {
    if (rows * cols) as usize != base.dim() {
        return Err(Error::Dimension {
            expected: base.dim(),
            actual: (rows * cols) as usize,
        });
    }
    let mut out = Vec::with_capacity(16 + base.len() * base.dim());
    for word in [IDX_IMAGES_MAGIC, base.len() as u32, rows, cols] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend(
        base.features()
            .as_slice()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Concatenates a train and a test split, offsetting test ids by the train size.
pub fn merge_train_test(train: &UserBase, test: &UserBase) -> Result<UserBase> {
    if test.is_empty() {
        return Ok(train.clone());
    }
    if train.is_empty() {
        return Ok(test.clone());
    }
    if train.dim() != test.dim() {
        return Err(Error::Dimension {
            expected: train.dim(),
            actual: test.dim(),
        });
    }
    let offset = train.len() as u64;
    let ids = train
        .ids
        .iter()
        .copied()
        .chain(test.ids.iter().map(|id| id + offset))
        .collect();
    let features = train.features.vstack(&test.features)?;
    let labels = match (&train.labels, &test.labels) {
        (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
        (None, None) => None,
        _ => return Err(Error::invalid("only one of the splits carries labels")),
    };
    UserBase::checked(ids, features, labels)
}

/// Draws exactly `per_class` members of every class without replacement.
///
/// Output rows keep their original relative order and ids.
pub fn stratified_subsample(base: &UserBase, per_class: usize, rng_seed: u64) -> Result<UserBase> {
    if per_class == 0 {
        return Err(Error::invalid("per_class must be positive"));
    }
    let groups = base.class_members()?;
    let mut keep = Vec::with_capacity(groups.len() * per_class);
    for (&class, members) in &groups {
        if members.len() < per_class {
            return Err(Error::Capacity {
                class,
                available: members.len(),
                requested: per_class,
            });
        }
        let mut rng = rng::stream(rng_seed, &[u64::from(class)]);
        keep.extend(
            sample(&mut rng, members.len(), per_class)
                .into_iter()
                .map(|i| members[i]),
        );
    }
    keep.sort_unstable();
    Ok(base.select(&keep))
}

/// Ids, coordinates and optional labels as stored in a delimited matrix file.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTable {
    pub ids: Vec<u64>,
    pub matrix: Matrix,
    pub labels: Option<Vec<u8>>,
}

impl MatrixTable {
    pub fn into_user_base(self) -> Result<UserBase> {
        UserBase::new(self.ids, self.matrix, self.labels)
    }
}

/// Formats a value with 17 significant digits, which round-trips exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `id,c0,...,c{d-1}[,label]` rows.
pub fn write_matrix_csv<W: Write>(
    mut out: W,
    ids: &[u64],
    matrix: &Matrix,
    labels: Option<&[u8]>,
) -> Result<()> {
    if ids.len() != matrix.rows() {
        return Err(Error::Dimension {
            expected: matrix.rows(),
            actual: ids.len(),
        });
    }
    if let Some(l) = labels {
        if l.len() != ids.len() {
            return Err(Error::Dimension {
                expected: ids.len(),
                actual: l.len(),
            });
        }
    }
    let mut header = String::from("id");
    for c in 0..matrix.cols() {
        header.push_str(&format!(",c{c}"));
    }
    if labels.is_some() {
        header.push_str(",label");
    }
    writeln!(out, "{header}")?;
    let mut line = String::new();
    for (i, id) in ids.iter().enumerate() {
        line.clear();
        line.push_str(&id.to_string());
        for v in matrix.row(i) {
            line.push(',');
            line.push_str(&format_f64(*v));
        }
        if let Some(l) = labels {
            line.push(',');
            line.push_str(&l[i].to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads a file produced by [`write_matrix_csv`].
pub fn read_matrix_csv<R: BufRead>(input: R) -> Result<MatrixTable> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })??;
    let fields: Vec<&str> = header.trim_end().split(',').collect();
    let has_label = fields.last() == Some(&"label");
    let ncoord = fields.len() - 1 - usize::from(has_label);
    let header_ok = fields[0] == "id"
        && ncoord >= 1
        && (0..ncoord).all(|c| fields[1 + c] == format!("c{c}"));
    if !header_ok {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected header {header:?}"),
        });
    }
    let width = fields.len();

    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut labels = has_label.then(Vec::new);
    let mut seen = HashSet::new();
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: lineno, msg };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(parse_err(format!(
                "expected {width} fields, found {}",
                cells.len()
            )));
        }
        let id: u64 = cells[0]
            .parse()
            .map_err(|_| parse_err(format!("bad id {:?}", cells[0])))?;
        if !seen.insert(id) {
            return Err(parse_err(format!("duplicate id {id}")));
        }
        ids.push(id);
        for cell in &cells[1..=ncoord] {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(format!("bad number {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value {cell:?}")));
            }
            data.push(v);
        }
        if let Some(l) = labels.as_mut() {
            let cell = cells[width - 1];
            l.push(
                cell.parse()
                    .map_err(|_| parse_err(format!("bad label {cell:?}")))?,
            );
        }
    }
    let matrix = Matrix::from_vec(ids.len(), ncoord, data)?;
    Ok(MatrixTable {
        ids,
        matrix,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(magic: u32, dims: [u32; 3], payload: &[u8]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn minimal_image_file() {
        let bytes = idx_images(0x803, [2, 2, 2], &[0, 255, 0, 255, 0, 255, 0, 255]);
        let base = parse_idx_images(&bytes).unwrap();
        assert_eq!(base.len(), 2);
        assert_eq!(base.dim(), 4);
        assert_eq!(base.ids(), &[0, 1]);
        assert_eq!(base.features().row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(base.features().row(1), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn wrong_magic_is_reported() {
        let bytes = idx_images(0x801, [2, 2, 2], &[0; 8]);
        match parse_idx_images(&bytes) {
            Err(Error::Magic { expected, actual }) => {
                assert_eq!(expected, 0x803);
                assert_eq!(actual, 0x801);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_images() {
        let bytes = idx_images(0x803, [2, 2, 2], &[0; 7]);
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(Error::Length {
                expected: 24,
                actual: 23
            })
        ));
    }

    #[test]
    fn labels_round_trip_and_truncation() {
        let bytes = encode_idx_labels(&[7, 0, 9]);
        assert_eq!(parse_idx_labels(&bytes).unwrap().0, vec![7, 0, 9]);
        let short = &bytes[..bytes.len() - 1];
        assert!(matches!(parse_idx_labels(short), Err(Error::Length { .. })));
        assert!(matches!(
            parse_idx_labels(&idx_images(0x803, [1, 1, 1], &[0])),
            Err(Error::Magic { .. })
        ));
    }

    #[test]
    fn gzip_is_detected() {
        use flate2::write::GzEncoder;
        let raw = encode_idx_labels(&[1, 2, 3, 4]);
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_idx_labels(&gz).unwrap().0, vec![1, 2, 3, 4]);
    }

    fn small_base(n: usize, d: usize, classes: u8) -> UserBase {
        let data = (0..n * d).map(|v| (v % 17) as f64 / 17.0).collect();
        UserBase::new(
            (0..n as u64).collect(),
            Matrix::from_vec(n, d, data).unwrap(),
            Some((0..n).map(|i| (i % classes as usize) as u8).collect()),
        )
        .unwrap()
    }

    #[test]
    fn merge_offsets_ids() {
        let a = small_base(6, 3, 2);
        let b = small_base(4, 3, 2);
        let m = merge_train_test(&a, &b).unwrap();
        assert_eq!(m.len(), 10);
        assert_eq!(m.ids(), &(0..10).collect::<Vec<_>>()[..]);
        assert_eq!(m.labels().unwrap().len(), 10);
        assert_eq!(merge_train_test(&a, &UserBase::empty(3)).unwrap(), a);
        assert!(matches!(
            merge_train_test(&a, &small_base(4, 2, 2)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn subsample_counts_and_determinism() {
        let base = small_base(60, 2, 3);
        let s = stratified_subsample(&base, 7, 11).unwrap();
        assert_eq!(s.len(), 21);
        let groups = s.class_members().unwrap();
        assert!(groups.values().all(|g| g.len() == 7));
        assert_eq!(s, stratified_subsample(&base, 7, 11).unwrap());
        let full = stratified_subsample(&base, 20, 5).unwrap();
        assert_eq!(full, base);
        assert!(matches!(
            stratified_subsample(&base, 21, 0),
            Err(Error::Capacity { class: 0, .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let m = Matrix::from_rows(&[[0.1, -2.5], [1e-300, 3.0], [std::f64::consts::PI, 7.0]])
            .unwrap();
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &[5, 9, 2], &m, Some(&[1, 0, 1])).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,c0,c1,label\n"));
        let t = read_matrix_csv(&buf[..]).unwrap();
        assert_eq!(t.ids, vec![5, 9, 2]);
        assert_eq!(t.matrix, m);
        assert_eq!(t.labels, Some(vec![1, 0, 1]));
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let nan = "id,c0,c1\n0,1.0,NaN\n";
        assert!(matches!(read_matrix_csv(nan.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let ragged = "id,c0,c1\n0,1.0,2.0\n1,1.0\n";
        assert!(matches!(read_matrix_csv(ragged.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let dup = "id,c0\n0,1.0\n0,2.0\n";
        assert!(read_matrix_csv(dup.as_bytes()).is_err());
        let junk = "id,c0\n0,abc\n";
        assert!(read_matrix_csv(junk.as_bytes()).is_err());
        let header = "idx,c0\n0,1\n";
        assert!(read_matrix_csv(header.as_bytes()).is_err());
    }
}
