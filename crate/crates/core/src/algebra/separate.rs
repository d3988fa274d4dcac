use std::collections::HashMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::nn::{Layer, Mlp};
use crate::{Error, Result};

/// Largest pattern dimension for which cells are enumerated exhaustively.
pub const MAX_ENUMERATION_DIM: usize = 20;

/// Relative slack on the anchor-gap check; `k/K` differences are not exact
/// in binary floating point.
const GAP_TOLERANCE: f64 = 1e-12;

fn guard(d: usize) -> Result<()> {
    if d > MAX_ENUMERATION_DIM {
        Err(Error::EnumerationGuard { d })
    } else {
        Ok(())
    }
}

/// All `2^d` binary patterns in lexicographic order, first coordinate most
/// significant.
pub fn full_cube(d: usize) -> Result<Vec<Vec<u8>>> {
    guard(d)?;
    Ok((0..1usize << d)
        .map(|code| (0..d).map(|j| ((code >> (d - 1 - j)) & 1) as u8).collect())
        .collect())
}

/// Disjoint, nonempty cells `S₁, …, S_K` of a finite pattern set
/// `S ⊆ {0,1}^d`, optionally carrying cell probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionDocument", into = "PartitionDocument")]
pub struct PatternPartition {
    dim: usize,
    cells: Vec<Vec<Vec<u8>>>,
    probabilities: Option<Vec<f64>>,
    lookup: HashMap<Vec<u8>, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionDocument {
    dim: usize,
    cells: Vec<Vec<Vec<u8>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probabilities: Option<Vec<f64>>,
}

impl TryFrom<PartitionDocument> for PatternPartition {
    type Error = Error;

    fn try_from(doc: PartitionDocument) -> Result<Self> {
        let mut partition = PatternPartition::new(doc.dim, doc.cells)?;
        if let Some(p) = doc.probabilities {
            partition = partition.with_probabilities(p)?;
        }
        Ok(partition)
    }
}

impl From<PatternPartition> for PartitionDocument {
    fn from(p: PatternPartition) -> Self {
        Self {
            dim: p.dim,
            cells: p.cells,
            probabilities: p.probabilities,
        }
    }
}

impl PatternPartition {
    pub fn new(dim: usize, cells: Vec<Vec<Vec<u8>>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Partition("pattern dimension must be positive".into()));
        }
        if cells.is_empty() {
            return Err(Error::Partition("no cells".into()));
        }
        let mut lookup = HashMap::new();
        for (k, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::Partition(format!("cell {} is empty", k + 1)));
            }
            for pattern in cell {
                if pattern.len() != dim || pattern.iter().any(|&b| b > 1) {
                    return Err(Error::Partition(format!(
                        "{pattern:?} is not a binary pattern of length {dim}"
                    )));
                }
                if let Some(prev) = lookup.insert(pattern.clone(), k) {
                    return Err(Error::Partition(format!(
                        "pattern {pattern:?} appears in cells {} and {}",
                        prev + 1,
                        k + 1
                    )));
                }
            }
        }
        Ok(Self {
            dim,
            cells,
            probabilities: None,
            lookup,
        })
    }

    /// Groups patterns by a 0-based cell label; cells are ordered by label.
    pub fn from_labels(dim: usize, labelled: impl IntoIterator<Item = (Vec<u8>, usize)>) -> Result<Self> {
        let mut cells: Vec<Vec<Vec<u8>>> = Vec::new();
        for (pattern, label) in labelled {
            if cells.len() <= label {
                cells.resize_with(label + 1, Vec::new);
            }
            cells[label].push(pattern);
        }
        Self::new(dim, cells)
    }

    pub fn with_probabilities(mut self, probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.len() != self.cells.len() {
            return Err(Error::Partition(format!(
                "{} probabilities for {} cells",
                probabilities.len(),
                self.cells.len()
            )));
        }
        if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Partition("probabilities must lie in [0, 1]".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Partition(format!("probabilities sum to {total}")));
        }
        self.probabilities = Some(probabilities);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Vec<Vec<u8>>] {
        &self.cells
    }

    pub fn probabilities(&self) -> Option<&[f64]> {
        self.probabilities.as_deref()
    }

    /// 0-based cell containing `pattern`, if it belongs to `S`.
    pub fn cell_of(&self, pattern: &[u8]) -> Option<usize> {
        self.lookup.get(pattern).copied()
    }

    /// Every pattern of `S` with its 0-based cell, in cell order.
    pub fn patterns(&self) -> impl Iterator<Item = (&[u8], usize)> {
        self.cells
            .iter()
            .enumerate()
            .flat_map(|(k, cell)| cell.iter().map(move |p| (p.as_slice(), k)))
    }

    pub fn len(&self) -> usize {
        self.lookup.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lookup.is_empty()
    }
}

/// A network `f` with anchors `v_k` and margin `ε` such that
/// `‖f(ω) − v_k‖_∞ ≤ ε/2` on `S_k` and `‖v_k − v_k'‖_∞ ≥ 2ε` for `k ≠ k'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparationCertificate {
    pub network: Mlp,
    pub anchors: Vec<Vec<f64>>,
    pub margin: f64,
}

impl SeparationCertificate {
    /// Re-checks both certificate inequalities over every pattern of the
    /// partition, one network evaluation per pattern.
    pub fn verify(&self, partition: &PatternPartition) -> Result<()> {
        guard(partition.dim())?;
        let eps = self.margin;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::CertificateFailed(format!("margin {eps} is not positive")));
        }
        if self.anchors.len() != partition.cell_count() {
            return Err(Error::CertificateFailed(format!(
                "{} anchors for {} cells",
                self.anchors.len(),
                partition.cell_count()
            )));
        }
        let m = self.network.output_width();
        if self.network.input_width() != partition.dim() || self.anchors.iter().any(|a| a.len() != m) {
            return Err(Error::CertificateFailed("network or anchor width mismatch".into()));
        }
        for (k, a) in self.anchors.iter().enumerate() {
            for (k2, b) in self.anchors.iter().enumerate().skip(k + 1) {
                let gap = sup_distance(a, b);
                if gap < 2.0 * eps * (1.0 - GAP_TOLERANCE) {
                    return Err(Error::CertificateFailed(format!(
                        "anchors {} and {} are {gap} apart, need {}",
                        k + 1,
                        k2 + 1,
                        2.0 * eps
                    )));
                }
            }
        }
        for (pattern, k) in partition.patterns() {
            let x: Vec<f64> = pattern.iter().map(|&b| f64::from(b)).collect();
            let y = self.network.forward(&x)?;
            let dist = sup_distance(&y, &self.anchors[k]);
            if dist > eps / 2.0 {
                return Err(Error::CertificateFailed(format!(
                    "pattern {pattern:?} of cell {} maps to {y:?}, {dist} from its anchor",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Separation through the integer code `x = Σ_{j∈J} 2^{pos(j)} ω_j` of the
/// coordinates in `coords` (0-based, in the given order).
///
/// The first hidden layer holds unit steps `σ(x − c) − σ(x − c − 1)` at each
/// code where the cell changes; the second recovers the integer cell index
/// `k` exactly, and the output is `k/K`. Every pattern of a cell therefore
/// maps to the identical value. Anchors are `k/K` with margin `1/(2K)`.
pub fn separate_by_coordinates(partition: &PatternPartition, coords: &[usize]) -> Result<SeparationCertificate> {
    let d = partition.dim();
    guard(d)?;
    let mut seen = vec![false; d];
    for &j in coords {
        if j >= d || std::mem::replace(&mut seen[j], true) {
            return Err(Error::InvalidArgument(format!(
                "coordinate {j} is out of range or repeated for dimension {d}"
            )));
        }
    }
    let code_of = |p: &[u8]| -> u64 {
        coords
            .iter()
            .enumerate()
            .map(|(pos, &j)| u64::from(p[j]) << pos)
            .sum()
    };

    let mut by_code: HashMap<u64, (usize, &[u8])> = HashMap::new();
    for (pattern, k) in partition.patterns() {
        let code = code_of(pattern);
        match by_code.get(&code) {
            Some(&(other, first)) if other != k => {
                return Err(Error::NotCoordinateSeparable {
                    first: first.to_vec(),
                    second: pattern.to_vec(),
                });
            }
            Some(_) => {}
            None => {
                by_code.insert(code, (k, pattern));
            }
        }
    }
    let mut codes: Vec<(u64, usize)> = by_code.into_iter().map(|(c, (k, _))| (c, k + 1)).collect();
    codes.sort_unstable();

    // Steps where consecutive codes change cell: (code, jump in cell index).
    let steps: Vec<(f64, f64)> = codes
        .windows(2)
        .filter(|w| w[0].1 != w[1].1)
        .map(|w| (w[0].0 as f64, w[1].1 as f64 - w[0].1 as f64))
        .collect();
    let base = codes[0].1 as f64;

    let units = (2 * steps.len()).max(1);
    let mut w1 = Array2::zeros((units, d));
    let mut b1 = Array1::zeros(units);
    let mut w2 = Array2::zeros((2, units));
    for (i, &(code, jump)) in steps.iter().enumerate() {
        for (pos, &j) in coords.iter().enumerate() {
            let weight = (1u64 << pos) as f64;
            w1[[2 * i, j]] = weight;
            w1[[2 * i + 1, j]] = weight;
        }
        b1[2 * i] = -code;
        b1[2 * i + 1] = -code - 1.0;
        w2[[0, 2 * i]] = jump;
        w2[[0, 2 * i + 1]] = -jump;
        w2[[1, 2 * i]] = -jump;
        w2[[1, 2 * i + 1]] = jump;
    }
    let k = partition.cell_count() as f64;
    let network = Mlp::from_layers(vec![
        Layer { weight: w1, bias: b1 },
        Layer {
            weight: w2,
            bias: Array1::from(vec![base, -base]),
        },
        Layer {
            weight: Array2::from_shape_vec((1, 2), vec![1.0 / k, -1.0 / k]).expect("two entries"),
            bias: Array1::zeros(1),
        },
    ])?;
    let certificate = SeparationCertificate {
        network,
        anchors: (1..=partition.cell_count()).map(|c| vec![c as f64 / k]).collect(),
        margin: if partition.cell_count() == 1 { 0.5 } else { 1.0 / (2.0 * k) },
    };
    certificate.verify(partition)?;
    Ok(certificate)
}

/// One linear constraint `ω·normal ≤ offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        Self { normal, offset }
    }

    /// `ω·normal − offset`; nonpositive inside the halfspace.
    pub fn excess(&self, pattern: &[u8]) -> f64 {
        self.normal
            .iter()
            .zip(pattern)
            .map(|(v, &w)| v * f64::from(w))
            .sum::<f64>()
            - self.offset
    }
}

/// Separation when each cell is the trace on `S` of an intersection of
/// halfspaces. Output is the 1-based cell index; anchors `k`, margin 1/2.
pub fn separate_by_halfspaces(partition: &PatternPartition, halfspaces: &[Vec<Halfspace>]) -> Result<SeparationCertificate> {
    let d = partition.dim();
    guard(d)?;
    let cells = partition.cell_count();
    if halfspaces.len() != cells {
        return Err(Error::InvalidArgument(format!(
            "{} halfspace lists for {cells} cells",
            halfspaces.len()
        )));
    }
    for (k, list) in halfspaces.iter().enumerate() {
        if list.is_empty() {
            return Err(Error::InvalidArgument(format!("cell {} has no halfspaces", k + 1)));
        }
        if list.iter().any(|h| h.normal.len() != d || !h.offset.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cell {} has a halfspace of the wrong dimension",
                k + 1
            )));
        }
    }

    let mut margin = f64::INFINITY;
    for (pattern, home) in partition.patterns() {
        for (k, list) in halfspaces.iter().enumerate() {
            let worst = list.iter().map(|h| h.excess(pattern)).fold(f64::NEG_INFINITY, f64::max);
            let inside = worst <= 0.0;
            if inside != (k == home) {
                return Err(Error::HalfspaceMismatch {
                    cell: k + 1,
                    pattern: pattern.to_vec(),
                });
            }
            if k != home {
                margin = margin.min(worst);
            }
        }
    }
    if margin == f64::INFINITY {
        margin = 1.0;
    }
    if margin <= 0.0 {
        return Err(Error::NonPositiveMargin(margin));
    }

    let gates: usize = halfspaces.iter().map(Vec::len).sum();
    let mut w1 = Array2::zeros((2 * gates, d));
    let mut b1 = Array1::zeros(2 * gates);
    let mut w2 = Array2::zeros((cells, 2 * gates));
    let mut b2 = Array1::zeros(cells);
    let mut row = 0;
    for (k, list) in halfspaces.iter().enumerate() {
        for h in list {
            for (j, v) in h.normal.iter().enumerate() {
                w1[[row, j]] = -v / margin;
                w1[[row + 1, j]] = -v / margin;
            }
            b1[row] = h.offset / margin + 1.0;
            b1[row + 1] = h.offset / margin;
            w2[[k, row]] = 1.0;
            w2[[k, row + 1]] = -1.0;
            row += 2;
        }
        b2[k] = 1.0 - list.len() as f64;
    }
    let w3 = Array2::from_shape_fn((1, cells), |(_, k)| (k + 1) as f64);
    let network = Mlp::from_layers(vec![
        Layer { weight: w1, bias: b1 },
        Layer { weight: w2, bias: b2 },
        Layer {
            weight: w3,
            bias: Array1::zeros(1),
        },
    ])?;
    let certificate = SeparationCertificate {
        network,
        anchors: (1..=cells).map(|k| vec![k as f64]).collect(),
        margin: 0.5,
    };
    certificate.verify(partition)?;
    Ok(certificate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_one(d: usize) -> PatternPartition {
        let cube = full_cube(d).unwrap();
        PatternPartition::from_labels(d, cube.into_iter().map(|p| {
            let label = if p[0] == 1 { 0 } else { 1 };
            (p, label)
        }))
        .unwrap()
    }

    #[test]
    fn cube_enumeration() {
        let cube = full_cube(3).unwrap();
        assert_eq!(cube.len(), 8);
        assert_eq!(cube[1], vec![0, 0, 1]);
        assert!(matches!(full_cube(21), Err(Error::EnumerationGuard { d: 21 })));
    }

    #[test]
    fn partition_validation() {
        assert!(PatternPartition::new(2, vec![vec![vec![0, 1]], vec![vec![0, 1]]]).is_err());
        assert!(PatternPartition::new(2, vec![vec![vec![0, 2]]]).is_err());
        assert!(PatternPartition::new(2, vec![vec![]]).is_err());
        assert!(PatternPartition::new(2, vec![vec![vec![0]]]).is_err());
        let p = PatternPartition::new(1, vec![vec![vec![0]], vec![vec![1]]]).unwrap();
        assert!(p.clone().with_probabilities(vec![0.5, 0.6]).is_err());
        assert!(p.clone().with_probabilities(vec![1.0]).is_err());
        assert!(p.with_probabilities(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn example_one_by_coordinates() {
        let partition = example_one(3);
        let cert = separate_by_coordinates(&partition, &[0]).unwrap();
        assert_eq!(cert.margin, 0.25);
        assert_eq!(cert.network.forward(&[1.0, 0.0, 1.0]).unwrap(), vec![0.5]);
        assert_eq!(cert.network.forward(&[0.0, 1.0, 1.0]).unwrap(), vec![1.0]);
        assert_eq!(cert.network.architecture().depth(), 2);
    }

    #[test]
    fn single_cell_gives_constant() {
        let partition = PatternPartition::new(2, vec![full_cube(2).unwrap()]).unwrap();
        let cert = separate_by_coordinates(&partition, &[]).unwrap();
        for p in full_cube(2).unwrap() {
            let x: Vec<f64> = p.iter().map(|&b| f64::from(b)).collect();
            assert_eq!(cert.network.forward(&x).unwrap(), vec![1.0]);
        }
        let vacuous = vec![vec![Halfspace::new(vec![0.0, 0.0], 0.0)]];
        let cert = separate_by_halfspaces(&partition, &vacuous).unwrap();
        assert_eq!(cert.network.forward(&[1.0, 1.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn non_separable_names_patterns() {
        let partition = PatternPartition::new(2, vec![vec![vec![0, 0]], vec![vec![0, 1]]]).unwrap();
        match separate_by_coordinates(&partition, &[0]) {
            Err(Error::NotCoordinateSeparable { first, second }) => {
                assert_eq!(first, vec![0, 0]);
                assert_eq!(second, vec![0, 1]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(separate_by_coordinates(&partition, &[1]).is_ok());
        assert!(separate_by_coordinates(&partition, &[1, 1]).is_err());
    }

    #[test]
    fn example_one_by_halfspaces() {
        let partition = example_one(4);
        let halfspaces = vec![
            vec![Halfspace::new(vec![-1.0, 0.0, 0.0, 0.0], -1.0)],
            vec![Halfspace::new(vec![1.0, 0.0, 0.0, 0.0], 0.0)],
        ];
        let cert = separate_by_halfspaces(&partition, &halfspaces).unwrap();
        assert_eq!(cert.network.architecture().widths(), &[4, 4, 2, 1]);
        for p in full_cube(4).unwrap() {
            let x: Vec<f64> = p.iter().map(|&b| f64::from(b)).collect();
            let want = if p[0] == 1 { 1.0 } else { 2.0 };
            assert_eq!(cert.network.forward(&x).unwrap(), vec![want]);
        }
    }

    #[test]
    fn halfspace_mismatch_detected() {
        let partition = example_one(2);
        let wrong = vec![
            vec![Halfspace::new(vec![0.0, -1.0], -1.0)],
            vec![Halfspace::new(vec![1.0, 0.0], 0.0)],
        ];
        assert!(matches!(
            separate_by_halfspaces(&partition, &wrong),
            Err(Error::HalfspaceMismatch { .. })
        ));
    }

    #[test]
    fn tampered_certificate_fails() {
        let partition = example_one(3);
        let mut cert = separate_by_coordinates(&partition, &[0]).unwrap();
        cert.anchors.swap(0, 1);
        assert!(matches!(cert.verify(&partition), Err(Error::CertificateFailed(_))));
        let mut cert = separate_by_coordinates(&partition, &[0]).unwrap();
        cert.margin = 0.3;
        assert!(cert.verify(&partition).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let partition = example_one(3).with_probabilities(vec![0.5, 0.5]).unwrap();
        let text = serde_json::to_string(&partition).unwrap();
        let back: PatternPartition = serde_json::from_str(&text).unwrap();
        assert_eq!(back, partition);
        let cert = separate_by_coordinates(&partition, &[0]).unwrap();
        let text = serde_json::to_string(&cert).unwrap();
        let back: SeparationCertificate = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cert);
        back.verify(&partition).unwrap();
    }
}
