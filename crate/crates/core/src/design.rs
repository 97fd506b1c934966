//! Design sets: the distinct observation sites and their pairwise distances.

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::real::{Dd, Real};

/// `n` distinct points of `R^r` together with their distance matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignSet {
    points: Vec<Vec<f64>>,
    r: usize,
    distances: DMatrix<f64>,
}

impl DesignSet {
    /// Validates dimensions, finiteness and pairwise distinctness.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Design("empty design".into()));
        }
        let r = points[0].len();
        if r == 0 {
            return Err(Error::Design("points must have at least one coordinate".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != r {
                return Err(Error::Design(format!("point {i} has {} coordinates, expected {r}", p.len())));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Design(format!("point {i} has a non-finite coordinate")));
            }
        }
        let mut distances = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = sq_distance::<f64>(&points[i], &points[j]).sqrt();
                if d == 0.0 {
                    return Err(Error::Design(format!("points {i} and {j} coincide")));
                }
                distances[(i, j)] = d;
                distances[(j, i)] = d;
            }
        }
        Ok(DesignSet { points, r, distances })
    }

    /// One-dimensional design from abscissae.
    pub fn from_1d(xs: &[f64]) -> Result<Self> {
        Self::new(xs.iter().map(|&x| vec![x]).collect())
    }

    /// Reads `n` rows of `r` numeric columns. A first row that does not parse is taken as a header.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let rows = read_numeric_rows(reader)?;
        Self::new(rows)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Input(format!("cannot open design file {}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[(i, j)]
    }

    pub fn distances(&self) -> &DMatrix<f64> {
        &self.distances
    }

    /// Squared distance in double-double, exact up to the final rounding of the sum.
    pub(crate) fn sq_distance_dd(&self, i: usize, j: usize) -> Dd {
        sq_distance::<Dd>(&self.points[i], &self.points[j])
    }

    /// Off-diagonal distances `d(i, j)` for `i < j`.
    pub fn pair_distances(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(self.distances[(i, j)]);
            }
        }
        out
    }

    /// Median pairwise distance; the natural unit for θ. Zero for a single point.
    pub fn median_distance(&self) -> f64 {
        let mut d = self.pair_distances();
        if d.is_empty() {
            return 0.0;
        }
        d.sort_by(f64::total_cmp);
        let m = d.len();
        if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) }
    }

    pub fn max_distance(&self) -> f64 {
        self.pair_distances().into_iter().fold(0.0, f64::max)
    }

    pub fn min_distance(&self) -> f64 {
        self.pair_distances().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// The same design with every coordinate multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.points.iter().map(|p| p.iter().map(|x| x * s).collect()).collect())
    }
}

pub(crate) fn sq_distance<T: Real>(a: &[f64], b: &[f64]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = T::from_f64(x) - T::from_f64(y);
            d * d
        })
        .sum()
}

/// Reads an observation vector: one numeric column, header optional.
pub fn read_observations_reader<R: Read>(reader: R) -> Result<Vec<f64>> {
    let rows = read_numeric_rows(reader)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| match row.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Input(format!("observation row {} has {} columns, expected 1", i + 1, row.len()))),
        })
        .collect()
}

pub fn read_observations(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Input(format!("cannot open observation file {}: {e}", path.display())))?;
    read_observations_reader(file)
}

fn read_numeric_rows<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(format!("csv: {e}")))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Input(format!("row {} has a non-finite value", line + 1)));
                }
                rows.push(v)
            }
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Input(format!("row {}: {e}", line + 1))),
        }
    }
    if rows.is_empty() {
        return Err(Error::Input("no numeric rows".into()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_duplicates_and_ragged_rows() {
        assert!(matches!(DesignSet::from_1d(&[0.0, 1.0, 0.0]), Err(Error::Design(_))));
        assert!(matches!(DesignSet::new(vec![vec![0.0, 1.0], vec![1.0]]), Err(Error::Design(_))));
        assert!(matches!(DesignSet::new(vec![]), Err(Error::Design(_))));
        assert!(matches!(DesignSet::from_1d(&[0.0, f64::NAN]), Err(Error::Design(_))));
    }

    #[test]
    fn csv_with_and_without_header() {
        let a = DesignSet::from_csv_reader("x,y\n0,0\n1,0\n0,2\n".as_bytes()).unwrap();
        let b = DesignSet::from_csv_reader("0,0\n1,0\n0,2\n".as_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.n(), a.r()), (3, 2));
        assert!((a.distance(1, 2) - 5f64.sqrt()).abs() < 1e-15);
        assert!(DesignSet::from_csv_reader("x\n0\nfoo\n".as_bytes()).is_err());
    }

    #[test]
    fn observations_single_column() {
        let y = read_observations_reader("y\n1.5\n-2\n3e-1\n".as_bytes()).unwrap();
        assert_eq!(y, vec![1.5, -2.0, 0.3]);
        assert!(read_observations_reader("1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn summary_distances() {
        let d = DesignSet::from_1d(&[0.0, 1.0, 3.0]).unwrap();
        assert_eq!(d.median_distance(), 2.0);
        assert_eq!(d.max_distance(), 3.0);
        assert_eq!(d.min_distance(), 1.0);
        assert_eq!(d.scaled(2.0).unwrap().max_distance(), 6.0);
    }

    #[test]
    fn double_double_squared_distance_is_exact_for_small_integers() {
        let d = DesignSet::new(vec![vec![1.0, 2.0], vec![4.0, 6.0]]).unwrap();
        assert_eq!(d.sq_distance_dd(0, 1).to_f64(), 25.0);
    }

    proptest! {
        #[test]
        fn distance_matrix_is_a_metric(pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 3..8)) {
            let Ok(d) = DesignSet::new(pts) else { return Ok(()) };
            let n = d.n();
            for i in 0..n {
                prop_assert_eq!(d.distance(i, i), 0.0);
                for j in 0..n {
                    prop_assert_eq!(d.distance(i, j), d.distance(j, i));
                    for k in 0..n {
                        prop_assert!(d.distance(i, k) <= d.distance(i, j) + d.distance(j, k) + 1e-12);
                    }
                }
            }
        }
    }
}
