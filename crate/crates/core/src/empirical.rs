//! Samples, empirical distribution functions, the two-sample Kolmogorov
//! distance and its half-space extension over projection directions.

use std::f64::consts::PI;
use std::fmt;
use std::io;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// `n` observations in `R^d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl Sample {
    pub fn new(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(domain(
                "a sample needs at least one observation of dimension >= 1",
            ));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                left: data.len(),
                right: n * d,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(domain("sample entries must be finite"));
        }
        Ok(Self { data, n, d })
    }

    /// A one-dimensional sample.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, n, 1)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for row in rows {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    left: d,
                    right: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, rows.len(), d)
    }

    pub(crate) fn from_raw_unchecked(data: Vec<f64>, n: usize, d: usize) -> Self {
        debug_assert_eq!(data.len(), n * d);
        Self { data, n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    /// Raw row-major storage. For a 1-D sample this is the value vector.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for r in self.rows() {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }

    /// Shift every column so that its sample mean is exactly `target`
    /// (up to rounding).
    pub fn recentered(&self, target: &[f64]) -> Result<Self> {
        if target.len() != self.d {
            return Err(Error::DimensionMismatch {
                left: self.d,
                right: target.len(),
            });
        }
        let mean = self.mean();
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.d) {
            for j in 0..row.len() {
                row[j] += target[j] - mean[j];
            }
        }
        Sample::new(data, self.n, self.d)
    }

    /// Headerless CSV, one observation per line.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(writer);
        for r in self.rows() {
            w.write_record(r.iter().map(|v| v.to_string()))
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads CSV rows of numbers. A first line that does not parse as numbers
    /// is treated as a header and skipped.
    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let parsed: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if i == 0 => continue,
                Err(e) => return Err(Error::Parse(format!("line {}: {e}", i + 1))),
            }
        }
        Sample::from_rows(&rows)
    }
}

/// Right-continuous step function `t -> #{values <= t} / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(domain("empirical cdf of an empty sample"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(domain("empirical cdf values must be finite"));
        }
        values.sort_unstable_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn from_sample(sample: &Sample) -> Result<Self> {
        if sample.dim() != 1 {
            return Err(Error::DimensionMismatch {
                left: sample.dim(),
                right: 1,
            });
        }
        Self::new(sample.as_slice().to_vec())
    }

    /// Caller guarantees finite, nonempty input.
    pub(crate) fn from_finite(mut values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        values.sort_unstable_by(f64::total_cmp);
        Self { sorted: values }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.count_le(t) as f64 / self.sorted.len() as f64
    }

    fn count_le(&self, t: f64) -> usize {
        self.sorted.partition_point(|&v| v <= t)
    }

    /// Two-sample Kolmogorov distance `sup_t |F(t) - G(t)|`.
    ///
    /// Single merge pass over both sorted vectors: at each jump point every
    /// value equal to it is consumed from both sides before the gap is read.
    /// The gap is kept as the integer `|i*m - j*n|` and divided once, so
    /// equal-size inputs return exactly `k as f64 / n as f64`.
    pub fn distance(&self, other: &EmpiricalCdf) -> f64 {
        let (a, b) = (&self.sorted, &other.sorted);
        let (n, m) = (a.len(), b.len());
        let (mut i, mut j) = (0usize, 0usize);
        let mut best: u128 = 0;
        while i < n && j < m {
            let t = if a[i] <= b[j] { a[i] } else { b[j] };
            while i < n && a[i] <= t {
                i += 1;
            }
            while j < m && b[j] <= t {
                j += 1;
            }
            let lhs = i as u128 * m as u128;
            let rhs = j as u128 * n as u128;
            best = best.max(lhs.abs_diff(rhs));
        }
        best as f64 / (n as u128 * m as u128) as f64
    }

    /// One-sample distance to a continuous distribution function.
    pub fn distance_to<F: Fn(f64) -> f64>(&self, cdf: F) -> f64 {
        let n = self.sorted.len() as f64;
        let mut best = 0.0f64;
        let mut i = 0;
        while i < self.sorted.len() {
            let t = self.sorted[i];
            let below = i as f64 / n;
            while i < self.sorted.len() && self.sorted[i] <= t {
                i += 1;
            }
            let at = i as f64 / n;
            let f = cdf(t);
            best = best.max((at - f).abs()).max((f - below).abs());
        }
        best
    }
}

/// Two-sample Kolmogorov distance between one-dimensional samples.
pub fn ks_distance(x: &Sample, y: &Sample) -> Result<f64> {
    let fx = EmpiricalCdf::from_sample(x)?;
    let fy = EmpiricalCdf::from_sample(y)?;
    Ok(fx.distance(&fy))
}

/// A unit vector in `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction(Vec<f64>);

impl Direction {
    /// Normalizes `v`; fails on a zero or non-finite vector.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(domain("direction must be a finite nonzero vector"));
        }
        Ok(Self(v.into_iter().map(|c| c / norm).collect()))
    }

    /// `(cos phi, sin phi)`.
    pub fn from_angle(phi: f64) -> Self {
        Self(vec![phi.cos(), phi.sin()])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|c| -c).collect())
    }

    fn dot(&self, row: &[f64]) -> f64 {
        self.0.iter().zip(row).map(|(a, y)| a * y).sum()
    }
}

/// Inner products `<a, X_i>` in row order.
pub fn project(x: &Sample, a: &Direction) -> Result<Sample> {
    if a.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            left: x.dim(),
            right: a.dim(),
        });
    }
    Ok(Sample::from_raw_unchecked(project_values(x, a), x.len(), 1))
}

fn project_values(x: &Sample, a: &Direction) -> Vec<f64> {
    x.rows().map(|r| a.dot(r)).collect()
}

/// Empirical measure of the half-space `{y : <a, y> <= t}`, counted row by row.
pub fn half_space_measure(x: &Sample, a: &Direction, t: f64) -> Result<f64> {
    if a.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            left: x.dim(),
            right: a.dim(),
        });
    }
    let inside = x.rows().filter(|r| a.dot(r) <= t).count();
    Ok(inside as f64 / x.len() as f64)
}

/// `k` random directions. In the plane the angle is uniform on `[0, pi)`;
/// above that, normalized standard Gaussian vectors (uniform on the sphere).
pub fn sample_directions<R: Rng + ?Sized>(
    d: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Direction>> {
    if d < 2 {
        return Err(domain(
            "projection directions need d >= 2; use the 1-D Kolmogorov matcher",
        ));
    }
    if k == 0 {
        return Err(domain("at least one direction is required"));
    }
    if d == 2 {
        return Ok((0..k)
            .map(|_| Direction::from_angle(rng.random::<f64>() * PI))
            .collect());
    }
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(dir) = Direction::new(v) {
            out.push(dir);
        }
    }
    Ok(out)
}

/// Deterministic planar directions at angles `i * pi / k`.
pub fn equispaced_directions(k: usize) -> Result<Vec<Direction>> {
    if k == 0 {
        return Err(domain("at least one direction is required"));
    }
    Ok((0..k)
        .map(|i| Direction::from_angle(i as f64 * PI / k as f64))
        .collect())
}

/// Maximum over `directions` of the Kolmogorov distance between projections.
pub fn projected_tv(x: &Sample, y: &Sample, directions: &[Direction]) -> Result<f64> {
    check_directions(x.dim(), directions)?;
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            left: x.dim(),
            right: y.dim(),
        });
    }
    Ok(directions
        .iter()
        .map(|a| {
            EmpiricalCdf::from_finite(project_values(x, a))
                .distance(&EmpiricalCdf::from_finite(project_values(y, a)))
        })
        .fold(0.0, f64::max))
}

fn check_directions(d: usize, directions: &[Direction]) -> Result<()> {
    if directions.is_empty() {
        return Err(domain("empty direction list"));
    }
    if let Some(a) = directions.iter().find(|a| a.dim() != d) {
        return Err(Error::DimensionMismatch {
            left: d,
            right: a.dim(),
        });
    }
    Ok(())
}

/// How a pseudo-sample is compared with the observed one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Matcher {
    /// Kolmogorov distance between empirical cdfs; 1-D only.
    Ks1d,
    /// Half-space distance over a fixed set of directions.
    ProjectedTv { directions: Vec<Direction> },
    /// Euclidean distance of the pseudo-sample mean from a fixed reference
    /// value; the observed sample itself is not consulted.
    ParametricAbs { reference: Vec<f64> },
}

impl Matcher {
    pub fn check_dim(&self, d: usize) -> Result<()> {
        match self {
            Matcher::Ks1d if d != 1 => Err(Error::DimensionMismatch { left: d, right: 1 }),
            Matcher::Ks1d => Ok(()),
            Matcher::ProjectedTv { directions } => check_directions(d, directions),
            Matcher::ParametricAbs { reference } if reference.len() != d => {
                Err(Error::DimensionMismatch {
                    left: d,
                    right: reference.len(),
                })
            }
            Matcher::ParametricAbs { .. } => Ok(()),
        }
    }

    /// Distance between `x` (reference side) and `y`.
    pub fn distance(&self, x: &Sample, y: &Sample) -> Result<f64> {
        self.prepare(x)?.distance(y)
    }

    /// Precomputes everything that only depends on the observed sample.
    pub fn prepare(&self, x: &Sample) -> Result<PreparedMatcher> {
        self.check_dim(x.dim())?;
        let reference = match self {
            Matcher::Ks1d => Reference::Ecdf(EmpiricalCdf::from_sample(x)?),
            Matcher::ProjectedTv { directions } => Reference::Projected(
                directions
                    .iter()
                    .map(|a| (a.clone(), EmpiricalCdf::from_finite(project_values(x, a))))
                    .collect(),
            ),
            Matcher::ParametricAbs { reference } => Reference::Mean(reference.clone()),
        };
        Ok(PreparedMatcher {
            d: x.dim(),
            reference,
        })
    }
}

impl fmt::Display for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Matcher::Ks1d => write!(f, "ks1d"),
            Matcher::ProjectedTv { directions } => {
                write!(f, "projected-tv(k={})", directions.len())
            }
            Matcher::ParametricAbs { reference } => write!(f, "parametric-abs(ref={reference:?})"),
        }
    }
}

#[derive(Clone, Debug)]
enum Reference {
    Ecdf(EmpiricalCdf),
    Projected(Vec<(Direction, EmpiricalCdf)>),
    Mean(Vec<f64>),
}

/// A matcher bound to one observed sample.
#[derive(Clone, Debug)]
pub struct PreparedMatcher {
    d: usize,
    reference: Reference,
}

impl PreparedMatcher {
    pub fn distance(&self, y: &Sample) -> Result<f64> {
        if y.dim() != self.d {
            return Err(Error::DimensionMismatch {
                left: self.d,
                right: y.dim(),
            });
        }
        Ok(match &self.reference {
            Reference::Ecdf(fx) => fx.distance(&EmpiricalCdf::from_finite(y.as_slice().to_vec())),
            Reference::Projected(dirs) => dirs
                .iter()
                .map(|(a, fx)| fx.distance(&EmpiricalCdf::from_finite(project_values(y, a))))
                .fold(0.0, f64::max),
            Reference::Mean(r) => y
                .mean()
                .iter()
                .zip(r)
                .map(|(m, r)| (m - r) * (m - r))
                .sum::<f64>()
                .sqrt(),
        })
    }
}

/// A matcher together with its tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    pub matcher: Matcher,
    pub epsilon: f64,
}

impl MatchSpec {
    pub fn new(matcher: Matcher, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(domain(format!(
                "tolerance must be finite and >= 0, got {epsilon}"
            )));
        }
        if let Matcher::ProjectedTv { directions } = &matcher {
            if directions.is_empty() {
                return Err(domain("projected matcher needs at least one direction"));
            }
        }
        Ok(Self { matcher, epsilon })
    }

    /// Closed inequality: `distance <= epsilon`.
    pub fn accepts(&self, distance: f64) -> bool {
        distance <= self.epsilon
    }
}

/// Whether `y` matches `x` under `spec`.
pub fn is_match(x: &Sample, y: &Sample, spec: &MatchSpec) -> Result<bool> {
    Ok(spec.accepts(spec.matcher.distance(x, y)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s1(v: &[f64]) -> Sample {
        Sample::from_values(v.to_vec()).unwrap()
    }

    #[test]
    fn ecdf_examples() {
        let f = EmpiricalCdf::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.eval(2.0), 2.0 / 3.0);
        assert_eq!(f.eval(0.5), 0.0);
        let ties = EmpiricalCdf::new(vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(ties.eval(1.0), 1.0);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(
            ks_distance(&s1(&[1.0, 2.0, 3.0]), &s1(&[3.0, 1.0, 2.0])).unwrap(),
            0.0
        );
        assert_eq!(
            ks_distance(&s1(&[0.0, 1.0]), &s1(&[0.5, 1.0])).unwrap(),
            0.5
        );
    }

    #[test]
    fn ks_ties_across_samples() {
        // both samples jump at 1; the gap must be read after both jumps
        assert_eq!(
            ks_distance(&s1(&[1.0, 2.0]), &s1(&[1.0, 1.0])).unwrap(),
            0.5
        );
        assert_eq!(
            ks_distance(&s1(&[1.0, 1.0, 2.0]), &s1(&[1.0, 2.0, 2.0])).unwrap(),
            1.0 / 3.0
        );
    }

    #[test]
    fn ks_rejects_multivariate_and_empty() {
        let x = Sample::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(ks_distance(&x, &x).is_err());
        assert!(EmpiricalCdf::new(vec![]).is_err());
        assert!(Sample::from_values(vec![]).is_err());
    }

    #[test]
    fn projection_examples() {
        let x = Sample::from_rows(&[[3.0, 9.0], [-1.0, 4.0]]).unwrap();
        let e1 = Direction::new(vec![1.0, 0.0]).unwrap();
        let e2 = Direction::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(project(&x, &e1).unwrap().as_slice(), &[3.0, -1.0]);
        assert_eq!(project(&x, &e2).unwrap().as_slice(), &[9.0, 4.0]);
        let diag = Direction::new(vec![1.0, 1.0]).unwrap();
        let one = Sample::from_rows(&[[1.0, 1.0]]).unwrap();
        assert!((project(&one, &diag).unwrap().as_slice()[0] - 2f64.sqrt()).abs() < 1e-15);
        let e3 = Direction::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert!(project(&x, &e3).is_err());
    }

    #[test]
    fn directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dirs = sample_directions(2, 50, &mut rng).unwrap();
        assert_eq!(dirs.len(), 50);
        for a in &dirs {
            let c = a.components();
            assert!((c[0].hypot(c[1]) - 1.0).abs() < 1e-12);
            // angle in [0, pi) means the sine is nonnegative
            assert!(c[1] >= 0.0);
        }
        let eq = equispaced_directions(2).unwrap();
        assert!((eq[0].components()[0] - 1.0).abs() < 1e-15);
        assert!(eq[1].components()[0].abs() < 1e-15);
        assert!((eq[1].components()[1] - 1.0).abs() < 1e-15);
        assert!(sample_directions(1, 3, &mut rng).is_err());
        assert!(sample_directions(3, 0, &mut rng).is_err());
    }

    #[test]
    fn gaussian_directions_are_centred() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dirs = sample_directions(3, 1000, &mut rng).unwrap();
        let mut m = [0.0; 3];
        for a in &dirs {
            let c = a.components();
            assert!((c.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
            for j in 0..3 {
                m[j] += c[j] / 1000.0;
            }
        }
        // each coordinate has variance 1/3; mean norm has sd ~ sqrt(1/1000)
        assert!(m.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.1);
    }

    #[test]
    fn projected_tv_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<[f64; 2]> = (0..20).map(|_| [rng.random(), rng.random()]).collect();
        let other: Vec<[f64; 2]> = (0..20).map(|_| [rng.random(), rng.random()]).collect();
        let x = Sample::from_rows(&rows).unwrap();
        let y = Sample::from_rows(&other).unwrap();
        let mut rev = rows.clone();
        rev.reverse();
        let xr = Sample::from_rows(&rev).unwrap();
        let dirs = sample_directions(2, 10, &mut rng).unwrap();
        assert_eq!(projected_tv(&x, &xr, &dirs).unwrap(), 0.0);

        let e1 = vec![Direction::new(vec![1.0, 0.0]).unwrap()];
        let first = ks_distance(
            &Sample::from_values(x.column(0)).unwrap(),
            &Sample::from_values(y.column(0)).unwrap(),
        )
        .unwrap();
        assert_eq!(projected_tv(&x, &y, &e1).unwrap(), first);

        let small = projected_tv(&x, &y, &dirs[..3]).unwrap();
        let big = projected_tv(&x, &y, &dirs).unwrap();
        assert!(small <= big && big <= 1.0);
        assert!(projected_tv(&x, &y, &[]).is_err());
    }

    #[test]
    fn matching_boundary_is_closed() {
        let x = s1(&[0.0, 1.0]);
        let y = s1(&[0.5, 1.0]);
        let spec = |e| MatchSpec::new(Matcher::Ks1d, e).unwrap();
        assert!(!is_match(&x, &y, &spec(0.49)).unwrap());
        assert!(is_match(&x, &y, &spec(0.5)).unwrap());
        assert!(is_match(&x, &x, &spec(0.0)).unwrap());
        assert!(is_match(&x, &s1(&[100.0, 200.0]), &spec(1.0)).unwrap());
        assert!(MatchSpec::new(Matcher::Ks1d, -1.0).is_err());
    }

    #[test]
    fn parametric_matcher_uses_reference_mean() {
        let spec = MatchSpec::new(
            Matcher::ParametricAbs {
                reference: vec![0.0],
            },
            0.5,
        )
        .unwrap();
        let anything = s1(&[9.0]);
        assert!(is_match(&anything, &s1(&[0.2, 0.6]), &spec).unwrap());
        assert!(!is_match(&anything, &s1(&[0.2, 1.0]), &spec).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let x = Sample::from_rows(&[[0.1, -2.5], [1e-17, 3.0]]).unwrap();
        let mut buf = Vec::new();
        x.write_csv(&mut buf).unwrap();
        assert_eq!(Sample::read_csv(&buf[..]).unwrap(), x);
        let with_header = b"a,b\n1,2\n3,4\n";
        assert_eq!(Sample::read_csv(&with_header[..]).unwrap().len(), 2);
    }

    fn small_sample() -> impl Strategy<Value = Vec<f64>> {
        // values on a coarse lattice so ties are common
        prop::collection::vec((-5i32..5).prop_map(|v| v as f64 * 0.5), 1..12)
    }

    proptest! {
        #[test]
        fn ks_is_symmetric_and_bounded(a in small_sample(), b in small_sample()) {
            let fa = EmpiricalCdf::new(a).unwrap();
            let fb = EmpiricalCdf::new(b).unwrap();
            let d = fa.distance(&fb);
            prop_assert_eq!(d, fb.distance(&fa));
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn ks_triangle(a in small_sample(), b in small_sample(), c in small_sample()) {
            let (fa, fb, fc) = (
                EmpiricalCdf::new(a).unwrap(),
                EmpiricalCdf::new(b).unwrap(),
                EmpiricalCdf::new(c).unwrap(),
            );
            prop_assert!(fa.distance(&fc) <= fa.distance(&fb) + fb.distance(&fc) + 1e-12);
        }

        #[test]
        fn ks_equal_size_is_quantized(
            pair in (1usize..15).prop_flat_map(|n| (
                prop::collection::vec((-4i32..4).prop_map(f64::from), n),
                prop::collection::vec((-4i32..4).prop_map(f64::from), n),
            ))
        ) {
            let n = pair.0.len();
            let fa = EmpiricalCdf::new(pair.0.clone()).unwrap();
            let fb = EmpiricalCdf::new(pair.1.clone()).unwrap();
            let d = fa.distance(&fb);
            let k = (d * n as f64).round() as usize;
            prop_assert_eq!(d, k as f64 / n as f64);
            prop_assert_eq!(d == 0.0, fa.sorted_values() == fb.sorted_values());
        }

        #[test]
        fn antipodal_direction_gives_same_distance(
            phi in 0.0..std::f64::consts::PI,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<[f64; 2]> = (0..15).map(|_| [rng.random(), rng.random()]).collect();
            let y: Vec<[f64; 2]> = (0..15).map(|_| [rng.random(), rng.random()]).collect();
            let (x, y) = (Sample::from_rows(&x).unwrap(), Sample::from_rows(&y).unwrap());
            let a = Direction::from_angle(phi);
            prop_assert_eq!(
                projected_tv(&x, &y, std::slice::from_ref(&a)).unwrap(),
                projected_tv(&x, &y, &[a.negated()]).unwrap()
            );
        }
    }
}
