use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use super::DetectorError;
use crate::canon::Endpoint;
use crate::scalar::Real;
use crate::tsv;

pub const DEFAULT_K: usize = 10;
const HEADER: &str = "# sentinel-profiles\tversion 1";
const COLUMNS: &str = "method\thost\tpath\tthreshold\tk\ttrain_count\tcalibrated";

/// Decision threshold on the scaled score, within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Threshold<F>(F);

impl<F: Real> Threshold<F> {
    pub fn new(value: F) -> Result<Self, DetectorError> {
        if value >= F::zero() && value <= F::one() {
            Ok(Threshold(value))
        } else {
            Err(DetectorError::InvalidProfile(format!(
                "threshold {value} outside [0, 1]"
            )))
        }
    }

    pub fn get(self) -> F {
        self.0
    }
}

impl<F: Real> Default for Threshold<F> {
    fn default() -> Self {
        Threshold(F::from_f64_lossy(0.5))
    }
}

/// Neighbor count used for scoring. A single neighbor is always its own
/// maximum and scales to 0, so at least two are required.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NeighborCount(usize);

impl NeighborCount {
    pub fn new(k: usize) -> Result<Self, DetectorError> {
        if k >= 2 {
            Ok(NeighborCount(k))
        } else {
            Err(DetectorError::InvalidProfile(format!("k = {k} must be at least 2")))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl Default for NeighborCount {
    fn default() -> Self {
        NeighborCount(DEFAULT_K)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointProfile<F> {
    pub endpoint: Endpoint,
    pub threshold: Threshold<F>,
    pub k: NeighborCount,
    pub train_count: usize,
    /// False when the values are defaults because no validation data reached
    /// this endpoint.
    pub calibrated: bool,
}

impl<F: Real> EndpointProfile<F> {
    pub fn uncalibrated(endpoint: Endpoint, train_count: usize) -> Self {
        EndpointProfile {
            endpoint,
            threshold: Threshold::default(),
            k: NeighborCount::default(),
            train_count,
            calibrated: false,
        }
    }
}

/// All endpoint profiles, ordered by endpoint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileSet<F> {
    profiles: BTreeMap<Endpoint, EndpointProfile<F>>,
}

impl<F: Real> ProfileSet<F> {
    pub fn new() -> Self {
        ProfileSet { profiles: BTreeMap::new() }
    }

    pub fn insert(&mut self, profile: EndpointProfile<F>) -> Result<(), DetectorError> {
        if profile.train_count == 0 {
            return Err(DetectorError::InvalidProfile(format!(
                "{} has train_count 0",
                profile.endpoint
            )));
        }
        self.profiles.insert(profile.endpoint.clone(), profile);
        Ok(())
    }

    pub fn get(&self, endpoint: &Endpoint) -> Option<&EndpointProfile<F>> {
        self.profiles.get(endpoint)
    }

    pub fn iter(&self) -> impl Iterator<Item = &EndpointProfile<F>> {
        self.profiles.values()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{HEADER}\n{COLUMNS}\n");
        for p in self.profiles.values() {
            out += &format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                tsv::escape(&p.endpoint.method),
                tsv::escape(&p.endpoint.host),
                tsv::escape(&p.endpoint.path),
                p.threshold.get(),
                p.k.get(),
                p.train_count,
                p.calibrated,
            );
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, DetectorError> {
        let bad = |line: usize, msg: String| DetectorError::ProfileFormat { line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, HEADER)) => {}
            Some((_, l)) if l.starts_with("# sentinel-profiles") => {
                return Err(bad(1, format!("unsupported version header {l:?}")))
            }
            _ => return Err(bad(1, "missing profiles header".into())),
        }
        match lines.next() {
            Some((_, COLUMNS)) => {}
            _ => return Err(bad(2, "missing column header".into())),
        }
        let mut set = ProfileSet::new();
        for (i, line) in lines {
            let n = i + 1;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(bad(n, format!("expected 7 fields, found {}", f.len())));
            }
            let field = |j: usize| tsv::unescape(f[j]).ok_or_else(|| bad(n, format!("bad escape in field {}", j + 1)));
            let endpoint = Endpoint::new(field(0)?, field(1)?, field(2)?);
            let threshold = F::from_str_radix(f[3], 10)
                .map_err(|_| bad(n, format!("bad threshold {:?}", f[3])))?;
            let k: usize = f[4].parse().map_err(|_| bad(n, format!("bad k {:?}", f[4])))?;
            let train_count: usize = f[5]
                .parse()
                .map_err(|_| bad(n, format!("bad train_count {:?}", f[5])))?;
            let calibrated: bool = f[6]
                .parse()
                .map_err(|_| bad(n, format!("bad calibrated flag {:?}", f[6])))?;
            let profile = EndpointProfile {
                endpoint,
                threshold: Threshold::new(threshold).map_err(|e| bad(n, e.to_string()))?,
                k: NeighborCount::new(k).map_err(|e| bad(n, e.to_string()))?,
                train_count,
                calibrated,
            };
            set.insert(profile).map_err(|e| bad(n, e.to_string()))?;
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<(), DetectorError> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }
}

impl<F: Real> FromIterator<EndpointProfile<F>> for ProfileSet<F> {
    fn from_iter<I: IntoIterator<Item = EndpointProfile<F>>>(iter: I) -> Self {
        ProfileSet {
            profiles: iter.into_iter().map(|p| (p.endpoint.clone(), p)).collect(),
        }
    }
}

impl fmt::Display for NeighborCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}
