//! Transformation configurations and their power-set enumeration.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::affine::{AffineKind, AffineRanges};
use super::filters::{FilterKind, FilterRanges, SampledFilter};
use crate::error::{Error, Result};
use crate::renderer::MeshKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "shapeshifter")]
    ShapeShifter,
    Transcender,
    TranscenderMc,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::ShapeShifter, Method::Transcender, Method::TranscenderMc];

    pub fn name(self) -> &'static str {
        match self {
            Method::ShapeShifter => "shapeshifter",
            Method::Transcender => "transcender",
            Method::TranscenderMc => "transcender_mc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.to_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown method {s:?}")))
    }

    pub fn uses_rendering(self) -> bool {
        !matches!(self, Method::ShapeShifter)
    }

    /// Training epochs used for each method.
    pub fn default_epochs(self) -> usize {
        match self {
            Method::ShapeShifter => 15,
            Method::Transcender => 20,
            Method::TranscenderMc => 13,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Optional affine operations; resize and translation are always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffineOp {
    Rotate,
    Shear,
}

impl AffineOp {
    pub fn name(self) -> &'static str {
        match self {
            AffineOp::Rotate => "rotate",
            AffineOp::Shear => "shear",
        }
    }
}

/// One element of a method's configuration set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransformConfig {
    pub method: Method,
    pub filters: BTreeSet<FilterKind>,
    pub affine: BTreeSet<AffineOp>,
    pub mesh_pool: BTreeSet<MeshKind>,
    pub config_id: String,
}

impl TransformConfig {
    pub fn new(
        method: Method,
        filters: BTreeSet<FilterKind>,
        affine: BTreeSet<AffineOp>,
        mesh_pool: BTreeSet<MeshKind>,
    ) -> Result<Self> {
        match method {
            Method::ShapeShifter if !mesh_pool.is_empty() => {
                return Err(Error::Contract("shapeshifter configs take no mesh pool".into()))
            }
            Method::Transcender | Method::TranscenderMc => {
                if mesh_pool.is_empty() {
                    return Err(Error::Contract("mesh pool must not be empty".into()));
                }
                if !affine.is_empty() {
                    return Err(Error::Contract("rendered methods take no affine subset".into()));
                }
                if mesh_pool.iter().any(|m| !MeshKind::TRAINING_POOL.contains(m)) {
                    return Err(Error::Contract("mesh pool outside barrel/sign/billboard".into()));
                }
            }
            _ => {}
        }
        let mut cfg = Self {
            method,
            filters,
            affine,
            mesh_pool,
            config_id: String::new(),
        };
        cfg.config_id = config_hash(&cfg.record());
        Ok(cfg)
    }

    /// Transformations every configuration of the method contains.
    pub fn fixed_transforms(&self) -> &'static [&'static str] {
        match self.method {
            Method::ShapeShifter => &["resize", "translation"],
            _ => &["rotations", "translations", "camera_distance"],
        }
    }

    /// Human-readable record; the config id is a hash of it.
    pub fn record(&self) -> String {
        let fr = FilterRanges::default();
        let ar = AffineRanges::default();
        let mut s = String::new();
        let join = |it: Vec<&str>| it.join(",");
        writeln!(s, "method={}", self.method.name()).unwrap();
        writeln!(s, "fixed={}", self.fixed_transforms().join(",")).unwrap();
        writeln!(s, "filters={}", join(self.filters.iter().map(|f| f.name()).collect())).unwrap();
        writeln!(s, "affine={}", join(self.affine.iter().map(|a| a.name()).collect())).unwrap();
        writeln!(s, "meshes={}", join(self.mesh_pool.iter().map(|m| m.name()).collect())).unwrap();
        for f in &self.filters {
            let range = match f {
                FilterKind::Brightness => format!("{:?}", fr.brightness),
                FilterKind::Contrast => format!("{:?}", fr.contrast),
                FilterKind::MotionBlur => format!("{:?};{:?}", fr.blur_fraction, fr.blur_angle_deg),
                FilterKind::GaussianNoise => format!("{:?}", fr.noise_sigma),
                FilterKind::Hue => format!("{:?}", fr.hue_shift),
            };
            writeln!(s, "range.{}={range}", f.name()).unwrap();
        }
        if self.method == Method::ShapeShifter {
            writeln!(s, "range.{}={:?};{:?}", AffineKind::Resize.name(), ar.height_px, ar.width_px).unwrap();
            for a in &self.affine {
                let r = match a {
                    AffineOp::Rotate => ar.rotate_deg,
                    AffineOp::Shear => ar.shear_deg,
                };
                writeln!(s, "range.{}={r:?}", a.name()).unwrap();
            }
        }
        s
    }
}

fn config_hash(record: &str) -> String {
    let digest = Sha256::digest(record.as_bytes());
    digest.iter().take(6).fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

fn power_set<T: Copy + Ord>(items: &[T]) -> Vec<BTreeSet<T>> {
    (0..1usize << items.len())
        .map(|bits| {
            items
                .iter()
                .enumerate()
                .filter(|(i, _)| bits & (1 << i) != 0)
                .map(|(_, &x)| x)
                .collect()
        })
        .collect()
}

/// Every configuration of `method`, sorted by config id.
///
/// ShapeShifter: all filter subsets × all {rotate, shear} subsets.
/// Rendered methods: all filter subsets × all non-empty mesh pools.
pub fn enumerate_configs(method: Method) -> Vec<TransformConfig> {
    let filter_sets = power_set(&FilterKind::CANONICAL_ORDER);
    let mut out = Vec::new();
    match method {
        Method::ShapeShifter => {
            for f in &filter_sets {
                for a in power_set(&[AffineOp::Rotate, AffineOp::Shear]) {
                    out.push(TransformConfig::new(method, f.clone(), a, BTreeSet::new()).unwrap());
                }
            }
        }
        Method::Transcender | Method::TranscenderMc => {
            for f in &filter_sets {
                for pool in power_set(&MeshKind::TRAINING_POOL) {
                    if pool.is_empty() {
                        continue;
                    }
                    out.push(TransformConfig::new(method, f.clone(), BTreeSet::new(), pool).unwrap());
                }
            }
        }
    }
    out.sort_by(|a, b| a.config_id.cmp(&b.config_id));
    out
}

/// One parameter sample per enabled filter, in canonical order.
pub fn sample_chain(
    filters: &BTreeSet<FilterKind>,
    ranges: &FilterRanges,
    rng: &mut impl Rng,
) -> Vec<SampledFilter> {
    fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    }
    let mut chain = Vec::with_capacity(filters.len());
    for kind in FilterKind::CANONICAL_ORDER {
        if !filters.contains(&kind) {
            continue;
        }
        chain.push(match kind {
            FilterKind::Brightness => SampledFilter::Brightness {
                alpha: uniform(rng, ranges.brightness),
            },
            FilterKind::Contrast => SampledFilter::Contrast {
                beta: uniform(rng, ranges.contrast),
            },
            FilterKind::MotionBlur => SampledFilter::MotionBlur {
                fraction: uniform(rng, ranges.blur_fraction),
                angle_deg: uniform(rng, ranges.blur_angle_deg),
            },
            FilterKind::GaussianNoise => {
                let hi = ranges.noise_sigma.1.min(ranges.noise_sigma_cap);
                let sigma = uniform(rng, (ranges.noise_sigma.0, hi.max(ranges.noise_sigma.0)));
                SampledFilter::GaussianNoise {
                    sigma,
                    seed: rng.random(),
                }
            }
            FilterKind::Hue => SampledFilter::Hue {
                shift: uniform(rng, ranges.hue_shift),
            },
        });
    }
    chain
}
