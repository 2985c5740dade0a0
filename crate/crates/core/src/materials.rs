//! Candidate materials and their physical properties.
//!
//! The library is a TOML document (see `data/materials.toml` for the seed
//! file shipped with the crate). Material ordinals used in label maps are
//! `1 + rank` of the material id in sorted order; 0 means unlabeled.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// The ten labels used for segmentation scoring, in ordinal order (1-based).
pub const EVALUATION_FAMILIES: [&str; 10] = [
    "wood", "metal", "plastic", "glass", "fabric", "foam", "marble", "ceramic", "concrete", "leather",
];

const SEED: &str = include_str!("../data/materials.toml");

#[derive(Debug, thiserror::Error)]
pub enum LibraryError {
    #[error("library file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("material `{id}`: {field} {reason}")]
    Range {
        id: String,
        field: &'static str,
        reason: String,
    },
    #[error("material `{id}` names unknown family `{family}`")]
    UnknownFamily { id: String, family: String },
    #[error("duplicate material id `{0}`")]
    Duplicate(String),
    #[error("family `{family}`: {reason}")]
    Family { family: String, reason: String },
    #[error("no material matches `{0}`")]
    NotFound(String),
    #[error("unknown material id `{0}`")]
    UnknownId(String),
}

/// A `(min, max, nominal)` triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub nominal: f64,
}

impl Range {
    pub fn exact(v: f64) -> Self {
        Self { min: v, max: v, nominal: v }
    }

    pub fn new(min: f64, max: f64, nominal: f64) -> Self {
        Self { min, max, nominal }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawRange {
    Scalar(f64),
    Table { min: f64, max: f64, nominal: Option<f64> },
}

impl From<RawRange> for Range {
    fn from(r: RawRange) -> Self {
        match r {
            RawRange::Scalar(v) => Range::exact(v),
            RawRange::Table { min, max, nominal } => Range {
                min,
                max,
                nominal: nominal.unwrap_or(0.5 * (min + max)),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShoreScale {
    A,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShoreHardness {
    pub scale: ShoreScale,
    pub min: f64,
    pub max: f64,
}

impl ShoreHardness {
    /// Maps a reading onto the combined 0–200 axis: Shore A as-is, Shore D + 100.
    pub fn to_unified(scale: ShoreScale, value: f64) -> f64 {
        match scale {
            ShoreScale::A => value,
            ShoreScale::D => value + 100.0,
        }
    }

    /// Midpoint of the range on the unified axis.
    pub fn unified_midpoint(&self) -> f64 {
        Self::to_unified(self.scale, 0.5 * (self.min + self.max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaterialRecord {
    pub id: String,
    pub family: String,
    /// kg/m³
    pub density: Range,
    /// Pa
    pub youngs_modulus: Range,
    pub poisson_ratio: f64,
    /// Against the gripper-tip reference surface.
    pub friction_mu: f64,
    /// Pa
    pub yield_stress: f64,
    pub shore_hardness: ShoreHardness,
    pub aliases: Vec<String>,
    pub provenance: String,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    family: String,
    #[serde(default)]
    aliases: Vec<String>,
    density: RawRange,
    youngs_modulus: RawRange,
    poisson_ratio: f64,
    friction_mu: f64,
    yield_stress: f64,
    shore_hardness: ShoreHardness,
    #[serde(default)]
    provenance: String,
}

#[derive(Deserialize)]
struct RawFamily {
    name: String,
    #[serde(default)]
    evaluation: bool,
    default: String,
}

#[derive(Deserialize)]
struct RawLibrary {
    schema_version: u32,
    #[serde(default)]
    family: Vec<RawFamily>,
    #[serde(default)]
    material: Vec<RawRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Family {
    pub name: String,
    /// One of the ten scoring labels (as opposed to an extension family).
    pub evaluation: bool,
    pub default: String,
    pub members: Vec<String>,
}

/// Normalizes free text for lookup: lowercase, trimmed, and runs of
/// whitespace, `_` or `-` collapsed to a single `_`.
pub fn normalize_name(s: &str) -> String {
    let lowered = s.trim().to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_sep = false;
    for ch in lowered.chars() {
        if ch.is_whitespace() || ch == '_' || ch == '-' {
            pending_sep = !out.is_empty();
        } else {
            if pending_sep {
                out.push('_');
                pending_sep = false;
            }
            out.push(ch);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialLibrary {
    records: BTreeMap<String, MaterialRecord>,
    families: BTreeMap<String, Family>,
    /// Declared family order; evaluation families first in scoring order.
    family_order: Vec<String>,
    aliases: BTreeMap<String, String>,
}

impl MaterialLibrary {
    /// The library bundled with the crate.
    pub fn seed() -> Self {
        Self::load(SEED.as_bytes()).expect("bundled library is valid")
    }

    pub fn seed_text() -> &'static str {
        SEED
    }

    pub fn load(bytes: &[u8]) -> Result<Self, LibraryError> {
        let text = String::from_utf8_lossy(bytes);
        let raw: RawLibrary = toml::from_str(&text)?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(LibraryError::SchemaVersion(raw.schema_version));
        }

        let mut families: BTreeMap<String, Family> = BTreeMap::new();
        for f in raw.family {
            let name = normalize_name(&f.name);
            if families.contains_key(&name) {
                return Err(LibraryError::Family {
                    family: name,
                    reason: "declared twice".into(),
                });
            }
            if f.evaluation && !EVALUATION_FAMILIES.contains(&name.as_str()) {
                return Err(LibraryError::Family {
                    family: name,
                    reason: "is not one of the ten evaluation labels".into(),
                });
            }
            families.insert(
                name.clone(),
                Family {
                    name,
                    evaluation: f.evaluation,
                    default: normalize_name(&f.default),
                    members: Vec::new(),
                },
            );
        }

        let mut records = BTreeMap::new();
        for r in raw.material {
            let id = normalize_name(&r.id);
            if id.is_empty() {
                return Err(LibraryError::Range {
                    id,
                    field: "id",
                    reason: "is empty".into(),
                });
            }
            let record = MaterialRecord {
                id: id.clone(),
                family: normalize_name(&r.family),
                density: r.density.into(),
                youngs_modulus: r.youngs_modulus.into(),
                poisson_ratio: r.poisson_ratio,
                friction_mu: r.friction_mu,
                yield_stress: r.yield_stress,
                shore_hardness: r.shore_hardness,
                aliases: r.aliases,
                provenance: r.provenance,
            };
            validate_record(&record)?;
            let Some(family) = families.get_mut(&record.family) else {
                return Err(LibraryError::UnknownFamily {
                    id,
                    family: record.family,
                });
            };
            family.members.push(id.clone());
            if records.insert(id.clone(), record).is_some() {
                return Err(LibraryError::Duplicate(id));
            }
        }

        for f in families.values() {
            match records.get(&f.default) {
                Some(r) if r.family == f.name => {}
                _ => {
                    return Err(LibraryError::Family {
                        family: f.name.clone(),
                        reason: format!("default `{}` is not a member", f.default),
                    })
                }
            }
        }

        let mut aliases = BTreeMap::new();
        for r in records.values() {
            for a in &r.aliases {
                let key = normalize_name(a);
                if !records.contains_key(&key) {
                    aliases.entry(key).or_insert_with(|| r.id.clone());
                }
            }
        }

        let mut family_order: Vec<String> = EVALUATION_FAMILIES
            .iter()
            .filter(|f| families.contains_key(**f))
            .map(|f| f.to_string())
            .collect();
        family_order.extend(families.keys().filter(|f| !EVALUATION_FAMILIES.contains(&f.as_str())).cloned());

        Ok(Self {
            records,
            families,
            family_order,
            aliases,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MaterialRecord> {
        self.records.get(id)
    }

    pub fn records(&self) -> impl Iterator<Item = &MaterialRecord> {
        self.records.values()
    }

    pub fn families(&self) -> impl Iterator<Item = &Family> {
        self.family_order.iter().map(|f| &self.families[f])
    }

    /// Resolves free text: exact id, then normalized id or alias, then family
    /// name (yielding the family's default record).
    pub fn resolve(&self, name: &str) -> Result<&MaterialRecord, LibraryError> {
        if let Some(r) = self.records.get(name) {
            return Ok(r);
        }
        let key = normalize_name(name);
        if let Some(r) = self.records.get(&key) {
            return Ok(r);
        }
        if let Some(id) = self.aliases.get(&key) {
            return Ok(&self.records[id]);
        }
        if let Some(f) = self.families.get(&key) {
            return Ok(&self.records[&f.default]);
        }
        Err(LibraryError::NotFound(name.to_string()))
    }

    pub fn family_of(&self, id: &str) -> Result<&str, LibraryError> {
        self.records
            .get(id)
            .map(|r| r.family.as_str())
            .ok_or_else(|| LibraryError::UnknownId(id.to_string()))
    }

    /// 1-based material ordinal used in material maps.
    pub fn ordinal(&self, id: &str) -> Option<u16> {
        self.records.keys().position(|k| k == id).map(|i| i as u16 + 1)
    }

    pub fn by_ordinal(&self, ordinal: u16) -> Option<&MaterialRecord> {
        ordinal.checked_sub(1).and_then(|i| self.records.values().nth(i as usize))
    }

    /// Records indexed by `ordinal - 1`, for hot loops.
    pub fn ordinal_table(&self) -> Vec<&MaterialRecord> {
        self.records.values().collect()
    }

    /// 1-based family ordinal: the ten evaluation labels take 1..=10 in their
    /// fixed order; extension families follow alphabetically.
    pub fn family_ordinal(&self, family: &str) -> Option<u16> {
        if let Some(i) = EVALUATION_FAMILIES.iter().position(|f| *f == family) {
            return Some(i as u16 + 1);
        }
        self.families
            .keys()
            .filter(|f| !EVALUATION_FAMILIES.contains(&f.as_str()))
            .position(|f| f == family)
            .map(|i| (EVALUATION_FAMILIES.len() + i) as u16 + 1)
    }

    pub fn family_name(&self, ordinal: u16) -> Option<&str> {
        let i = (ordinal as usize).checked_sub(1)?;
        if i < EVALUATION_FAMILIES.len() {
            return Some(EVALUATION_FAMILIES[i]);
        }
        self.families
            .keys()
            .filter(|f| !EVALUATION_FAMILIES.contains(&f.as_str()))
            .nth(i - EVALUATION_FAMILIES.len())
            .map(|s| s.as_str())
    }

    /// Maps each material ordinal to its family ordinal (index 0 = unlabeled).
    pub fn material_to_family_ordinals(&self) -> Vec<u16> {
        std::iter::once(0)
            .chain(
                self.records
                    .values()
                    .map(|r| self.family_ordinal(&r.family).expect("family validated at load")),
            )
            .collect()
    }

    /// Serializes a snapshot of the library (records and families).
    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct FamilyOut<'a> {
            name: &'a str,
            evaluation: bool,
            default: &'a str,
        }
        #[derive(Serialize)]
        struct Out<'a> {
            schema_version: u32,
            family: Vec<FamilyOut<'a>>,
            material: Vec<&'a MaterialRecord>,
        }
        let out = Out {
            schema_version: SCHEMA_VERSION,
            family: self
                .families()
                .map(|f| FamilyOut {
                    name: &f.name,
                    evaluation: f.evaluation,
                    default: &f.default,
                })
                .collect(),
            material: self.records.values().collect(),
        };
        toml::to_string(&out).expect("library serializes")
    }
}

fn validate_record(r: &MaterialRecord) -> Result<(), LibraryError> {
    let err = |field: &'static str, reason: String| LibraryError::Range {
        id: r.id.clone(),
        field,
        reason,
    };
    for (field, range) in [("density", r.density), ("youngs_modulus", r.youngs_modulus)] {
        if range.min > range.max {
            return Err(err(field, format!("min {} > max {}", range.min, range.max)));
        }
        if !(range.min <= range.nominal && range.nominal <= range.max) {
            return Err(err(field, format!("nominal {} outside [{}, {}]", range.nominal, range.min, range.max)));
        }
        if !(range.min > 0.0) || !range.max.is_finite() {
            return Err(err(field, "must be positive and finite".into()));
        }
    }
    if !(r.poisson_ratio > -1.0 && r.poisson_ratio < 0.5) {
        return Err(err("poisson_ratio", format!("{} outside (-1, 0.5)", r.poisson_ratio)));
    }
    if !(r.friction_mu > 0.0 && r.friction_mu.is_finite()) {
        return Err(err("friction_mu", "must be positive".into()));
    }
    if !(r.yield_stress > 0.0 && r.yield_stress.is_finite()) {
        return Err(err("yield_stress", "must be positive".into()));
    }
    let s = r.shore_hardness;
    if s.min > s.max {
        return Err(err("shore_hardness", format!("min {} > max {}", s.min, s.max)));
    }
    if !(0.0..=100.0).contains(&s.min) || !(0.0..=100.0).contains(&s.max) {
        return Err(err("shore_hardness", "must lie within 0-100 on its scale".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(record: &str) -> String {
        format!(
            "schema_version = 1\n[[family]]\nname = \"metal\"\nevaluation = true\ndefault = \"x\"\n[[material]]\n{record}"
        )
    }

    #[test]
    fn seed_contains_cited_densities() {
        let lib = MaterialLibrary::seed();
        assert_eq!(lib.resolve("aluminum").unwrap().density.nominal, 2700.0);
        let steel = lib.resolve("steel").unwrap().density;
        assert_eq!((steel.min, steel.max), (7750.0, 8050.0));
        let copper = lib.resolve("copper").unwrap().density;
        assert_eq!((copper.min, copper.max), (8920.0, 8960.0));
        let glass = lib.resolve("glass").unwrap().density;
        assert_eq!((glass.min, glass.max), (2200.0, 2500.0));
        let concrete = lib.resolve("concrete").unwrap().density;
        assert_eq!((concrete.min, concrete.max), (2300.0, 2500.0));
        let pe = lib.resolve("polyethylene").unwrap().density;
        assert_eq!((pe.min, pe.max), (930.0, 970.0));
    }

    #[test]
    fn seed_covers_every_evaluation_family_and_fifteen_families() {
        let lib = MaterialLibrary::seed();
        assert_eq!(lib.families().count(), 15);
        for f in EVALUATION_FAMILIES {
            assert!(lib.records().any(|r| r.family == f), "{f}");
        }
    }

    #[test]
    fn resolve_normalizes_and_falls_back_to_family() {
        let lib = MaterialLibrary::seed();
        assert_eq!(lib.resolve("Aluminum ").unwrap().id, "aluminum");
        assert_eq!(lib.resolve("Aluminium").unwrap().id, "aluminum");
        assert_eq!(lib.resolve("Stainless  Steel").unwrap().id, "stainless_steel");
        assert_eq!(lib.resolve("Metal").unwrap().id, "steel");
        assert!(matches!(lib.resolve("unobtainium"), Err(LibraryError::NotFound(_))));
    }

    #[test]
    fn family_lookup() {
        let lib = MaterialLibrary::seed();
        assert_eq!(lib.family_of("copper").unwrap(), "metal");
        assert_eq!(lib.family_of("glass").unwrap(), "glass");
        assert_eq!(lib.family_of("polyethylene").unwrap(), "plastic");
        assert!(matches!(lib.family_of("nope"), Err(LibraryError::UnknownId(_))));
    }

    #[test]
    fn resolve_is_total_over_ids() {
        let lib = MaterialLibrary::seed();
        for r in lib.records() {
            assert_eq!(lib.resolve(&r.id).unwrap(), r);
            assert!(lib.family_ordinal(lib.family_of(&r.id).unwrap()).is_some());
            let o = lib.ordinal(&r.id).unwrap();
            assert_eq!(lib.by_ordinal(o).unwrap().id, r.id);
        }
    }

    #[test]
    fn family_ordinals() {
        let lib = MaterialLibrary::seed();
        assert_eq!(lib.family_ordinal("wood"), Some(1));
        assert_eq!(lib.family_ordinal("leather"), Some(10));
        assert_eq!(lib.family_name(11), Some("composite"));
        assert_eq!(lib.family_ordinal("wax"), Some(15));
        assert_eq!(lib.family_name(0), None);
    }

    #[test]
    fn range_violation() {
        let text = minimal(
            "id = \"x\"\nfamily = \"metal\"\ndensity = { min = 100, max = 50 }\nyoungs_modulus = 1e9\npoisson_ratio = 0.3\nfriction_mu = 0.5\nyield_stress = 1e6\nshore_hardness = { scale = \"A\", min = 1, max = 2 }\n",
        );
        assert!(matches!(
            MaterialLibrary::load(text.as_bytes()),
            Err(LibraryError::Range { field: "density", .. })
        ));
    }

    #[test]
    fn duplicate_and_unknown_family() {
        let rec = "id = \"x\"\nfamily = \"metal\"\ndensity = 100\nyoungs_modulus = 1e9\npoisson_ratio = 0.3\nfriction_mu = 0.5\nyield_stress = 1e6\nshore_hardness = { scale = \"A\", min = 1, max = 2 }\n";
        let dup = minimal(&format!("{rec}[[material]]\n{rec}"));
        assert!(matches!(MaterialLibrary::load(dup.as_bytes()), Err(LibraryError::Duplicate(_))));
        let unknown = minimal(&rec.replace("family = \"metal\"", "family = \"ether\""));
        assert!(matches!(MaterialLibrary::load(unknown.as_bytes()), Err(LibraryError::UnknownFamily { .. })));
        let bad_poisson = minimal(&rec.replace("0.3", "0.5"));
        assert!(matches!(
            MaterialLibrary::load(bad_poisson.as_bytes()),
            Err(LibraryError::Range { field: "poisson_ratio", .. })
        ));
        assert!(MaterialLibrary::load(minimal(rec).as_bytes()).is_ok());
    }

    #[test]
    fn snapshot_reloads_identically() {
        let lib = MaterialLibrary::seed();
        let again = MaterialLibrary::load(lib.to_toml().as_bytes()).unwrap();
        assert_eq!(again.ordinal_table(), lib.ordinal_table());
    }

    #[test]
    fn shore_unified_axis() {
        let a = ShoreHardness { scale: ShoreScale::A, min: 60.0, max: 80.0 };
        let d = ShoreHardness { scale: ShoreScale::D, min: 40.0, max: 60.0 };
        assert_eq!(a.unified_midpoint(), 70.0);
        assert_eq!(d.unified_midpoint(), 150.0);
    }
}
