//! Annotated scenes for downstream simulators: a Gaussian PLY carrying
//! per-vertex material and elastic properties, plus a TOML manifest.
//! Column layout is documented in `docs/annotated-ply.md`.

use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::lifting::{PropertyField, Provenance};
use crate::materials::MaterialLibrary;
use crate::physics::{part_masses, PartDecomposition};
use crate::scene_io::{
    float_column, parse_gaussian_ply, write_gaussian_ply, ColumnData, GaussianCloud, PlyColumn, PlyEncoding, SceneIoError,
};

pub const MANIFEST_VERSION: u32 = 1;
pub const ANNOTATION_COLUMNS: [&str; 4] = ["material_id", "density", "youngs_modulus", "poisson_ratio"];

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("Gaussian {index} is unresolved; run propagation before export")]
    Unresolved { index: usize },
    #[error("cloud has {cloud} Gaussians but the field has {field}")]
    CountMismatch { cloud: usize, field: usize },
    #[error("material ordinal {0} is not in the library snapshot")]
    UnknownOrdinal(u16),
    #[error("annotated PLY lacks column `{0}`")]
    MissingColumn(&'static str),
    #[error("column `{0}` has an unexpected type")]
    ColumnType(&'static str),
    #[error(transparent)]
    Ply(#[from] SceneIoError),
}

/// Content hash over named byte strings. Names and lengths are framed, so
/// changing, moving or renaming any byte changes the digest.
#[derive(Debug, Clone, Default)]
pub struct ContentHash(Sha256);

impl ContentHash {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(mut self, name: &str, bytes: &[u8]) -> Self {
        self.0.update((name.len() as u64).to_le_bytes());
        self.0.update(name.as_bytes());
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SceneProvenance {
    pub views: Vec<String>,
    pub config_hash: String,
    /// Seconds since the epoch; taken from `SOURCE_DATE_EPOCH` so that
    /// reproducible builds stay byte-identical, omitted when unset.
    pub created_epoch_s: Option<u64>,
}

impl SceneProvenance {
    pub fn new(views: Vec<String>, config_hash: String) -> Self {
        Self {
            views,
            config_hash,
            created_epoch_s: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok()),
        }
    }
}

pub struct AnnotatedScene<'a> {
    pub cloud: &'a GaussianCloud,
    pub field: &'a PropertyField,
    pub library: &'a MaterialLibrary,
    pub provenance: SceneProvenance,
}

impl AnnotatedScene<'_> {
    fn check(&self) -> Result<(), ExportError> {
        if self.cloud.len() != self.field.len() {
            return Err(ExportError::CountMismatch {
                cloud: self.cloud.len(),
                field: self.field.len(),
            });
        }
        if let Some(index) = self.field.unresolved().next() {
            return Err(ExportError::Unresolved { index });
        }
        if let Some(&o) = self.field.ordinals.iter().find(|&&o| self.library.by_ordinal(o).is_none()) {
            return Err(ExportError::UnknownOrdinal(o));
        }
        Ok(())
    }
}

fn exact_floats(values: &[f64]) -> ColumnData {
    float_column(values.to_vec(), |i, v| v.to_bits() == values[i].to_bits())
}

/// The four per-vertex annotation columns for a resolved field.
pub fn annotation_columns(field: &PropertyField) -> Vec<PlyColumn> {
    vec![
        PlyColumn::new("material_id", ColumnData::I32(field.ordinals.iter().map(|&o| o as i32).collect())),
        PlyColumn::new("density", exact_floats(&field.density)),
        PlyColumn::new("youngs_modulus", exact_floats(&field.youngs_modulus)),
        PlyColumn::new("poisson_ratio", exact_floats(&field.poisson_ratio)),
    ]
}

pub fn export_annotated_ply(scene: &AnnotatedScene<'_>, encoding: PlyEncoding) -> Result<Vec<u8>, ExportError> {
    scene.check()?;
    Ok(write_gaussian_ply(scene.cloud, &annotation_columns(scene.field), encoding)?)
}

/// Per-vertex annotations read back from an annotated PLY.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotations {
    pub material_id: Vec<u16>,
    pub density: Vec<f64>,
    pub youngs_modulus: Vec<f64>,
    pub poisson_ratio: Vec<f64>,
}

impl Annotations {
    /// Rebuilds a property field, looking up friction and yield stress in
    /// `library` (which must be the snapshot the file was written with).
    pub fn to_field(&self, library: &MaterialLibrary) -> Result<PropertyField, ExportError> {
        let n = self.material_id.len();
        let mut field = PropertyField::from_ordinals(
            self.material_id.clone(),
            vec![Provenance::Voted { observations: 0 }; n],
            library,
        )
        .map_err(|_| ExportError::UnknownOrdinal(*self.material_id.iter().max().unwrap_or(&0)))?;
        field.density.clone_from(&self.density);
        field.youngs_modulus.clone_from(&self.youngs_modulus);
        field.poisson_ratio.clone_from(&self.poisson_ratio);
        Ok(field)
    }
}

/// Splits an annotated PLY into the base cloud (annotation columns removed
/// from `extra`) and the annotations.
pub fn parse_annotated_ply(bytes: &[u8]) -> Result<(GaussianCloud, Annotations), ExportError> {
    let mut cloud = parse_gaussian_ply(bytes)?;
    let mut take = |name: &'static str| -> Result<ColumnData, ExportError> {
        let pos = cloud
            .extra
            .iter()
            .position(|c| c.name == name)
            .ok_or(ExportError::MissingColumn(name))?;
        Ok(cloud.extra.remove(pos).data)
    };
    let material_id = match take("material_id")? {
        ColumnData::I32(v) => v
            .into_iter()
            .map(|o| u16::try_from(o).map_err(|_| ExportError::ColumnType("material_id")))
            .collect::<Result<_, _>>()?,
        _ => return Err(ExportError::ColumnType("material_id")),
    };
    let floats = |d: ColumnData, name: &'static str| match d {
        ColumnData::F32(v) => Ok(v.into_iter().map(f64::from).collect()),
        ColumnData::F64(v) => Ok(v),
        _ => Err(ExportError::ColumnType(name)),
    };
    let density = floats(take("density")?, "density")?;
    let youngs_modulus = floats(take("youngs_modulus")?, "youngs_modulus")?;
    let poisson_ratio = floats(take("poisson_ratio")?, "poisson_ratio")?;
    Ok((
        cloud,
        Annotations {
            material_id,
            density,
            youngs_modulus,
            poisson_ratio,
        },
    ))
}

#[derive(Serialize)]
struct ManifestMaterial<'a> {
    ordinal: u16,
    id: &'a str,
    family: &'a str,
    density: f64,
    youngs_modulus: f64,
    poisson_ratio: f64,
    gaussians: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    gaussians: usize,
    #[serde(flatten)]
    provenance: &'a SceneProvenance,
    columns: [&'static str; 4],
    materials: Vec<ManifestMaterial<'a>>,
    library_snapshot: String,
}

/// Sidecar TOML: provenance, the ordinal table used by `material_id` and the
/// complete library snapshot.
pub fn manifest(scene: &AnnotatedScene<'_>) -> Result<String, ExportError> {
    scene.check()?;
    let counts = material_counts(scene.field);
    let materials = scene
        .library
        .ordinal_table()
        .into_iter()
        .enumerate()
        .map(|(i, r)| ManifestMaterial {
            ordinal: i as u16 + 1,
            id: &r.id,
            family: &r.family,
            density: r.density.nominal,
            youngs_modulus: r.youngs_modulus.nominal,
            poisson_ratio: r.poisson_ratio,
            gaussians: counts.get(i + 1).copied().unwrap_or(0),
        })
        .collect();
    let m = Manifest {
        format: "gsprop-annotated-ply",
        version: MANIFEST_VERSION,
        gaussians: scene.cloud.len(),
        provenance: &scene.provenance,
        columns: ANNOTATION_COLUMNS,
        materials,
        library_snapshot: scene.library.to_toml(),
    };
    Ok(toml::to_string(&m).expect("manifest serializes"))
}

/// Gaussian count per ordinal (index 0 = unresolved).
fn material_counts(field: &PropertyField) -> Vec<usize> {
    let max = field.ordinals.iter().copied().max().unwrap_or(0) as usize;
    let mut counts = vec![0usize; max + 1];
    for &o in &field.ordinals {
        counts[o as usize] += 1;
    }
    counts
}

/// Decade bins `[10^k, 10^(k+1))` with their counts, ascending.
fn log_histogram(values: &[f64]) -> Vec<(i32, usize)> {
    let mut bins: std::collections::BTreeMap<i32, usize> = Default::default();
    for &v in values.iter().filter(|v| **v > 0.0 && v.is_finite()) {
        *bins.entry(v.log10().floor() as i32).or_default() += 1;
    }
    bins.into_iter().collect()
}

/// Plain-text summary: Gaussians per material, optional per-part volumes and
/// masses, and decade histograms of density and Young's modulus.
pub fn export_summary(field: &PropertyField, library: &MaterialLibrary, parts: Option<&PartDecomposition>) -> String {
    let mut out = String::from("[materials]\nmaterial_id family gaussians\n");
    for (o, &n) in material_counts(field).iter().enumerate() {
        if n == 0 {
            continue;
        }
        let (id, family) = match library.by_ordinal(o as u16) {
            Some(r) => (r.id.as_str(), r.family.as_str()),
            None if o == 0 => ("-", "unresolved"),
            None => ("?", "?"),
        };
        let _ = writeln!(out, "{id} {family} {n}");
    }
    if let Some(parts) = parts {
        out.push_str("\n[parts]\npart_id material_id gaussians volume_m3 mass_kg\n");
        let masses = part_masses(parts, library).unwrap_or_else(|_| vec![f64::NAN; parts.parts.len()]);
        for (p, m) in parts.parts.iter().zip(masses) {
            let id = library.by_ordinal(p.material).map_or("?", |r| r.id.as_str());
            let _ = writeln!(out, "{} {id} {} {:.6e} {:.6}", p.part_id, p.gaussians.len(), p.volume, m);
        }
    }
    for (name, values) in [("density_kg_m3", &field.density), ("youngs_modulus_pa", &field.youngs_modulus)] {
        let _ = write!(out, "\n[histogram.{name}]\nbin_lo bin_hi gaussians\n");
        for (k, n) in log_histogram(values) {
            let _ = writeln!(out, "1e{k} 1e{} {n}", k + 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn cloud(n: usize) -> GaussianCloud {
        let mut c = GaussianCloud::default();
        for i in 0..n {
            c.push(
                Vector3::new(i as f64 * 0.1, 0.3, -0.2),
                0.7,
                Vector3::new(0.01, 0.02, 0.03),
                [1.0, 0.0, 0.0, 0.0],
            );
        }
        c
    }

    fn scene<'a>(c: &'a GaussianCloud, f: &'a PropertyField, lib: &'a MaterialLibrary) -> AnnotatedScene<'a> {
        AnnotatedScene {
            cloud: c,
            field: f,
            library: lib,
            provenance: SceneProvenance {
                views: vec!["view_00".into()],
                config_hash: "abc".into(),
                created_epoch_s: None,
            },
        }
    }

    #[test]
    fn wood_scene_round_trip() {
        let lib = MaterialLibrary::seed();
        let c = cloud(10);
        let f = PropertyField::uniform(10, "pine", &lib).unwrap();
        for enc in [PlyEncoding::BinaryLittleEndian, PlyEncoding::Ascii] {
            let bytes = export_annotated_ply(&scene(&c, &f, &lib), enc).unwrap();
            let (back, ann) = parse_annotated_ply(&bytes).unwrap();
            assert!(ann.density.iter().all(|&d| d == lib.get("pine").unwrap().density.nominal));
            assert_eq!(ann.material_id, f.ordinals);
            assert!(back.extra.is_empty());
            let again = write_gaussian_ply(&back, &annotation_columns(&ann.to_field(&lib).unwrap()), enc).unwrap();
            assert_eq!(again, bytes);
        }
    }

    #[test]
    fn unresolved_gaussian_is_named() {
        let lib = MaterialLibrary::seed();
        let c = cloud(3);
        let pine = lib.ordinal("pine").unwrap();
        let f = PropertyField::from_ordinals(
            vec![pine, 0, pine],
            vec![Provenance::Voted { observations: 1 }, Provenance::Unresolved, Provenance::Voted { observations: 1 }],
            &lib,
        )
        .unwrap();
        let err = export_annotated_ply(&scene(&c, &f, &lib), PlyEncoding::Ascii).unwrap_err();
        assert!(matches!(err, ExportError::Unresolved { index: 1 }));
        assert!(err.to_string().contains('1'));
    }

    #[test]
    fn manifest_lists_snapshot_and_counts() {
        let lib = MaterialLibrary::seed();
        let c = cloud(4);
        let f = PropertyField::uniform(4, "steel", &lib).unwrap();
        let text = manifest(&scene(&c, &f, &lib)).unwrap();
        let v: toml::Value = toml::from_str(&text).unwrap();
        assert_eq!(v["gaussians"].as_integer(), Some(4));
        assert_eq!(v["config_hash"].as_str(), Some("abc"));
        assert!(v.get("created_epoch_s").is_none());
        let steel = &v["materials"].as_array().unwrap()[lib.ordinal("steel").unwrap() as usize - 1];
        assert_eq!(steel["id"].as_str(), Some("steel"));
        assert_eq!(steel["gaussians"].as_integer(), Some(4));
        let snap = MaterialLibrary::load(v["library_snapshot"].as_str().unwrap().as_bytes()).unwrap();
        assert_eq!(snap.len(), lib.len());
    }

    #[test]
    fn content_hash_is_framed() {
        let a = ContentHash::new().add("a", b"xy").add("b", b"z").finish();
        let b = ContentHash::new().add("a", b"x").add("b", b"yz").finish();
        let c = ContentHash::new().add("a", b"xy").add("b", b"z").finish();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn summary_rows() {
        let lib = MaterialLibrary::seed();
        let (pine, steel) = (lib.ordinal("pine").unwrap(), lib.ordinal("steel").unwrap());
        let f = PropertyField::from_ordinals(
            vec![pine, steel, steel],
            vec![Provenance::Voted { observations: 1 }; 3],
            &lib,
        )
        .unwrap();
        let s = export_summary(&f, &lib, None);
        let rows: Vec<&str> = s
            .lines()
            .skip(2)
            .take_while(|l| !l.is_empty())
            .collect();
        assert_eq!(rows.len(), 2);
        let total: usize = rows.iter().map(|r| r.rsplit(' ').next().unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 3);

        let empty = PropertyField::from_ordinals(vec![], vec![], &lib).unwrap();
        assert!(export_summary(&empty, &lib, None).starts_with("[materials]\nmaterial_id family gaussians\n\n"));
    }
}
