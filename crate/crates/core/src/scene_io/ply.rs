//! Gaussian-splat PLY files.
//!
//! Trainers store pre-activation values: raw opacity goes through a sigmoid,
//! scales are log-scales and rotations are unnormalized quaternions (w first).
//! Parsing applies the activations so downstream code only sees physical
//! values; writing applies the inverse. Vertex properties that are not part of
//! the standard layout are kept as typed columns and written back untouched.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::SceneIoError;

/// Rotations whose norm is already within this of 1 are kept verbatim.
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

/// A typed per-vertex column.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    I8(Vec<i8>),
    U8(Vec<u8>),
    I16(Vec<i16>),
    U16(Vec<u16>),
    I32(Vec<i32>),
    U32(Vec<u32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

macro_rules! each_column {
    ($self:expr, $v:ident => $body:expr) => {
        match $self {
            ColumnData::I8($v) => $body,
            ColumnData::U8($v) => $body,
            ColumnData::I16($v) => $body,
            ColumnData::U16($v) => $body,
            ColumnData::I32($v) => $body,
            ColumnData::U32($v) => $body,
            ColumnData::F32($v) => $body,
            ColumnData::F64($v) => $body,
        }
    };
}

impl ColumnData {
    fn with_capacity(ty: ScalarType, n: usize) -> Self {
        match ty {
            ScalarType::I8 => Self::I8(Vec::with_capacity(n)),
            ScalarType::U8 => Self::U8(Vec::with_capacity(n)),
            ScalarType::I16 => Self::I16(Vec::with_capacity(n)),
            ScalarType::U16 => Self::U16(Vec::with_capacity(n)),
            ScalarType::I32 => Self::I32(Vec::with_capacity(n)),
            ScalarType::U32 => Self::U32(Vec::with_capacity(n)),
            ScalarType::F32 => Self::F32(Vec::with_capacity(n)),
            ScalarType::F64 => Self::F64(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        each_column!(self, v => v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Self::I8(_) => "char",
            Self::U8(_) => "uchar",
            Self::I16(_) => "short",
            Self::U16(_) => "ushort",
            Self::I32(_) => "int",
            Self::U32(_) => "uint",
            Self::F32(_) => "float",
            Self::F64(_) => "double",
        }
    }

    /// Value `i` widened to `f64` (exact for every supported type).
    #[allow(clippy::unnecessary_cast)]
    pub fn get_f64(&self, i: usize) -> f64 {
        each_column!(self, v => v[i] as f64)
    }

    fn push_le(&mut self, b: &[u8], big_endian: bool) {
        macro_rules! rd {
            ($t:ty) => {{
                let arr = b.try_into().expect("slice sized by caller");
                if big_endian {
                    <$t>::from_be_bytes(arr)
                } else {
                    <$t>::from_le_bytes(arr)
                }
            }};
        }
        match self {
            Self::I8(v) => v.push(b[0] as i8),
            Self::U8(v) => v.push(b[0]),
            Self::I16(v) => v.push(rd!(i16)),
            Self::U16(v) => v.push(rd!(u16)),
            Self::I32(v) => v.push(rd!(i32)),
            Self::U32(v) => v.push(rd!(u32)),
            Self::F32(v) => v.push(rd!(f32)),
            Self::F64(v) => v.push(rd!(f64)),
        }
    }

    fn push_str(&mut self, s: &str) -> Result<(), String> {
        fn p<T: std::str::FromStr>(s: &str) -> Result<T, String> {
            s.parse::<T>().map_err(|_| format!("cannot parse `{s}`"))
        }
        match self {
            Self::I8(v) => v.push(p(s)?),
            Self::U8(v) => v.push(p(s)?),
            Self::I16(v) => v.push(p(s)?),
            Self::U16(v) => v.push(p(s)?),
            Self::I32(v) => v.push(p(s)?),
            Self::U32(v) => v.push(p(s)?),
            Self::F32(v) => v.push(p(s)?),
            Self::F64(v) => v.push(p(s)?),
        }
        Ok(())
    }

    fn write_le(&self, i: usize, out: &mut Vec<u8>) {
        each_column!(self, v => out.extend_from_slice(&v[i].to_le_bytes()))
    }

    fn write_ascii(&self, i: usize, out: &mut String) {
        // `Display` for floats prints the shortest string that parses back to
        // the same value, so ascii output round-trips exactly.
        each_column!(self, v => write!(out, "{}", v[i]).expect("string write"))
    }
}

/// A named extra vertex property.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyColumn {
    pub name: String,
    pub data: ColumnData,
}

impl PlyColumn {
    pub fn new(name: impl Into<String>, data: ColumnData) -> Self {
        Self {
            name: name.into(),
            data,
        }
    }
}

/// Spherical-harmonic color coefficients, stored channel-major as in the PLY
/// layout (`f_dc_0..2`, then `f_rest_*`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShCoeffs {
    pub dc: Vec<[f64; 3]>,
    /// Flattened `f_rest_*` values, `rest_per_gaussian` per Gaussian.
    pub rest: Vec<f64>,
    pub rest_per_gaussian: usize,
}

impl ShCoeffs {
    /// SH degree implied by the coefficient count, if it is a valid one.
    pub fn degree(&self) -> Option<u32> {
        if !self.rest_per_gaussian.is_multiple_of(3) {
            return None;
        }
        let per_channel = 1 + self.rest_per_gaussian / 3;
        let d = (per_channel as f64).sqrt().round() as usize;
        (d * d == per_channel).then(|| d as u32 - 1)
    }

    pub fn rest_of(&self, i: usize) -> &[f64] {
        &self.rest[i * self.rest_per_gaussian..(i + 1) * self.rest_per_gaussian]
    }
}

/// A scene of anisotropic 3D Gaussians with activated (physical) parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianCloud {
    /// Centers, meters.
    pub positions: Vec<Vector3<f64>>,
    /// Post-sigmoid opacities in `[0, 1]`.
    pub opacities: Vec<f64>,
    /// Per-axis standard deviations, meters.
    pub scales: Vec<Vector3<f64>>,
    /// Unit quaternions `(w, x, y, z)`.
    pub rotations: Vec<[f64; 4]>,
    pub sh: ShCoeffs,
    /// Non-standard vertex properties preserved from the source file.
    pub extra: Vec<PlyColumn>,
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Appends a Gaussian with zero SH coefficients. Only valid on clouds
    /// without extra columns and with `rest_per_gaussian == 0`.
    pub fn push(&mut self, position: Vector3<f64>, opacity: f64, scale: Vector3<f64>, rotation: [f64; 4]) {
        debug_assert!(self.extra.is_empty() && self.sh.rest_per_gaussian == 0);
        self.positions.push(position);
        self.opacities.push(opacity);
        self.scales.push(scale);
        self.rotations.push(rotation);
        self.sh.dc.push([0.0; 3]);
    }

    pub fn rotation_matrix(&self, i: usize) -> Matrix3<f64> {
        let [w, x, y, z] = self.rotations[i];
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner()
    }

    /// World-frame covariance `R S Sᵀ Rᵀ` of Gaussian `i`.
    pub fn covariance(&self, i: usize) -> Matrix3<f64> {
        let r = self.rotation_matrix(i);
        let s = Matrix3::from_diagonal(&self.scales[i].component_mul(&self.scales[i]));
        r * s * r.transpose()
    }

    /// Axis-aligned bounds of the centers, `None` when empty.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.positions.first()?;
        Some(self.positions.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    /// Diagonal length of the bounding box of the centers.
    pub fn extent(&self) -> f64 {
        self.bounds().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }

    /// Checks array lengths and value ranges.
    pub fn validate(&self) -> Result<(), SceneIoError> {
        let n = self.len();
        let lens = [
            ("opacity", self.opacities.len()),
            ("scale", self.scales.len()),
            ("rot", self.rotations.len()),
            ("f_dc", self.sh.dc.len()),
            ("f_rest", self.sh.rest.len() / self.sh.rest_per_gaussian.max(1)),
        ];
        for (name, got) in lens {
            if got != n && !(name == "f_rest" && self.sh.rest_per_gaussian == 0) {
                return Err(SceneIoError::LengthMismatch {
                    name: name.into(),
                    expected: n,
                    got,
                });
            }
        }
        for c in &self.extra {
            if c.data.len() != n {
                return Err(SceneIoError::LengthMismatch {
                    name: c.name.clone(),
                    expected: n,
                    got: c.data.len(),
                });
            }
        }
        let bad = |property: &str, i: usize, reason: String| SceneIoError::InvalidValue {
            offset: 0,
            property: property.into(),
            reason: format!("Gaussian {i}: {reason}"),
        };
        for i in 0..n {
            let a = self.opacities[i];
            if !(0.0..=1.0).contains(&a) {
                return Err(bad("opacity", i, format!("{a} outside [0, 1]")));
            }
            let s = self.scales[i];
            if !s.iter().all(|v| v.is_finite() && *v > 0.0) {
                return Err(bad("scale", i, format!("{s:?} not strictly positive")));
            }
            let q = self.rotations[i];
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(bad("rot", i, format!("quaternion norm {norm}")));
            }
        }
        Ok(())
    }
}

pub fn decode_opacity(raw: f64) -> f64 {
    if raw >= 0.0 {
        1.0 / (1.0 + (-raw).exp())
    } else {
        let e = raw.exp();
        e / (1.0 + e)
    }
}

pub fn encode_opacity(alpha: f64) -> f64 {
    alpha.ln() - (-alpha).ln_1p()
}

pub fn decode_scale(raw: f64) -> f64 {
    raw.exp()
}

pub fn encode_scale(scale: f64) -> f64 {
    scale.ln()
}

/// Normalizes a `(w, x, y, z)` quaternion. Quaternions already unit within
/// 1e-6 are returned unchanged, and a zero quaternion maps to identity.
pub fn normalize_rotation(q: [f64; 4]) -> [f64; 4] {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    if (norm - 1.0).abs() <= UNIT_TOLERANCE {
        return q;
    }
    q.map(|v| v / norm)
}

struct PropertyDef {
    name: String,
    ty: ScalarType,
    /// Count type for list properties.
    list: Option<ScalarType>,
}

struct ElementDef {
    name: String,
    count: usize,
    props: Vec<PropertyDef>,
}

#[derive(Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
}

struct Header {
    format: Format,
    elements: Vec<ElementDef>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, SceneIoError> {
    let malformed = |offset: usize, reason: &str| SceneIoError::MalformedHeader {
        offset,
        reason: reason.to_string(),
    };
    let mut offset = 0;
    let mut format = None;
    let mut elements: Vec<ElementDef> = Vec::new();
    let mut first = true;
    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(malformed(offset, "missing end_header"));
        };
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| malformed(offset, "header is not valid UTF-8"))?
            .trim_end_matches('\r');
        let line_offset = offset;
        offset += nl + 1;
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next().unwrap_or("");
        if first {
            if keyword != "ply" {
                return Err(malformed(line_offset, "missing `ply` magic"));
            }
            first = false;
            continue;
        }
        match keyword {
            "format" => {
                let f = match tokens.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    Some("binary_big_endian") => Format::BinaryBe,
                    _ => return Err(malformed(line_offset, "unsupported format")),
                };
                format = Some(f);
            }
            "comment" | "obj_info" | "" => {}
            "element" => {
                let name = tokens.next().ok_or_else(|| malformed(line_offset, "element without name"))?;
                let count = tokens
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| malformed(line_offset, "element without valid count"))?;
                elements.push(ElementDef {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| malformed(line_offset, "property before any element"))?;
                let t = tokens.next().ok_or_else(|| malformed(line_offset, "property without type"))?;
                let def = if t == "list" {
                    let ct = tokens.next().and_then(ScalarType::parse);
                    let it = tokens.next().and_then(ScalarType::parse);
                    let name = tokens.next();
                    match (ct, it, name) {
                        (Some(ct), Some(it), Some(name)) => PropertyDef {
                            name: name.to_string(),
                            ty: it,
                            list: Some(ct),
                        },
                        _ => return Err(malformed(line_offset, "bad list property")),
                    }
                } else {
                    let ty = ScalarType::parse(t)
                        .ok_or_else(|| malformed(line_offset, &format!("unknown property type `{t}`")))?;
                    let name = tokens.next().ok_or_else(|| malformed(line_offset, "property without name"))?;
                    PropertyDef {
                        name: name.to_string(),
                        ty,
                        list: None,
                    }
                };
                element.props.push(def);
            }
            "end_header" => break,
            other => return Err(malformed(line_offset, &format!("unexpected keyword `{other}`"))),
        }
    }
    let format = format.ok_or_else(|| malformed(0, "missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
    })
}

/// Whitespace tokenizer over an ascii body that remembers byte offsets.
struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok().map(|s| (start, s))
    }
}

/// Reads every element's scalar properties. Returns the vertex columns.
fn read_vertex_columns(bytes: &[u8], header: &Header) -> Result<Vec<PlyColumn>, SceneIoError> {
    let mut vertex_columns = Vec::new();
    let mut pos = header.body_offset;
    let mut tokens = Tokens {
        bytes,
        pos: header.body_offset,
    };
    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        if is_vertex {
            if let Some(p) = element.props.iter().find(|p| p.list.is_some()) {
                return Err(SceneIoError::MalformedHeader {
                    offset: header.body_offset,
                    reason: format!("list property `{}` in vertex element", p.name),
                });
            }
        }
        let mut columns: Vec<ColumnData> = element
            .props
            .iter()
            .map(|p| ColumnData::with_capacity(p.ty, if is_vertex { element.count } else { 0 }))
            .collect();
        for vertex in 0..element.count {
            for (prop, column) in element.props.iter().zip(columns.iter_mut()) {
                let truncated = |offset| SceneIoError::Truncated {
                    offset,
                    property: prop.name.clone(),
                    vertex,
                };
                match header.format {
                    Format::Ascii => {
                        let n_items = match prop.list {
                            Some(_) => {
                                let (off, tok) = tokens.next().ok_or_else(|| truncated(tokens.pos))?;
                                tok.parse::<usize>().map_err(|_| SceneIoError::InvalidValue {
                                    offset: off,
                                    property: prop.name.clone(),
                                    reason: format!("bad list length `{tok}`"),
                                })?
                            }
                            None => 1,
                        };
                        for _ in 0..n_items {
                            let (off, tok) = tokens.next().ok_or_else(|| truncated(tokens.pos))?;
                            if is_vertex {
                                column.push_str(tok).map_err(|reason| SceneIoError::InvalidValue {
                                    offset: off,
                                    property: prop.name.clone(),
                                    reason,
                                })?;
                            }
                        }
                    }
                    Format::BinaryLe | Format::BinaryBe => {
                        let big = header.format == Format::BinaryBe;
                        let n_items = match prop.list {
                            Some(ct) => {
                                let end = pos + ct.size();
                                let b = bytes.get(pos..end).ok_or_else(|| truncated(pos))?;
                                let mut c = ColumnData::with_capacity(ct, 1);
                                c.push_le(b, big);
                                pos = end;
                                c.get_f64(0) as usize
                            }
                            None => 1,
                        };
                        let size = prop.ty.size();
                        for _ in 0..n_items {
                            let b = bytes.get(pos..pos + size).ok_or_else(|| truncated(pos))?;
                            if is_vertex {
                                column.push_le(b, big);
                            }
                            pos += size;
                        }
                    }
                }
            }
        }
        if is_vertex {
            vertex_columns = element
                .props
                .iter()
                .zip(columns)
                .map(|(p, data)| PlyColumn::new(p.name.clone(), data))
                .collect();
        }
    }
    Ok(vertex_columns)
}

/// Parses a 3DGS PLY file (ascii or binary) and applies activations.
pub fn parse_gaussian_ply(bytes: &[u8]) -> Result<GaussianCloud, SceneIoError> {
    let header = parse_header(bytes)?;
    let vertex = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| SceneIoError::MalformedHeader {
            offset: header.body_offset,
            reason: "no vertex element".into(),
        })?;
    let n = vertex.count;
    let mut columns = read_vertex_columns(bytes, &header)?;

    let header_end = header.body_offset;
    let mut take = |name: &str| -> Result<ColumnData, SceneIoError> {
        let idx = columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| SceneIoError::MissingProperty {
                offset: header_end,
                property: name.to_string(),
            })?;
        Ok(columns.remove(idx).data)
    };
    let x = take("x")?;
    let y = take("y")?;
    let z = take("z")?;
    let opacity = take("opacity")?;
    let scale = [take("scale_0")?, take("scale_1")?, take("scale_2")?];
    let rot = [take("rot_0")?, take("rot_1")?, take("rot_2")?, take("rot_3")?];
    let dc = [take("f_dc_0")?, take("f_dc_1")?, take("f_dc_2")?];

    let mut rest_cols: Vec<(usize, ColumnData)> = Vec::new();
    let mut i = 0;
    while i < columns.len() {
        let suffix = columns[i].name.strip_prefix("f_rest_").and_then(|s| s.parse::<usize>().ok());
        match suffix {
            Some(k) => rest_cols.push((k, columns.remove(i).data)),
            None => i += 1,
        }
    }
    rest_cols.sort_by_key(|(k, _)| *k);
    for (expected, (k, _)) in rest_cols.iter().enumerate() {
        if *k != expected {
            return Err(SceneIoError::MissingProperty {
                offset: header_end,
                property: format!("f_rest_{expected}"),
            });
        }
    }

    let mut cloud = GaussianCloud {
        positions: (0..n).map(|i| Vector3::new(x.get_f64(i), y.get_f64(i), z.get_f64(i))).collect(),
        opacities: (0..n).map(|i| decode_opacity(opacity.get_f64(i))).collect(),
        scales: (0..n)
            .map(|i| Vector3::from_fn(|a, _| decode_scale(scale[a].get_f64(i))))
            .collect(),
        rotations: (0..n)
            .map(|i| normalize_rotation(std::array::from_fn(|a| rot[a].get_f64(i))))
            .collect(),
        sh: ShCoeffs {
            dc: (0..n).map(|i| std::array::from_fn(|a| dc[a].get_f64(i))).collect(),
            rest: Vec::with_capacity(n * rest_cols.len()),
            rest_per_gaussian: rest_cols.len(),
        },
        extra: columns,
    };
    for i in 0..n {
        for (_, c) in &rest_cols {
            cloud.sh.rest.push(c.get_f64(i));
        }
    }
    if let Some(i) = cloud.scales.iter().position(|s| !s.iter().all(|v| v.is_finite() && *v > 0.0)) {
        return Err(SceneIoError::InvalidValue {
            offset: header_end,
            property: "scale".into(),
            reason: format!("vertex {i}: activated scale {:?} is not finite and positive", cloud.scales[i]),
        });
    }
    Ok(cloud)
}

/// Output encoding for [`write_gaussian_ply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    #[default]
    BinaryLittleEndian,
    Ascii,
}

/// Picks `float` storage when every value survives the trip through `f32`
/// and the parse-side decoding, `double` otherwise.
pub fn float_column(raw: Vec<f64>, reproduces: impl Fn(usize, f64) -> bool) -> ColumnData {
    let narrow: Vec<f32> = raw.iter().map(|&v| v as f32).collect();
    if narrow.iter().enumerate().all(|(i, &v)| reproduces(i, v as f64)) {
        ColumnData::F32(narrow)
    } else {
        ColumnData::F64(raw)
    }
}

/// A raw value near `guess` that `decode` maps exactly onto `target`.
/// `decode(encode(x))` can miss `x` by an ulp or two, which would make
/// parse/write/parse drift; values that came out of `decode` always have an
/// exact preimage close to the analytic inverse. Falls back to `guess`.
fn exact_preimage(target: f64, guess: f64, decode: impl Fn(f64) -> f64) -> f64 {
    if !guess.is_finite() || decode(guess) == target {
        return guess;
    }
    // Bisect to the neighbourhood first: near zero one step of `target`
    // spans many ulps of the raw value.
    let span = guess.abs() * 1e-9 + 1e-12;
    let (mut lo, mut hi) = (guess - span, guess + span);
    let mut center = guess;
    if decode(lo) < target && decode(hi) >= target {
        loop {
            let mid = lo + (hi - lo) / 2.0;
            if mid <= lo || mid >= hi {
                break;
            }
            if decode(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        center = hi;
    }
    // Rounding makes `decode` only approximately monotone, so finish with
    // a scan outward from the bisection point.
    let (mut up, mut down) = (center, center);
    for _ in 0..=64 {
        if decode(up) == target {
            return up;
        }
        if decode(down) == target {
            return down;
        }
        up = up.next_up();
        down = down.next_down();
    }
    guess
}

fn standard_columns(cloud: &GaussianCloud) -> Vec<PlyColumn> {
    let n = cloud.len();
    let mut cols = Vec::new();
    for (a, name) in ["x", "y", "z"].iter().enumerate() {
        let raw: Vec<f64> = cloud.positions.iter().map(|p| p[a]).collect();
        let data = float_column(raw.clone(), |i, v| v == raw[i]);
        cols.push(PlyColumn::new(*name, data));
    }
    for a in 0..3 {
        let raw: Vec<f64> = cloud.sh.dc.iter().map(|c| c[a]).collect();
        let data = float_column(raw.clone(), |i, v| v == raw[i]);
        cols.push(PlyColumn::new(format!("f_dc_{a}"), data));
    }
    for k in 0..cloud.sh.rest_per_gaussian {
        let raw: Vec<f64> = (0..n).map(|i| cloud.sh.rest_of(i)[k]).collect();
        let data = float_column(raw.clone(), |i, v| v == raw[i]);
        cols.push(PlyColumn::new(format!("f_rest_{k}"), data));
    }
    let raw: Vec<f64> = cloud
        .opacities
        .iter()
        .map(|&a| exact_preimage(a, encode_opacity(a), decode_opacity))
        .collect();
    cols.push(PlyColumn::new(
        "opacity",
        float_column(raw, |i, v| decode_opacity(v) == cloud.opacities[i]),
    ));
    for a in 0..3 {
        let raw: Vec<f64> = cloud
            .scales
            .iter()
            .map(|s| exact_preimage(s[a], encode_scale(s[a]), decode_scale))
            .collect();
        cols.push(PlyColumn::new(
            format!("scale_{a}"),
            float_column(raw, |i, v| decode_scale(v) == cloud.scales[i][a]),
        ));
    }
    // Quaternions are decided jointly: normalization couples the components.
    let narrow_ok = cloud
        .rotations
        .iter()
        .all(|q| normalize_rotation(q.map(|v| v as f32 as f64)) == *q);
    for a in 0..4 {
        let data = if narrow_ok {
            ColumnData::F32(cloud.rotations.iter().map(|q| q[a] as f32).collect())
        } else {
            ColumnData::F64(cloud.rotations.iter().map(|q| q[a]).collect())
        };
        cols.push(PlyColumn::new(format!("rot_{a}"), data));
    }
    cols
}

/// Serializes a cloud (inverse activations applied) plus optional extra
/// per-vertex columns. Extra columns replace preserved columns of the same name.
pub fn write_gaussian_ply(
    cloud: &GaussianCloud,
    extra_fields: &[PlyColumn],
    encoding: PlyEncoding,
) -> Result<Vec<u8>, SceneIoError> {
    let n = cloud.len();
    for c in cloud.extra.iter().chain(extra_fields) {
        if c.data.len() != n {
            return Err(SceneIoError::LengthMismatch {
                name: c.name.clone(),
                expected: n,
                got: c.data.len(),
            });
        }
    }
    let mut columns = standard_columns(cloud);
    for c in cloud.extra.iter().filter(|c| !extra_fields.iter().any(|e| e.name == c.name)) {
        columns.push(c.clone());
    }
    columns.extend(extra_fields.iter().cloned());
    for (i, c) in columns.iter().enumerate() {
        if c.name.is_empty() || c.name.contains(char::is_whitespace) {
            return Err(SceneIoError::InvalidValue {
                offset: 0,
                property: c.name.clone(),
                reason: "property names must be non-empty and contain no whitespace".into(),
            });
        }
        if columns[..i].iter().any(|o| o.name == c.name) {
            return Err(SceneIoError::InvalidValue {
                offset: 0,
                property: c.name.clone(),
                reason: "duplicate property name".into(),
            });
        }
    }

    let mut header = String::from("ply\n");
    header.push_str(match encoding {
        PlyEncoding::BinaryLittleEndian => "format binary_little_endian 1.0\n",
        PlyEncoding::Ascii => "format ascii 1.0\n",
    });
    let _ = writeln!(header, "element vertex {n}");
    for c in &columns {
        let _ = writeln!(header, "property {} {}", c.data.type_name(), c.name);
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    match encoding {
        PlyEncoding::BinaryLittleEndian => {
            for i in 0..n {
                for c in &columns {
                    c.data.write_le(i, &mut out);
                }
            }
        }
        PlyEncoding::Ascii => {
            let mut line = String::new();
            for i in 0..n {
                line.clear();
                for (k, c) in columns.iter().enumerate() {
                    if k > 0 {
                        line.push(' ');
                    }
                    c.data.write_ascii(i, &mut line);
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
        }
    }
    Ok(out)
}
