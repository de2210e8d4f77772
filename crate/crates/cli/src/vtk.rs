//! Legacy ASCII VTK structured-points files.
//!
//! Values are written with 17 significant digits so that [`read_vtk`]
//! recovers them bit-exactly. Periodic meshes are unwrapped: the duplicated
//! seam nodes repeat the values of their periodic images.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use topopt_core::CartesianMesh;

pub const HEADER: &str = "# vtk DataFile Version 3.0";

#[derive(Debug, Clone, PartialEq)]
pub enum VtkData {
    Scalars(Vec<f64>),
    /// Three components per point.
    Vectors(Vec<[f64; 3]>),
}

impl VtkData {
    pub fn len(&self) -> usize {
        match self {
            VtkData::Scalars(v) => v.len(),
            VtkData::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VtkField {
    pub name: String,
    pub data: VtkData,
}

impl VtkField {
    pub fn scalars(name: &str, values: Vec<f64>) -> Self {
        VtkField {
            name: name.to_string(),
            data: VtkData::Scalars(values),
        }
    }

    /// Nodal vector field with `ncomp ≤ 3` interleaved components per node.
    pub fn vectors(name: &str, values: &[f64], ncomp: usize) -> Self {
        let data = values
            .chunks(ncomp.max(1))
            .map(|c| {
                let mut v = [0.0; 3];
                v[..c.len().min(3)].copy_from_slice(&c[..c.len().min(3)]);
                v
            })
            .collect();
        VtkField {
            name: name.to_string(),
            data: VtkData::Vectors(data),
        }
    }
}

/// A parsed (or to-be-written) structured-points dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct VtkFile {
    pub title: String,
    pub dimensions: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub fields: Vec<VtkField>,
}

impl VtkFile {
    /// Dataset over the unwrapped node grid of `mesh`; `fields` hold one
    /// entry per mesh node and are expanded across periodic seams.
    pub fn from_mesh(mesh: &CartesianMesh, title: &str, fields: Vec<VtkField>) -> Result<Self, VtkError> {
        let map = mesh.unwrapped_node_map();
        let dims = mesh.unwrapped_nodes_per_axis();
        let mut origin = [0.0; 3];
        let mut spacing = [1.0; 3];
        for i in 0..mesh.dim() {
            origin[i] = mesh.origin()[i];
            spacing[i] = mesh.delta()[i];
        }
        let mut out = Vec::with_capacity(fields.len());
        for f in fields {
            if f.data.len() != mesh.n_nodes() {
                return Err(VtkError::FieldLength {
                    name: f.name,
                    expected: mesh.n_nodes(),
                    got: f.data.len(),
                });
            }
            let data = match f.data {
                VtkData::Scalars(v) => VtkData::Scalars(map.iter().map(|&n| v[n]).collect()),
                VtkData::Vectors(v) => VtkData::Vectors(map.iter().map(|&n| v[n]).collect()),
            };
            out.push(VtkField { name: f.name, data });
        }
        Ok(VtkFile {
            title: title.to_string(),
            dimensions: dims,
            origin,
            spacing,
            fields: out,
        })
    }

    pub fn n_points(&self) -> usize {
        self.dimensions.iter().product()
    }

    pub fn field(&self, name: &str) -> Option<&VtkField> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let [nx, ny, nz] = self.dimensions;
        let _ = writeln!(s, "{HEADER}");
        let _ = writeln!(s, "{}", self.title.replace('\n', " "));
        let _ = writeln!(s, "ASCII");
        let _ = writeln!(s, "DATASET STRUCTURED_POINTS");
        let _ = writeln!(s, "DIMENSIONS {nx} {ny} {nz}");
        let [ox, oy, oz] = self.origin;
        let _ = writeln!(s, "ORIGIN {ox:.16e} {oy:.16e} {oz:.16e}");
        let [dx, dy, dz] = self.spacing;
        let _ = writeln!(s, "SPACING {dx:.16e} {dy:.16e} {dz:.16e}");
        if !self.fields.is_empty() {
            let _ = writeln!(s, "POINT_DATA {}", self.n_points());
        }
        for f in &self.fields {
            match &f.data {
                VtkData::Scalars(v) => {
                    let _ = writeln!(s, "SCALARS {} double 1", f.name);
                    let _ = writeln!(s, "LOOKUP_TABLE default");
                    for x in v {
                        let _ = writeln!(s, "{x:.16e}");
                    }
                }
                VtkData::Vectors(v) => {
                    let _ = writeln!(s, "VECTORS {} double", f.name);
                    for [a, b, c] in v {
                        let _ = writeln!(s, "{a:.16e} {b:.16e} {c:.16e}");
                    }
                }
            }
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), VtkError> {
        std::fs::write(path, self.to_text()).map_err(|source| VtkError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VtkError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("field '{name}' has {got} values, mesh has {expected} nodes")]
    FieldLength {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Points beyond this are rejected before any allocation.
pub const MAX_POINTS: usize = 1 << 26;

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_nonempty(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            self.last = i + 1;
            let t = l.trim();
            if !t.is_empty() {
                return Some((i + 1, t));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), VtkError> {
        self.next_nonempty().ok_or_else(|| VtkError::Parse {
            line: self.last + 1,
            message: format!("unexpected end of file, expected {what}"),
        })
    }
}

fn perr(line: usize, message: impl Into<String>) -> VtkError {
    VtkError::Parse {
        line,
        message: message.into(),
    }
}

fn keyword<'a>(line: usize, text: &'a str, key: &str) -> Result<Vec<&'a str>, VtkError> {
    let mut parts = text.split_whitespace();
    if parts.next() != Some(key) {
        return Err(perr(line, format!("expected {key}")));
    }
    Ok(parts.collect())
}

fn floats<const N: usize>(line: usize, parts: &[&str]) -> Result<[f64; N], VtkError> {
    if parts.len() != N {
        return Err(perr(line, format!("expected {N} numbers")));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| perr(line, format!("invalid number '{p}'")))?;
    }
    Ok(out)
}

/// Parse a legacy ASCII structured-points file.
pub fn read_vtk(text: &str) -> Result<VtkFile, VtkError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (l, h) = lines.expect("header")?;
    if !h.starts_with("# vtk DataFile Version") {
        return Err(perr(l, "missing '# vtk DataFile Version' header"));
    }
    let title = match lines.inner.next() {
        Some((i, t)) => {
            lines.last = i + 1;
            t.trim().to_string()
        }
        None => return Err(perr(l + 1, "missing title line")),
    };
    let (l, fmt) = lines.expect("ASCII")?;
    if fmt != "ASCII" {
        return Err(perr(l, "only ASCII files are supported"));
    }
    let (l, ds) = lines.expect("DATASET")?;
    if keyword(l, ds, "DATASET")? != ["STRUCTURED_POINTS"] {
        return Err(perr(l, "only DATASET STRUCTURED_POINTS is supported"));
    }
    let (l, d) = lines.expect("DIMENSIONS")?;
    let parts = keyword(l, d, "DIMENSIONS")?;
    if parts.len() != 3 {
        return Err(perr(l, "expected 3 dimensions"));
    }
    let mut dimensions = [0usize; 3];
    for (o, p) in dimensions.iter_mut().zip(&parts) {
        *o = p.parse().map_err(|_| perr(l, format!("invalid dimension '{p}'")))?;
        if *o == 0 {
            return Err(perr(l, "dimensions must be positive"));
        }
    }
    let n_points = dimensions
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .filter(|&n| n <= MAX_POINTS)
        .ok_or_else(|| perr(l, "too many points"))?;
    let (l, o) = lines.expect("ORIGIN")?;
    let origin = floats::<3>(l, &keyword(l, o, "ORIGIN")?)?;
    let (l, s) = lines.expect("SPACING")?;
    let spacing = floats::<3>(l, &keyword(l, s, "SPACING")?)?;

    let mut fields = Vec::new();
    if let Some((l, pd)) = lines.next_nonempty() {
        let parts = keyword(l, pd, "POINT_DATA")?;
        let n: usize = match parts.as_slice() {
            [n] => n.parse().map_err(|_| perr(l, "invalid POINT_DATA count"))?,
            _ => return Err(perr(l, "expected POINT_DATA <count>")),
        };
        if n != n_points {
            return Err(perr(l, format!("POINT_DATA {n} does not match {n_points} points")));
        }
        while let Some((l, head)) = lines.next_nonempty() {
            let parts: Vec<&str> = head.split_whitespace().collect();
            match parts.as_slice() {
                ["SCALARS", name, _ty] | ["SCALARS", name, _ty, "1"] => {
                    let name = name.to_string();
                    let (l2, lt) = lines.expect("LOOKUP_TABLE")?;
                    if keyword(l2, lt, "LOOKUP_TABLE")?.len() != 1 {
                        return Err(perr(l2, "expected LOOKUP_TABLE <name>"));
                    }
                    let mut v = Vec::new();
                    while v.len() < n_points {
                        let (l3, t) = lines.expect("scalar values")?;
                        for p in t.split_whitespace() {
                            if v.len() == n_points {
                                return Err(perr(l3, "too many scalar values"));
                            }
                            v.push(p.parse().map_err(|_| perr(l3, format!("invalid number '{p}'")))?);
                        }
                    }
                    fields.push(VtkField {
                        name,
                        data: VtkData::Scalars(v),
                    });
                }
                ["VECTORS", name, _ty] => {
                    let name = name.to_string();
                    let mut flat: Vec<f64> = Vec::new();
                    while flat.len() < 3 * n_points {
                        let (l3, t) = lines.expect("vector values")?;
                        for p in t.split_whitespace() {
                            if flat.len() == 3 * n_points {
                                return Err(perr(l3, "too many vector values"));
                            }
                            flat.push(p.parse().map_err(|_| perr(l3, format!("invalid number '{p}'")))?);
                        }
                    }
                    let v = flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
                    fields.push(VtkField {
                        name,
                        data: VtkData::Vectors(v),
                    });
                }
                _ => return Err(perr(l, format!("unsupported data block '{head}'"))),
            }
        }
    }
    Ok(VtkFile {
        title,
        dimensions,
        origin,
        spacing,
        fields,
    })
}
