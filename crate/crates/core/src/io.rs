//! Binary field dumps and on-disk corrector sets.
//!
//! A dump is a 32-byte header (magic `SUSPFLD1`, `u32` width, `u32` height,
//! `u32` component count, two reserved `u32`, four zero bytes of padding)
//! followed by little-endian `f64` values, row-major with the component index
//! running fastest.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corrector::{CorrectorSet, Matrix};
use crate::error::{Error, Result};
use crate::fields::{ScalarField, StaggeredGrid, TensorField, VelocityField};
use crate::geometry::InclusionSet;

pub const MAGIC: &[u8; 8] = b"SUSPFLD1";
pub const HEADER_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct FieldDump {
    pub width: u32,
    pub height: u32,
    pub components: u32,
    pub values: Vec<f64>,
}

impl FieldDump {
    pub fn new(width: usize, height: usize, components: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height * components {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height}x{components} dump",
                values.len()
            )));
        }
        let cast = |v: usize| u32::try_from(v).map_err(|_| Error::Dimension(format!("{v} exceeds u32")));
        Ok(Self { width: cast(width)?, height: cast(height)?, components: cast(components)?, values })
    }

    /// Interleaves equally sized component arrays.
    pub fn interleave(width: usize, height: usize, parts: &[&[f64]]) -> Result<Self> {
        let m = width * height;
        if parts.iter().any(|p| p.len() != m) {
            return Err(Error::Dimension("component arrays differ in length".into()));
        }
        let mut values = Vec::with_capacity(m * parts.len());
        for k in 0..m {
            values.extend(parts.iter().map(|p| p[k]));
        }
        Self::new(width, height, parts.len(), values)
    }

    /// Component `c` as a contiguous array.
    pub fn component(&self, c: usize) -> Vec<f64> {
        let nc = self.components as usize;
        self.values.iter().skip(c).step_by(nc).copied().collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut header = [0u8; HEADER_LEN];
        header[..8].copy_from_slice(MAGIC);
        header[8..12].copy_from_slice(&self.width.to_le_bytes());
        header[12..16].copy_from_slice(&self.height.to_le_bytes());
        header[16..20].copy_from_slice(&self.components.to_le_bytes());
        w.write_all(&header)?;
        let mut body = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            body.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&body)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)?;
        if &header[..8] != MAGIC {
            return Err(Error::Format("bad field dump magic".into()));
        }
        let word = |k: usize| u32::from_le_bytes(header[k..k + 4].try_into().expect("4 bytes")) as usize;
        let (w, h, c) = (word(8), word(12), word(16));
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != 8 * w * h * c {
            return Err(Error::Format(format!("expected {} payload bytes, found {}", 8 * w * h * c, body.len())));
        }
        let values = body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        Self::new(w, h, c, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }

    fn expect_shape(&self, side: usize, components: usize) -> Result<()> {
        if (self.width as usize, self.height as usize, self.components as usize) != (side, side, components) {
            return Err(Error::Dimension(format!(
                "dump is {}x{}x{}, expected {side}x{side}x{components}",
                self.width, self.height, self.components
            )));
        }
        Ok(())
    }

    pub fn from_scalar(f: &ScalarField) -> Result<Self> {
        let n = f.grid().n();
        Self::new(n, n, 1, f.values().to_vec())
    }

    pub fn to_scalar(&self, grid: StaggeredGrid) -> Result<ScalarField> {
        self.expect_shape(grid.n(), 1)?;
        ScalarField::from_vec(grid, self.values.clone())
    }

    pub fn from_velocity(u: &VelocityField) -> Result<Self> {
        let n = u.grid().n();
        Self::interleave(n, n, &[u.ux(), u.uy()])
    }

    pub fn to_velocity(&self, grid: StaggeredGrid) -> Result<VelocityField> {
        self.expect_shape(grid.n(), 2)?;
        VelocityField::from_parts(grid, self.component(0), self.component(1))
    }

    /// Diagonal entries on the cell grid.
    pub fn tensor_centers(t: &TensorField) -> Result<Self> {
        let n = t.grid().n();
        Self::interleave(n, n, &[&t.xx, &t.yy])
    }

    /// Off-diagonal entries on the node grid.
    pub fn tensor_nodes(t: &TensorField) -> Result<Self> {
        let s = t.grid().node_side();
        Self::interleave(s, s, &[&t.xy, &t.yx])
    }

    pub fn to_tensor(centers: &Self, nodes: &Self, grid: StaggeredGrid) -> Result<TensorField> {
        centers.expect_shape(grid.n(), 2)?;
        nodes.expect_shape(grid.node_side(), 2)?;
        TensorField::from_parts(grid, centers.component(0), centers.component(1), nodes.component(0), nodes.component(1))
    }
}

/// SHA-256 of the canonical TOML form of a geometry, as lowercase hex.
pub fn geometry_hash(set: &InclusionSet) -> Result<String> {
    Ok(hex_digest(set.to_toml()?.as_bytes()))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionManifest {
    pub e: Matrix,
    pub mean_flux: Matrix,
    pub iterations: usize,
    pub momentum_residual: f64,
    pub psi: String,
    pub sigma: String,
    pub flux_centers: String,
    pub flux_nodes: String,
    /// `ζ_{1,12}` on y-faces and `ζ_{2,12}` on x-faces.
    pub zeta: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectorManifest {
    pub grid: StaggeredGrid,
    pub geometry_hash: String,
    pub inclusions: usize,
    pub mu_stiff: f64,
    pub rel_tolerance: f64,
    pub max_iterations: usize,
    pub lambda: f64,
    pub directions: Vec<DirectionManifest>,
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const GEOMETRY_FILE: &str = "geometry.toml";

/// Writes every corrector field as a dump plus `manifest.toml` and `geometry.toml`.
pub fn save_corrector_set(set: &CorrectorSet, dir: &Path) -> Result<CorrectorManifest> {
    set.ensure_complete()?;
    fs::create_dir_all(dir)?;
    let geometry = set.geometry.to_toml()?;
    fs::write(dir.join(GEOMETRY_FILE), &geometry)?;
    let n = set.grid.n();
    let mut directions = Vec::new();
    for (k, d) in set.directions.iter().enumerate() {
        let name = |what: &str| format!("{what}_E{}.bin", k + 1);
        let files = [name("psi"), name("sigma"), name("flux_centers"), name("flux_nodes"), name("zeta")];
        FieldDump::from_velocity(&d.corrector.psi)?.save(&dir.join(&files[0]))?;
        FieldDump::from_scalar(&d.corrector.sigma)?.save(&dir.join(&files[1]))?;
        FieldDump::tensor_centers(&d.flux)?.save(&dir.join(&files[2]))?;
        FieldDump::tensor_nodes(&d.flux)?.save(&dir.join(&files[3]))?;
        FieldDump::interleave(n, n, &[d.zeta.independent(0), d.zeta.independent(1)])?.save(&dir.join(&files[4]))?;
        let [psi, sigma, flux_centers, flux_nodes, zeta] = files;
        directions.push(DirectionManifest {
            e: d.corrector.e,
            mean_flux: d.mean_flux,
            iterations: d.corrector.report.iterations,
            momentum_residual: d.corrector.report.momentum_residual,
            psi,
            sigma,
            flux_centers,
            flux_nodes,
            zeta,
        });
    }
    let manifest = CorrectorManifest {
        grid: set.grid,
        geometry_hash: hex_digest(geometry.as_bytes()),
        inclusions: set.geometry.len(),
        mu_stiff: set.config.mu_stiff,
        rel_tolerance: set.config.rel_tolerance,
        max_iterations: set.config.max_iterations,
        lambda: set.lambda,
        directions,
    };
    fs::write(dir.join(MANIFEST_FILE), toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?)?;
    Ok(manifest)
}

/// A stored corrector set: the manifest, its geometry and the correctors `ψ_E`.
#[derive(Clone, Debug)]
pub struct StoredCorrectors {
    pub manifest: CorrectorManifest,
    pub geometry: InclusionSet,
    pub psi: Vec<VelocityField>,
    pub flux: Vec<TensorField>,
}

/// Reads a directory written by [`save_corrector_set`], checking the geometry hash.
pub fn load_corrector_set(dir: &Path) -> Result<StoredCorrectors> {
    let manifest: CorrectorManifest = toml::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let text = fs::read_to_string(dir.join(GEOMETRY_FILE))?;
    if hex_digest(text.as_bytes()) != manifest.geometry_hash {
        return Err(Error::Format("geometry does not match the manifest hash".into()));
    }
    let geometry = InclusionSet::from_toml(&text)?;
    let g = manifest.grid;
    let mut psi = Vec::new();
    let mut flux = Vec::new();
    for d in &manifest.directions {
        psi.push(FieldDump::load(&dir.join(&d.psi))?.to_velocity(g)?);
        let c = FieldDump::load(&dir.join(&d.flux_centers))?;
        let n = FieldDump::load(&dir.join(&d.flux_nodes))?;
        flux.push(FieldDump::to_tensor(&c, &n, g)?);
    }
    Ok(StoredCorrectors { manifest, geometry, psi, flux })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Boundary;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let d = FieldDump::new(3, 2, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 48);
        assert_eq!(&buf[..8], b"SUSPFLD1");
        assert_eq!(&buf[8..12], &[3, 0, 0, 0]);
        assert_eq!(&buf[12..16], &[2, 0, 0, 0]);
        assert_eq!(&buf[16..20], &[1, 0, 0, 0]);
        assert!(buf[20..32].iter().all(|&b| b == 0));
        assert_eq!(&buf[32..40], &1.0f64.to_le_bytes());
    }

    #[test]
    fn components_run_fastest() {
        let d = FieldDump::interleave(2, 1, &[&[1.0, 2.0], &[10.0, 20.0]]).unwrap();
        assert_eq!(d.values, vec![1.0, 10.0, 2.0, 20.0]);
        assert_eq!(d.component(1), vec![10.0, 20.0]);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let d = FieldDump::new(1, 1, 1, vec![1.0]).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert!(FieldDump::read_from(&buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(matches!(FieldDump::read_from(&buf[..]), Err(Error::Format(_))));
        assert!(FieldDump::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(vals in proptest::collection::vec(any::<f64>(), 12)) {
            let d = FieldDump::new(2, 3, 2, vals).unwrap();
            let mut buf = Vec::new();
            d.write_to(&mut buf).unwrap();
            let back = FieldDump::read_from(&buf[..]).unwrap();
            prop_assert_eq!(back.values.len(), d.values.len());
            for (a, b) in back.values.iter().zip(&d.values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn fields_round_trip_on_both_grids() {
        for b in [Boundary::Periodic, Boundary::NoSlip] {
            let g = StaggeredGrid::new(8, 1.0, b).unwrap();
            let u = VelocityField::from_fn(g, |x, y| [x.sin() * y, y.cos() + x]);
            assert_eq!(FieldDump::from_velocity(&u).unwrap().to_velocity(g).unwrap(), u);
            let t = TensorField::from_fn(g, |x, y| [[x, y * y], [x * y, -x]]);
            let c = FieldDump::tensor_centers(&t).unwrap();
            let n = FieldDump::tensor_nodes(&t).unwrap();
            assert_eq!(FieldDump::to_tensor(&c, &n, g).unwrap(), t);
            let p = ScalarField::from_fn(g, |x, y| x - y);
            assert_eq!(FieldDump::from_scalar(&p).unwrap().to_scalar(g).unwrap(), p);
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = crate::geometry::gen_periodic_lattice(1.0, 1.0, 0.2, 0.1).unwrap();
        let b = crate::geometry::gen_periodic_lattice(1.0, 1.0, 0.21, 0.1).unwrap();
        assert_eq!(geometry_hash(&a).unwrap(), geometry_hash(&a).unwrap());
        assert_ne!(geometry_hash(&a).unwrap(), geometry_hash(&b).unwrap());
        assert_eq!(geometry_hash(&a).unwrap().len(), 64);
        // oracle: SHA-256 of the empty string
        assert_eq!(hex_digest(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
