use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use super::{generate_sdf, SdfError, SdfResolutionSpec, SignedDistanceGrid};
use crate::math::{Aabb, Pt3};
use crate::mesh::TriMesh;

pub const MAGIC: &[u8; 8] = b"CSIMSDF1";

/// Directory for serialized grids; unset disables the disk cache.
pub const CACHE_ENV: &str = "CONTACTSIM_SDF_CACHE";

pub fn write_grid(grid: &SignedDistanceGrid, path: &Path) -> Result<(), SdfError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    for d in grid.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&grid.voxel_size.to_le_bytes())?;
    for x in grid.origin.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    for x in grid.mesh_aabb.min.iter().chain(grid.mesh_aabb.max.iter()) {
        w.write_all(&x.to_le_bytes())?;
    }
    for v in &grid.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<SignedDistanceGrid, SdfError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(SdfError::Format("bad magic".into()));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
    }
    let voxel = cur.f64()?;
    let origin = Pt3::new(cur.f64()?, cur.f64()?, cur.f64()?);
    let min = Pt3::new(cur.f64()?, cur.f64()?, cur.f64()?);
    let max = Pt3::new(cur.f64()?, cur.f64()?, cur.f64()?);
    let n = dims.iter().product::<usize>();
    let body = cur.take(n.checked_mul(4).ok_or_else(|| SdfError::Format("dims overflow".into()))?)?;
    if cur.pos != bytes.len() {
        return Err(SdfError::Format("trailing bytes".into()));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SignedDistanceGrid::from_parts(origin, voxel, dims, values, Aabb::new(min, max))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SdfError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| SdfError::Format("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64, SdfError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

type Key = (u64, SdfResolutionSpec);

fn memory_cache() -> &'static Mutex<HashMap<Key, Arc<SignedDistanceGrid>>> {
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<SignedDistanceGrid>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn cache_path(dir: &Path, key: &Key) -> PathBuf {
    dir.join(format!(
        "{:016x}_r{}_p{}.sdf",
        key.0, key.1.resolution, key.1.padding_voxels
    ))
}

/// [`generate_sdf`] memoized in-process and, when `CONTACTSIM_SDF_CACHE` is set,
/// on disk keyed by mesh content hash and resolution.
pub fn generate_sdf_cached(mesh: &TriMesh, spec: &SdfResolutionSpec) -> Result<Arc<SignedDistanceGrid>, SdfError> {
    let key = (mesh.content_hash(), *spec);
    if let Some(g) = memory_cache().lock().unwrap().get(&key) {
        return Ok(g.clone());
    }
    let dir = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let mut grid = None;
    if let Some(dir) = &dir {
        let path = cache_path(dir, &key);
        if path.exists() {
            match read_grid(&path) {
                Ok(g) => {
                    log::debug!("loaded sdf from {}", path.display());
                    grid = Some(g);
                }
                Err(e) => log::warn!("ignoring unreadable sdf cache {}: {e}", path.display()),
            }
        }
    }
    let grid = match grid {
        Some(g) => g,
        None => {
            let g = generate_sdf(mesh, spec)?;
            if let Some(dir) = &dir {
                let path = cache_path(dir, &key);
                let written = fs::create_dir_all(dir).map_err(SdfError::from).and_then(|_| {
                    // write-then-rename so concurrent readers never see a partial file
                    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
                    write_grid(&g, &tmp)?;
                    fs::rename(&tmp, &path)?;
                    Ok(())
                });
                if let Err(e) = written {
                    log::warn!("could not cache sdf at {}: {e}", path.display());
                }
            }
            g
        }
    };
    let grid = Arc::new(grid);
    memory_cache().lock().unwrap().insert(key, grid.clone());
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn round_trip() {
        let mesh = primitives::icosphere(0.05, 2);
        let g = generate_sdf(&mesh, &SdfResolutionSpec::new(20)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.sdf");
        write_grid(&g, &path).unwrap();
        let back = read_grid(&path).unwrap();
        assert_eq!(g, back);
        let len = fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len, 8 + 12 + 8 + 24 + 48 + 4 * g.values.len());
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.sdf");
        fs::write(&path, b"NOTMAGIC").unwrap();
        assert!(matches!(read_grid(&path), Err(SdfError::Format(_))));
        let g = generate_sdf(&primitives::icosphere(0.05, 1), &SdfResolutionSpec::new(16)).unwrap();
        write_grid(&g, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_grid(&path), Err(SdfError::Format(_))));
    }

    #[test]
    fn memory_cache_returns_same_grid() {
        let mesh = primitives::icosphere(0.03, 1);
        let spec = SdfResolutionSpec::new(17);
        let a = generate_sdf_cached(&mesh, &spec).unwrap();
        let b = generate_sdf_cached(&mesh, &spec).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }
}
