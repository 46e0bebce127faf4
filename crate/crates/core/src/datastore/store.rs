use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::chunk::{self, ChunkHeader, HEADER_LEN};
use super::manifest::{self, ChunkEntry, Manifest, MANIFEST_FILE};
use super::{io_err, FieldChunk, FieldId, Result, StoreError};
use crate::grid::{GridSpec, Window};
use crate::hours::{format_hour, month_spans, year_month, HourRange};

/// Handle on a store directory. Reads may run concurrently; manifest updates
/// are serialized through an internal lock and published by atomic rename.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    manifest: Mutex<Manifest>,
}

impl Store {
    /// Opens `root`, creating an empty store if it has no manifest yet.
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let path = root.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            Manifest::load(&path)?
        } else {
            let m = Manifest::default();
            m.save(&path)?;
            m
        };
        Ok(Self {
            root,
            manifest: Mutex::new(manifest),
        })
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest = Manifest::load(&root.join(MANIFEST_FILE))?;
        Ok(Self {
            root,
            manifest: Mutex::new(manifest),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> Manifest {
        self.manifest.lock().expect("manifest lock").clone()
    }

    fn chunk_path(chunk: &FieldChunk) -> String {
        let mut dir = chunk.field.name().to_owned();
        if chunk.member > 0 || chunk.field == FieldId::Product(super::ProductId::ForecastPrecip) {
            dir.push_str(&format!("/m{:03}", chunk.member));
        }
        if chunk.field.is_static() {
            format!("{dir}/static.chunk")
        } else {
            let (y, m) = year_month(chunk.start_time);
            format!("{dir}/{y:04}-{m:02}.chunk")
        }
    }

    /// Writes one chunk file (plus mask sidecar) and records it in the manifest.
    /// Time-varying chunks must not cross a calendar-month boundary.
    pub fn write_chunk(&self, chunk: &FieldChunk) -> Result<ChunkEntry> {
        let expected = chunk.n_steps * chunk.grid.cells();
        if chunk.values.len() != expected {
            return Err(StoreError::Shape {
                expected: expected.to_string(),
                found: chunk.values.len().to_string(),
            });
        }
        if !chunk.field.is_static() && month_spans(chunk.time_range()).len() > 1 {
            return Err(StoreError::Shape {
                expected: "a single calendar month".into(),
                found: chunk.time_range().to_string(),
            });
        }
        let header = ChunkHeader {
            field: chunk.field,
            grid: chunk.grid,
            n_steps: chunk.n_steps,
            start_time: chunk.start_time,
            member: chunk.member,
        };
        let mut bytes = Vec::with_capacity(HEADER_LEN + chunk.values.len() * 4);
        bytes.extend_from_slice(&header.encode());
        chunk::encode_payload(&chunk.values, &mut bytes);

        let rel = Self::chunk_path(chunk);
        let path = self.root.join(&rel);
        let mask_path = self.root.join(format!("{rel}.mask"));
        manifest::write_atomic(&path, &bytes)?;
        let mask_sha256 = match chunk.missing.as_deref().filter(|m| m.iter().any(|&x| x)) {
            Some(flags) => {
                let bits = chunk::encode_bitmap(flags);
                manifest::write_atomic(&mask_path, &bits)?;
                Some(manifest::sha256_hex(&bits))
            }
            None => {
                if mask_path.exists() {
                    fs::remove_file(&mask_path).map_err(io_err(&mask_path))?;
                }
                None
            }
        };
        let entry = ChunkEntry {
            field: chunk.field,
            member: chunk.member,
            file: rel,
            start_time: chunk.start_time,
            n_steps: chunk.n_steps,
            grid: chunk.grid,
            sha256: manifest::sha256_hex(&bytes),
            mask_sha256,
        };
        let mut m = self.manifest.lock().expect("manifest lock");
        m.upsert(entry.clone())?;
        m.save(&self.root.join(MANIFEST_FILE))?;
        Ok(entry)
    }

    /// Splits a `[time, lat, lon]` series into monthly chunks and writes them.
    pub fn write_series(&self, series: &FieldChunk) -> Result<Vec<ChunkEntry>> {
        if series.field.is_static() {
            return Ok(vec![self.write_chunk(series)?]);
        }
        let cells = series.grid.cells();
        let mut out = Vec::new();
        for span in month_spans(series.time_range()) {
            let a = (span.start - series.start_time) as usize * cells;
            let b = (span.end - series.start_time) as usize * cells;
            let part = FieldChunk {
                field: series.field,
                member: series.member,
                start_time: span.start,
                n_steps: span.len(),
                grid: series.grid,
                values: series.values[a..b].to_vec(),
                missing: series.missing.as_ref().map(|m| m[a..b].to_vec()),
            };
            out.push(self.write_chunk(&part)?);
        }
        Ok(out)
    }

    /// Grid of `field` (from its first chunk).
    pub fn grid(&self, field: impl Into<FieldId>) -> Result<GridSpec> {
        let field = field.into();
        let m = self.manifest.lock().expect("manifest lock");
        m.chunks
            .iter()
            .find(|c| c.field == field)
            .map(|c| c.grid)
            .ok_or_else(|| StoreError::OutsideExtent {
                field: field.to_string(),
                requested: "any".into(),
                stored: "nothing".into(),
            })
    }

    pub fn coverage(&self, field: impl Into<FieldId>, member: u32) -> Option<HourRange> {
        self.manifest
            .lock()
            .expect("manifest lock")
            .coverage(field.into(), member)
    }

    /// Reads an exact sub-block of a time-varying field.
    pub fn read_window(
        &self,
        field: impl Into<FieldId>,
        member: u32,
        hours: HourRange,
        window: &Window,
    ) -> Result<FieldChunk> {
        let field = field.into();
        let entries: Vec<ChunkEntry> = {
            let m = self.manifest.lock().expect("manifest lock");
            m.entries(field, member)
                .filter(|c| {
                    let r = c.time_range();
                    r.start < hours.end && hours.start < r.end
                })
                .cloned()
                .collect()
        };
        let outside = |stored: String| StoreError::OutsideExtent {
            field: field.to_string(),
            requested: format!(
                "{} lat {:?} lon {:?}",
                if hours.is_empty() {
                    "[]".into()
                } else {
                    hours.to_string()
                },
                window.lat,
                window.lon
            ),
            stored,
        };
        let Some(first) = entries.first() else {
            return Err(outside("no chunks in range".into()));
        };
        let grid = first.grid;
        let mut t = hours.start;
        for e in &entries {
            if e.start_time > t || !e.grid.approx_eq(&grid) {
                return Err(outside(format!("gap at {}", format_hour(t))));
            }
            t = e.time_range().end;
        }
        if t < hours.end {
            return Err(outside(format!("ends at {}", format_hour(t))));
        }
        if !grid.full_window().contains(window) || window.cells() == 0 {
            return Err(outside(format!("{} x {} cells", grid.n_lat, grid.n_lon)));
        }

        let cells = window.cells();
        let mut values = Vec::with_capacity(hours.len() * cells);
        let mut missing: Option<Vec<bool>> = None;
        for e in &entries {
            let span = e.time_range().intersect(&hours);
            let filled = values.len();
            self.read_entry_block(e, span, window, &mut values)?;
            if let Some(bits) = self.read_mask(e)? {
                let flags = missing.get_or_insert_with(|| vec![false; hours.len() * cells]);
                extract_mask(&bits, e, span, window, &mut flags[filled..filled + span.len() * cells]);
            }
        }
        let mut out = FieldChunk::new(field, hours.start, grid.subgrid(window), values)?.with_member(member);
        if let Some(m) = missing {
            out = out.with_missing(m)?;
        }
        Ok(out)
    }

    /// Reads a single-step (static) field over `window`.
    pub fn read_static(&self, field: impl Into<FieldId>, window: &Window) -> Result<FieldChunk> {
        let field = field.into();
        let entry = {
            let m = self.manifest.lock().expect("manifest lock");
            let e = m.entries(field, 0).next().cloned();
            e
        };
        let Some(e) = entry else {
            return Err(StoreError::OutsideExtent {
                field: field.to_string(),
                requested: "static".into(),
                stored: "nothing".into(),
            });
        };
        self.read_window(field, 0, e.time_range(), window)
    }

    /// Reads a whole chunk and checks its checksum.
    pub fn read_entry(&self, e: &ChunkEntry) -> Result<FieldChunk> {
        let path = self.root.join(&e.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if manifest::sha256_hex(&bytes) != e.sha256 {
            return Err(StoreError::Checksum { path });
        }
        let head: &[u8; HEADER_LEN] = bytes
            .get(..HEADER_LEN)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| StoreError::BadMagic { path: path.clone() })?;
        let header = ChunkHeader::decode(head, &path)?;
        let mut values = Vec::new();
        chunk::decode_payload(&bytes[HEADER_LEN..], &mut values);
        let mut out = FieldChunk::new(header.field, header.start_time, header.grid, values)?.with_member(header.member);
        if let Some(bits) = self.read_mask(e)? {
            let flags = (0..out.values.len()).map(|i| chunk::bitmap_get(&bits, i)).collect();
            out = out.with_missing(flags)?;
        }
        Ok(out)
    }

    /// Re-hashes every chunk and sidecar listed in the manifest.
    pub fn verify(&self) -> Result<usize> {
        let m = self.manifest();
        for e in &m.chunks {
            self.read_entry(e)?;
        }
        Ok(m.chunks.len())
    }

    fn read_mask(&self, e: &ChunkEntry) -> Result<Option<Vec<u8>>> {
        let Some(rel) = e.mask_file() else {
            return Ok(None);
        };
        let path = self.root.join(rel);
        let bits = fs::read(&path).map_err(io_err(&path))?;
        if Some(manifest::sha256_hex(&bits)) != e.mask_sha256 {
            return Err(StoreError::Checksum { path });
        }
        Ok(Some(bits))
    }

    /// One contiguous read per time step covering the window's rows.
    fn read_entry_block(&self, e: &ChunkEntry, span: HourRange, window: &Window, out: &mut Vec<f32>) -> Result<()> {
        let path = self.root.join(&e.file);
        let mut f = File::open(&path).map_err(io_err(&path))?;
        let mut head = [0u8; HEADER_LEN];
        f.read_exact(&mut head).map_err(io_err(&path))?;
        let header = ChunkHeader::decode(&head, &path)?;
        if header.n_steps != e.n_steps || header.start_time != e.start_time {
            return Err(StoreError::Shape {
                expected: format!("{} steps from {}", e.n_steps, e.start_time),
                found: format!("{} steps from {}", header.n_steps, header.start_time),
            });
        }
        let (n_lat, n_lon) = (e.grid.n_lat, e.grid.n_lon);
        let row_span = (window.rows() - 1) * n_lon + window.cols();
        let mut buf = vec![0u8; row_span * 4];
        let mut vals = Vec::with_capacity(row_span);
        for t in span.start..span.end {
            let ti = (t - e.start_time) as usize;
            let first = (ti * n_lat + window.lat.start) * n_lon + window.lon.start;
            f.seek(SeekFrom::Start((HEADER_LEN + first * 4) as u64))
                .map_err(io_err(&path))?;
            f.read_exact(&mut buf).map_err(io_err(&path))?;
            vals.clear();
            chunk::decode_payload(&buf, &mut vals);
            for r in 0..window.rows() {
                out.extend_from_slice(&vals[r * n_lon..r * n_lon + window.cols()]);
            }
        }
        Ok(())
    }
}

fn extract_mask(bits: &[u8], e: &ChunkEntry, span: HourRange, window: &Window, out: &mut [bool]) {
    let (n_lat, n_lon) = (e.grid.n_lat, e.grid.n_lon);
    let mut k = 0;
    for t in span.start..span.end {
        let ti = (t - e.start_time) as usize;
        for i in window.lat.clone() {
            for j in window.lon.clone() {
                out[k] = chunk::bitmap_get(bits, (ti * n_lat + i) * n_lon + j);
                k += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{ProductId, VariableId};
    use crate::hours::{from_ymdh, EpochHour};

    fn grid() -> GridSpec {
        GridSpec::new(-10.0, 10.0, 0.0, 30.0, 2.5).unwrap()
    }

    fn series(start: EpochHour, steps: usize) -> FieldChunk {
        let g = grid();
        let values = (0..steps * g.cells())
            .map(|i| (i as f32 * 0.37).sin().abs() * 3.0)
            .collect();
        FieldChunk::new(VariableId::Tp, start, g, values).unwrap()
    }

    #[test]
    fn monthly_split_and_exact_window() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path()).unwrap();
        let start = from_ymdh(2001, 1, 31, 20);
        let s = series(start, 30);
        let entries = store.write_series(&s).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(store.manifest().total_steps(VariableId::Tp.into(), 0), 30);

        let w = Window { lat: 2..6, lon: 3..9 };
        let hours = HourRange::new(start + 2, start + 7);
        let got = store.read_window(VariableId::Tp, 0, hours, &w).unwrap();
        assert_eq!(got.n_steps, 5);
        let g = grid();
        for t in 0..5 {
            for (r, i) in w.lat.clone().enumerate() {
                for (c, j) in w.lon.clone().enumerate() {
                    let want = s.values[((t + 2) * g.n_lat + i) * g.n_lon + j];
                    let have = got.values[(t * w.rows() + r) * w.cols() + c];
                    assert_eq!(want.to_bits(), have.to_bits());
                }
            }
        }
        assert_eq!(got.grid.lat_min, -5.0);
        assert_eq!(got.grid.lon_min, 7.5);

        let reopened = Store::open(dir.path()).unwrap();
        assert_eq!(reopened.verify().unwrap(), 2);
    }

    #[test]
    fn outside_extent_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path()).unwrap();
        let start = from_ymdh(2001, 3, 1, 0);
        store.write_series(&series(start, 10)).unwrap();
        let full = grid().full_window();
        assert!(store
            .read_window(VariableId::Tp, 0, HourRange::new(start + 5, start + 11), &full)
            .is_err());
        let wide = Window { lat: 0..9, lon: 0..3 };
        assert!(store
            .read_window(VariableId::Tp, 0, HourRange::new(start, start + 1), &wide)
            .is_err());
        assert!(store
            .read_window(VariableId::Cp, 0, HourRange::new(start, start + 1), &full)
            .is_err());
    }

    #[test]
    fn mask_sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path()).unwrap();
        let start = from_ymdh(2001, 3, 1, 0);
        let s = series(start, 3);
        let mut flags = vec![false; s.values.len()];
        flags[5] = true;
        flags[s.grid.cells() + 7] = true;
        let s = s.with_missing(flags.clone()).unwrap();
        store.write_series(&s).unwrap();
        let back = store
            .read_window(VariableId::Tp, 0, s.time_range(), &grid().full_window())
            .unwrap();
        assert_eq!(back.missing.as_deref(), Some(&flags[..]));
        assert_eq!(store.read_entry(&store.manifest().chunks[0]).unwrap(), s);
    }

    #[test]
    fn static_and_member_paths() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::create(dir.path()).unwrap();
        let g = grid();
        let orog = FieldChunk::new(VariableId::Orog, 0, g, vec![1.5; g.cells()]).unwrap();
        let e = store.write_chunk(&orog).unwrap();
        assert_eq!(e.file, "orog/static.chunk");
        let back = store.read_static(VariableId::Orog, &g.full_window()).unwrap();
        assert_eq!(back.values, orog.values);

        let fc = series(from_ymdh(2021, 1, 1, 0), 2);
        let fc = FieldChunk {
            field: ProductId::ForecastPrecip.into(),
            ..fc
        }
        .with_member(3);
        let e = store.write_chunk(&fc).unwrap();
        assert_eq!(e.file, "forecast_precip/m003/2021-01.chunk");
    }
}
