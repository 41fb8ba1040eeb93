//! Binary containers for coefficient fields and solved corrector sets.
//!
//! Both formats are little-endian with an eight-byte magic header and a
//! fixed-size grid header, followed by raw `f64` blocks. The corrector
//! container additionally stores an explicit index map, the per-slot
//! relative residuals, and the iteration counts, so a solve can be audited
//! without recomputing anything.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::cell::{CorrectorHs1, CorrectorHs2, PeriodicVectorField};
use crate::error::{Error, Result};
use crate::microstructure::{CellGrid, CoefficientField};
use crate::scaling::Regime;
use crate::tensor::{Tensor4, Tensor5, Tensor6};

/// Magic header of a coefficient-field container.
pub const FIELD_MAGIC: [u8; 8] = *b"GHFLD001";
/// Magic header of a corrector container.
pub const CORRECTOR_MAGIC: [u8; 8] = *b"GHCOR001";

/// A solved corrector family, tagged by the cell problem it solves.
#[derive(Clone, Debug)]
pub enum CorrectorSet {
    Hs1(CorrectorHs1),
    Hs2(CorrectorHs2),
}

impl CorrectorSet {
    pub fn grid(&self) -> &CellGrid {
        match self {
            Self::Hs1(c) => c.grid(),
            Self::Hs2(c) => c.grid(),
        }
    }

    pub fn regime(&self) -> Regime {
        match self {
            Self::Hs1(_) => Regime::Hs1,
            Self::Hs2(_) => Regime::Hs2,
        }
    }

    pub fn residuals(&self) -> &[f64] {
        match self {
            Self::Hs1(c) => c.residuals(),
            Self::Hs2(c) => c.residuals(),
        }
    }

    pub fn iterations(&self) -> &[usize] {
        match self {
            Self::Hs1(c) => c.iterations(),
            Self::Hs2(c) => c.iterations(),
        }
    }
}

fn family_code(set: &CorrectorSet) -> u32 {
    match set {
        CorrectorSet::Hs1(_) => 1,
        CorrectorSet::Hs2(_) => 2,
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads exactly `buf.len()` bytes, reporting truncation as a format error
/// rather than a bare I/O failure.
fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::Format("file ends before the declared payload".into())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, count: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    read_exact(r, &mut bytes)?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("stored {what}")));
    }
    Ok(values)
}

fn check_magic(r: &mut impl Read, expected: &[u8; 8], what: &str) -> Result<()> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic)?;
    if magic != *expected {
        return Err(Error::Format(format!(
            "not a {what} container: bad magic {magic:?}"
        )));
    }
    Ok(())
}

fn read_grid(r: &mut impl Read) -> Result<CellGrid> {
    let d = read_u32(r)? as usize;
    let n = read_u32(r)? as usize;
    CellGrid::new(d, n)
}

fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after the declared payload".into())),
    }
}

/// Writes a coefficient field: magic, grid header, then the K, S, and A
/// blocks in node order.
pub fn write_field(path: &Path, field: &CoefficientField) -> Result<()> {
    let grid = field.grid();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&FIELD_MAGIC)?;
    write_u32(&mut w, grid.dim() as u32)?;
    write_u32(&mut w, grid.nodes_per_axis() as u32)?;
    for t in field.k_field() {
        write_f64s(&mut w, t.data())?;
    }
    for t in field.s_field() {
        write_f64s(&mut w, t.data())?;
    }
    for t in field.a_field() {
        write_f64s(&mut w, t.data())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a coefficient field written by [`write_field`].
pub fn read_field(path: &Path) -> Result<CoefficientField> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, &FIELD_MAGIC, "coefficient-field")?;
    let grid = read_grid(&mut r)?;
    let d = grid.dim();
    let nn = grid.num_nodes();

    let raw_k = read_f64s(&mut r, nn * d.pow(4), "stiffness block")?;
    let raw_s = read_f64s(&mut r, nn * d.pow(5), "coupling block")?;
    let raw_a = read_f64s(&mut r, nn * d.pow(6), "second-gradient block")?;
    expect_eof(&mut r)?;

    let mut k = Vec::with_capacity(nn);
    let mut s = Vec::with_capacity(nn);
    let mut a = Vec::with_capacity(nn);
    for node in 0..nn {
        let kc = &raw_k[node * d.pow(4)..(node + 1) * d.pow(4)];
        k.push(Tensor4::from_fn(d, |i, j, kk, l| {
            kc[((i * d + j) * d + kk) * d + l]
        })?);
        let sc = &raw_s[node * d.pow(5)..(node + 1) * d.pow(5)];
        s.push(Tensor5::from_fn(d, |i, j, kk, l, m| {
            sc[(((i * d + j) * d + kk) * d + l) * d + m]
        })?);
        let ac = &raw_a[node * d.pow(6)..(node + 1) * d.pow(6)];
        a.push(Tensor6::from_fn(d, |i, j, kk, al, be, ga| {
            ac[((((i * d + j) * d + kk) * d + al) * d + be) * d + ga]
        })?);
    }
    CoefficientField::from_parts(grid, k, s, a)
}

/// Writes a corrector set: magic, grid header, family code, slot count, the
/// explicit index map, residuals, iteration counts, and the nodal fields.
pub fn write_correctors(path: &Path, set: &CorrectorSet) -> Result<()> {
    let grid = set.grid();
    let d = grid.dim();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CORRECTOR_MAGIC)?;
    write_u32(&mut w, d as u32)?;
    write_u32(&mut w, grid.nodes_per_axis() as u32)?;
    write_u32(&mut w, family_code(set))?;

    match set {
        CorrectorSet::Hs1(c) => {
            write_u32(&mut w, (d * d) as u32)?;
            for alpha in 0..d {
                for beta in 0..d {
                    write_u32(&mut w, alpha as u32)?;
                    write_u32(&mut w, beta as u32)?;
                }
            }
            write_f64s(&mut w, c.residuals())?;
            for &it in c.iterations() {
                write_u64(&mut w, it as u64)?;
            }
            for alpha in 0..d {
                for beta in 0..d {
                    write_f64s(&mut w, c.field(alpha, beta).data())?;
                }
            }
        }
        CorrectorSet::Hs2(c) => {
            write_u32(&mut w, (d * d * d) as u32)?;
            for alpha in 0..d {
                for beta in 0..d {
                    for gamma in 0..d {
                        write_u32(&mut w, alpha as u32)?;
                        write_u32(&mut w, beta as u32)?;
                        write_u32(&mut w, gamma as u32)?;
                    }
                }
            }
            write_f64s(&mut w, c.residuals())?;
            for &it in c.iterations() {
                write_u64(&mut w, it as u64)?;
            }
            for alpha in 0..d {
                for beta in 0..d {
                    for gamma in 0..d {
                        write_f64s(&mut w, c.field(alpha, beta, gamma).data())?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a corrector set written by [`write_correctors`], verifying the
/// family code, the slot count, and the canonical index map.
pub fn read_correctors(path: &Path) -> Result<CorrectorSet> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, &CORRECTOR_MAGIC, "corrector")?;
    let grid = read_grid(&mut r)?;
    let d = grid.dim();
    let family = read_u32(&mut r)?;
    let count = read_u32(&mut r)? as usize;

    let (rank, expected_count) = match family {
        1 => (2usize, d * d),
        2 => (3usize, d * d * d),
        other => {
            return Err(Error::Format(format!(
                "unknown corrector family code {other}"
            )))
        }
    };
    if count != expected_count {
        return Err(Error::Format(format!(
            "corrector container declares {count} slots, family needs {expected_count}"
        )));
    }

    for slot in 0..count {
        let mut expected_index = [0usize; 3];
        let mut rem = slot;
        for r_i in (0..rank).rev() {
            expected_index[r_i] = rem % d;
            rem /= d;
        }
        for &want in expected_index.iter().take(rank) {
            let got = read_u32(&mut r)? as usize;
            if got != want {
                return Err(Error::Format(format!(
                    "index map entry {got} out of canonical order (expected {want})"
                )));
            }
        }
    }

    let residuals = read_f64s(&mut r, count, "residuals")?;
    let mut iterations = Vec::with_capacity(count);
    for _ in 0..count {
        iterations.push(read_u64(&mut r)? as usize);
    }

    let field_len = d * grid.num_nodes();
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        let data = read_f64s(&mut r, field_len, "corrector field")?;
        fields.push(PeriodicVectorField::from_stored(grid, data)?);
    }
    expect_eof(&mut r)?;

    match family {
        1 => Ok(CorrectorSet::Hs1(CorrectorHs1::from_parts(
            grid, fields, residuals, iterations,
        )?)),
        _ => Ok(CorrectorSet::Hs2(CorrectorHs2::from_parts(
            grid, fields, residuals, iterations,
        )?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{solve_all_hs1, solve_all_hs2, SolverParams};
    use crate::microstructure::{laminate, PhaseTensors};
    use std::fs;

    fn two_phase_field(d: usize, n: usize) -> CoefficientField {
        let grid = CellGrid::new(d, n).unwrap();
        let mut k_soft = Tensor4::isotropic(1.0, 0.8, d).unwrap();
        k_soft.add_scaled(&Tensor4::identity_action(d).unwrap(), 0.4).unwrap();
        let soft = PhaseTensors::new(
            k_soft,
            Tensor5::zeros(d).unwrap(),
            Tensor6::diagonal(0.5, d).unwrap(),
        )
        .unwrap();
        let mut k_stiff = Tensor4::isotropic(2.0, 1.5, d).unwrap();
        k_stiff.add_scaled(&Tensor4::identity_action(d).unwrap(), 0.7).unwrap();
        let stiff = PhaseTensors::new(
            k_stiff,
            Tensor5::zeros(d).unwrap(),
            Tensor6::diagonal(1.25, d).unwrap(),
        )
        .unwrap();
        laminate(grid, 0, 0.5, &soft, &stiff).unwrap()
    }

    #[test]
    fn field_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cell.field");
        let field = two_phase_field(2, 8);
        write_field(&path, &field).unwrap();
        let back = read_field(&path).unwrap();

        assert_eq!(*back.grid(), *field.grid());
        for lin in 0..field.grid().num_nodes() {
            assert_eq!(back.k_at(lin).data(), field.k_at(lin).data());
            assert_eq!(back.s_at(lin).data(), field.s_at(lin).data());
            assert_eq!(back.a_at(lin).data(), field.a_at(lin).data());
        }
    }

    #[test]
    fn corrector_round_trips_are_exact_for_both_families() {
        let dir = tempfile::tempdir().unwrap();
        let field = two_phase_field(2, 8);
        let params = SolverParams::default();

        let hs1 = solve_all_hs1(&field, &params).unwrap();
        let path1 = dir.path().join("hs1.bin");
        write_correctors(&path1, &CorrectorSet::Hs1(hs1.clone())).unwrap();
        let back1 = match read_correctors(&path1).unwrap() {
            CorrectorSet::Hs1(c) => c,
            CorrectorSet::Hs2(_) => panic!("family confused on read"),
        };
        assert_eq!(back1.residuals(), hs1.residuals());
        assert_eq!(back1.iterations(), hs1.iterations());
        for alpha in 0..2 {
            for beta in 0..2 {
                assert_eq!(
                    back1.field(alpha, beta).data(),
                    hs1.field(alpha, beta).data()
                );
            }
        }

        let hs2 = solve_all_hs2(&field, &params).unwrap();
        let path2 = dir.path().join("hs2.bin");
        write_correctors(&path2, &CorrectorSet::Hs2(hs2.clone())).unwrap();
        let back2 = match read_correctors(&path2).unwrap() {
            CorrectorSet::Hs2(c) => c,
            CorrectorSet::Hs1(_) => panic!("family confused on read"),
        };
        assert_eq!(back2.residuals(), hs2.residuals());
        for alpha in 0..2 {
            for beta in 0..2 {
                for gamma in 0..2 {
                    assert_eq!(
                        back2.field(alpha, beta, gamma).data(),
                        hs2.field(alpha, beta, gamma).data()
                    );
                }
            }
        }
    }

    #[test]
    fn corrupted_and_truncated_containers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cell.field");
        let field = two_phase_field(1, 8);
        write_field(&path, &field).unwrap();

        let good = fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] ^= 0xff;
        let bad_path = dir.path().join("bad_magic.field");
        fs::write(&bad_path, &bad_magic).unwrap();
        assert!(matches!(read_field(&bad_path), Err(Error::Format(_))));

        let truncated = &good[..good.len() - 9];
        let trunc_path = dir.path().join("truncated.field");
        fs::write(&trunc_path, truncated).unwrap();
        assert!(matches!(read_field(&trunc_path), Err(Error::Format(_))));

        let mut padded = good.clone();
        padded.extend_from_slice(&[0u8; 4]);
        let pad_path = dir.path().join("padded.field");
        fs::write(&pad_path, &padded).unwrap();
        assert!(matches!(read_field(&pad_path), Err(Error::Format(_))));

        let missing = dir.path().join("missing.field");
        assert!(matches!(read_field(&missing), Err(Error::Io(_))));
    }

    #[test]
    fn corrector_container_checks_family_and_index_map() {
        let dir = tempfile::tempdir().unwrap();
        let field = two_phase_field(1, 8);
        let hs1 = solve_all_hs1(&field, &SolverParams::default()).unwrap();
        let path = dir.path().join("hs1.bin");
        write_correctors(&path, &CorrectorSet::Hs1(hs1)).unwrap();

        let good = fs::read(&path).unwrap();

        // Family code lives after magic (8) + d (4) + n (4).
        let mut bad_family = good.clone();
        bad_family[16] = 9;
        let fam_path = dir.path().join("bad_family.bin");
        fs::write(&fam_path, &bad_family).unwrap();
        assert!(matches!(read_correctors(&fam_path), Err(Error::Format(_))));

        // The index map starts after the count field at byte 20.
        let mut bad_map = good.clone();
        bad_map[24] = 7;
        let map_path = dir.path().join("bad_map.bin");
        fs::write(&map_path, &bad_map).unwrap();
        assert!(matches!(read_correctors(&map_path), Err(Error::Format(_))));

        let trunc_path = dir.path().join("truncated.bin");
        fs::write(&trunc_path, &good[..good.len() - 16]).unwrap();
        assert!(matches!(read_correctors(&trunc_path), Err(Error::Format(_))));
    }
}
