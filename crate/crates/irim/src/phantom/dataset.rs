//! The IRIMDATA container: a little-endian binary file of fully sampled
//! records with one CRC32 per record payload. Sample values are stored as
//! 4-byte floats, so the first write quantizes; rewriting what was read
//! back is byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, FormatError, Result};
use crate::mri::{AcquisitionMeta, CoilStack, ComplexImage};
use crate::nn::FeatureMap;

pub const DATASET_MAGIC: &[u8; 8] = b"IRIMDATA";
pub const DATASET_VERSION: u32 = 1;

/// One fully sampled acquisition with both target conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub kdata: CoilStack,
    pub target_esc: FeatureMap,
    pub target_rss: FeatureMap,
    pub meta: AcquisitionMeta,
}

/// IEEE CRC32 (reflected, polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let lsb = crc & 1;
            crc >>= 1;
            if lsb != 0 {
                crc ^= 0xEDB8_8320;
            }
        }
    }
    !crc
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f32(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&(v as f32).to_le_bytes());
}

fn record_payload(record: &DatasetRecord) -> Vec<u8> {
    let (h, w, k) = (
        record.kdata.height(),
        record.kdata.width(),
        record.kdata.coil_count(),
    );
    let mut buf = Vec::with_capacity(13 + 4 * (2 * k * h * w + 2 * h * w));
    push_u32(&mut buf, h as u32);
    push_u32(&mut buf, w as u32);
    push_u32(&mut buf, k as u32);
    buf.push(record.meta.one_hot_index() as u8);
    for coil in record.kdata.coils() {
        for z in &coil.data {
            push_f32(&mut buf, z.re);
            push_f32(&mut buf, z.im);
        }
    }
    for &v in &record.target_esc.data {
        push_f32(&mut buf, v);
    }
    for &v in &record.target_rss.data {
        push_f32(&mut buf, v);
    }
    buf
}

pub fn write_dataset(records: &[DatasetRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(FormatError::EmptyRecordList.into());
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    out.write_all(&(records.len() as u32).to_le_bytes())?;
    for record in records {
        let payload = record_payload(record);
        out.write_all(&payload)?;
        out.write_all(&crc32(&payload).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_exact(reader: &mut impl Read, buf: &mut [u8], context: &'static str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(FormatError::Truncated { context })
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(reader: &mut impl Read, context: &'static str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(reader, &mut buf, context)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact(&mut reader, &mut magic, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(FormatError::BadMagic {
            expected: "IRIMDATA",
        }
        .into());
    }
    let version = read_u32(&mut reader, "version")?;
    if version != DATASET_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: DATASET_VERSION,
            got: version,
        }
        .into());
    }
    let count = read_u32(&mut reader, "record count")? as usize;

    let mut records = Vec::with_capacity(count);
    for index in 0..count {
        let h = read_u32(&mut reader, "record height")? as usize;
        let w = read_u32(&mut reader, "record width")? as usize;
        let k = read_u32(&mut reader, "record coil count")? as usize;
        let mut meta_byte = [0u8; 1];
        read_exact(&mut reader, &mut meta_byte, "record meta")?;

        let body_len = 4 * (2 * k * h * w + 2 * h * w);
        let mut body = vec![0u8; body_len];
        read_exact(&mut reader, &mut body, "record samples")?;
        let stored_crc = read_u32(&mut reader, "record checksum")?;

        let mut payload = Vec::with_capacity(13 + body_len);
        push_u32(&mut payload, h as u32);
        push_u32(&mut payload, w as u32);
        push_u32(&mut payload, k as u32);
        payload.push(meta_byte[0]);
        payload.extend_from_slice(&body);
        if crc32(&payload) != stored_crc {
            return Err(FormatError::ChecksumMismatch { index }.into());
        }

        if meta_byte[0] >= 4 {
            return Err(FormatError::InvalidMeta(meta_byte[0]).into());
        }
        let meta = AcquisitionMeta::from_one_hot_index(meta_byte[0] as usize, k)?;

        let mut floats = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let coils = (0..k)
            .map(|_| {
                let data: Vec<Complex64> = (0..h * w)
                    .map(|_| {
                        let re = floats.next().unwrap();
                        let im = floats.next().unwrap();
                        Complex64::new(re, im)
                    })
                    .collect();
                ComplexImage::new(h, w, data)
            })
            .collect::<Result<Vec<_>>>()?;
        let esc: Vec<f64> = (0..h * w).map(|_| floats.next().unwrap()).collect();
        let rss: Vec<f64> = (0..h * w).map(|_| floats.next().unwrap()).collect();

        records.push(DatasetRecord {
            kdata: CoilStack::new(coils)?,
            target_esc: FeatureMap::new(1, h, w, esc)?,
            target_rss: FeatureMap::new(1, h, w, rss)?,
            meta,
        });
    }
    Ok(records)
}
