//! Network weight checkpoints.
//!
//! Files ending in `.json` hold the serde form of [`KPNetworkConfig`]. Any
//! other path uses the binary layout below, all integers `u64` and all reals
//! `f64`, little-endian:
//!
//! ```text
//! magic            8 bytes  "KPCNET01"
//! variant          u64      0 = lite, 1 = medium, 2 = large
//! seed             u64
//! first_dim        u64
//! output_dim       u64
//! base_cell_size   f64
//! neighbor_cap     u64      u64::MAX = unlimited
//! position_norm    f64
//! velocity_norm    f64
//! layer_count      u64
//! per layer:
//!   in_channels    u64
//!   out_channels   u64
//!   kernel_count   u64
//!   strided        u64      0 or 1
//!   radius         f64
//!   influence_sigma f64
//!   cell_size      f64
//!   kernel_points  kernel_count x 3 f64
//!   weights        kernel_count x in x out f64, [kernel][in][out]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{KPConvLayerConfig, KPNetworkConfig, KpConvError, NetworkVariant};

const MAGIC: &[u8; 8] = b"KPCNET01";
/// Guards allocations when reading untrusted files.
const MAX_ELEMENTS: u64 = 1 << 28;

fn put_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64, KpConvError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64, KpConvError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_count<R: Read>(r: &mut R, what: &str) -> Result<usize, KpConvError> {
    let v = get_u64(r)?;
    if v > MAX_ELEMENTS {
        return Err(KpConvError::Checkpoint(format!("{what} = {v} is implausibly large")));
    }
    Ok(v as usize)
}

pub fn write_checkpoint<W: Write>(w: &mut W, net: &KPNetworkConfig) -> Result<(), KpConvError> {
    w.write_all(MAGIC)?;
    let variant = match net.variant {
        NetworkVariant::Lite => 0,
        NetworkVariant::Medium => 1,
        NetworkVariant::Large => 2,
    };
    put_u64(w, variant)?;
    put_u64(w, net.seed)?;
    put_u64(w, net.first_dim as u64)?;
    put_u64(w, net.output_dim as u64)?;
    put_f64(w, net.base_cell_size)?;
    put_u64(w, net.neighbor_cap.map_or(u64::MAX, |c| c as u64))?;
    put_f64(w, net.position_norm)?;
    put_f64(w, net.velocity_norm)?;
    put_u64(w, net.layers.len() as u64)?;
    for layer in &net.layers {
        put_u64(w, layer.in_channels as u64)?;
        put_u64(w, layer.out_channels as u64)?;
        put_u64(w, layer.kernel_points.len() as u64)?;
        put_u64(w, layer.strided as u64)?;
        put_f64(w, layer.radius)?;
        put_f64(w, layer.influence_sigma)?;
        put_f64(w, layer.cell_size)?;
        for y in &layer.kernel_points {
            for v in y.iter() {
                put_f64(w, *v)?;
            }
        }
        for v in &layer.weights {
            put_f64(w, *v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<KPNetworkConfig, KpConvError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(KpConvError::Checkpoint("bad magic".into()));
    }
    let variant = match get_u64(r)? {
        0 => NetworkVariant::Lite,
        1 => NetworkVariant::Medium,
        2 => NetworkVariant::Large,
        v => return Err(KpConvError::Checkpoint(format!("unknown variant tag {v}"))),
    };
    let seed = get_u64(r)?;
    let first_dim = get_count(r, "first_dim")?;
    let output_dim = get_count(r, "output_dim")?;
    let base_cell_size = get_f64(r)?;
    let neighbor_cap = match get_u64(r)? {
        u64::MAX => None,
        c => Some(c as usize),
    };
    let position_norm = get_f64(r)?;
    let velocity_norm = get_f64(r)?;
    let layer_count = get_count(r, "layer_count")?;
    let mut layers = Vec::with_capacity(layer_count.min(64));
    for _ in 0..layer_count {
        let in_channels = get_count(r, "in_channels")?;
        let out_channels = get_count(r, "out_channels")?;
        let k = get_count(r, "kernel_count")?;
        let strided = match get_u64(r)? {
            0 => false,
            1 => true,
            v => return Err(KpConvError::Checkpoint(format!("strided flag {v}"))),
        };
        let radius = get_f64(r)?;
        let influence_sigma = get_f64(r)?;
        let cell_size = get_f64(r)?;
        let mut kernel_points = Vec::with_capacity(k);
        for _ in 0..k {
            kernel_points.push(Vector3::new(get_f64(r)?, get_f64(r)?, get_f64(r)?));
        }
        let n = (k as u64) * (in_channels as u64) * (out_channels as u64);
        if n > MAX_ELEMENTS {
            return Err(KpConvError::Checkpoint(format!("layer with {n} weights")));
        }
        let mut weights = Vec::with_capacity(n as usize);
        for _ in 0..n {
            weights.push(get_f64(r)?);
        }
        layers.push(KPConvLayerConfig {
            kernel_points,
            radius,
            influence_sigma,
            cell_size,
            in_channels,
            out_channels,
            strided,
            weights,
        });
    }
    let net = KPNetworkConfig {
        variant,
        layers,
        first_dim,
        output_dim,
        base_cell_size,
        neighbor_cap,
        position_norm,
        velocity_norm,
        seed,
    };
    net.validate()?;
    Ok(net)
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn save_checkpoint(path: &Path, net: &KPNetworkConfig) -> Result<(), KpConvError> {
    let mut w = BufWriter::new(File::create(path)?);
    if is_json(path) {
        serde_json::to_writer(&mut w, net).map_err(|e| KpConvError::Checkpoint(e.to_string()))?;
    } else {
        write_checkpoint(&mut w, net)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<KPNetworkConfig, KpConvError> {
    let mut r = BufReader::new(File::open(path)?);
    if is_json(path) {
        let net: KPNetworkConfig =
            serde_json::from_reader(r).map_err(|e| KpConvError::Checkpoint(e.to_string()))?;
        net.validate()?;
        Ok(net)
    } else {
        read_checkpoint(&mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let net = KPNetworkConfig::new(NetworkVariant::Lite, 77);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(read_checkpoint(&mut buf.as_slice()).unwrap(), net);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = KPNetworkConfig::with_options(NetworkVariant::Lite, 5, 0.2, None);
        for name in ["w.bin", "w.json"] {
            let path = dir.path().join(name);
            save_checkpoint(&path, &net).unwrap();
            assert_eq!(load_checkpoint(&path).unwrap(), net);
        }
    }

    #[test]
    fn rejects_corruption() {
        let net = KPNetworkConfig::new(NetworkVariant::Lite, 1);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(KpConvError::Checkpoint(_))));
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(&mut &truncated[..]), Err(KpConvError::Io(_))));
        // Break the channel chain: layer 0 out_channels.
        let mut chain = buf.clone();
        let off = 8 + 9 * 8 + 8;
        chain[off..off + 8].copy_from_slice(&9u64.to_le_bytes());
        assert!(read_checkpoint(&mut chain.as_slice()).is_err());
    }
}
