//! Binary model checkpoints.
//!
//! Versioned header, then one section per layer. Scalars are little-endian;
//! float arrays are length-prefixed (u64 count, then f64 values). Hash
//! families are stored as seeds and rebuilt on load, so a round trip
//! reproduces the exact layer, including cached-hash mode.

use crate::error::{Error, Result};
use crate::hash::HashFamily;
use crate::network::{DenseLayer, Layer, LossHead, Network};
use crate::recon::ReconNet;
use crate::vlayer::{HashMode, LayerMode, VirtualLayer};
use ndarray::Array2;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"FHCK";
const VERSION: u32 = 1;

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.out.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.out.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.out.write_all(&v.to_le_bytes())?)
    }
    fn array(&mut self, values: &[f64]) -> Result<()> {
        self.u64(values.len() as u64)?;
        for v in values {
            self.out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inp: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.inp.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inp.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inp.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn array(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        let mut out = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for _ in 0..len {
            self.inp.read_exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }
}

fn mode_tag(mode: LayerMode) -> u8 {
    match mode {
        LayerMode::HashedNets => 0,
        LayerMode::FunHash => 1,
        LayerMode::FunHashDual => 2,
        LayerMode::MultiHop => 3,
    }
}

fn mode_from_tag(tag: u8) -> Result<LayerMode> {
    Ok(match tag {
        0 => LayerMode::HashedNets,
        1 => LayerMode::FunHash,
        2 => LayerMode::FunHashDual,
        3 => LayerMode::MultiHop,
        other => return Err(Error::Checkpoint(format!("unknown layer mode tag {other}"))),
    })
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    let mut w = Writer { out: BufWriter::new(File::create(path)?) };
    w.out.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u8(match net.head() {
        LossHead::SoftmaxCrossEntropy => 0,
        LossHead::SquaredError => 1,
    })?;
    w.u32(net.layers().len() as u32)?;
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                w.u8(0)?;
                let (d_in, d_out) = d.dims();
                w.u32(d_in as u32)?;
                w.u32(d_out as u32)?;
                w.array(d.weights().as_slice().expect("contiguous weights"))?;
                w.array(d.bias())?;
            }
            Layer::Virtual(v) => {
                w.u8(1)?;
                let (d_in, d_out) = v.dims();
                w.u32(d_in as u32)?;
                w.u32(d_out as u32)?;
                w.u8(mode_tag(v.mode()))?;
                w.u64(v.family().layer_seed())?;
                w.u32(v.bucket_count() as u32)?;
                w.u32(v.num_hashes() as u32)?;
                match v.recon() {
                    Some(r) => {
                        w.u32(r.depth() as u32)?;
                        w.array(r.params())?;
                    }
                    None => {
                        w.u32(0)?;
                        w.array(&[])?;
                    }
                }
                w.array(v.w())?;
                w.array(v.bias())?;
                w.u8(match v.hash_mode() {
                    HashMode::Online => 0,
                    HashMode::Cached => 1,
                })?;
                match v.dual() {
                    Some(d) => {
                        w.u8(1)?;
                        w.u64(d.family().layer_seed())?;
                        w.u32(d.k_prime() as u32)?;
                        w.array(d.w_prime())?;
                    }
                    None => w.u8(0)?,
                }
                w.u32(v.hops().len() as u32)?;
                for hop in v.hops() {
                    w.u64(hop.family().layer_seed())?;
                    w.u32(hop.buckets() as u32)?;
                    w.u32(hop.family().len() as u32)?;
                    w.u32(VirtualLayer::hop_out_len(hop) as u32)?;
                    w.u32(hop.recon().depth() as u32)?;
                    w.array(hop.recon().params())?;
                }
            }
        }
    }
    w.out.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    let mut r = Reader { inp: BufReader::new(File::open(path)?) };
    let mut magic = [0u8; 4];
    r.inp.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:02x?}")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let head = match r.u8()? {
        0 => LossHead::SoftmaxCrossEntropy,
        1 => LossHead::SquaredError,
        other => return Err(Error::Checkpoint(format!("unknown head tag {other}"))),
    };
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        match r.u8()? {
            0 => {
                let d_in = r.u32()? as usize;
                let d_out = r.u32()? as usize;
                let w = r.array()?;
                let b = r.array()?;
                if w.len() != d_in * d_out || b.len() != d_out {
                    return Err(Error::Checkpoint("dense layer size mismatch".into()));
                }
                let w = Array2::from_shape_vec((d_out, d_in), w)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                layers.push(Layer::Dense(DenseLayer::from_parts(w, b)));
            }
            1 => {
                let d_in = r.u32()? as usize;
                let d_out = r.u32()? as usize;
                let mode = mode_from_tag(r.u8()?)?;
                let seed = r.u64()?;
                let k = r.u32()? as usize;
                let u = r.u32()? as usize;
                let g = r.u32()? as usize;
                let alpha = r.array()?;
                let w_vec = r.array()?;
                let bias = r.array()?;
                let cached = r.u8()? == 1;
                let family = HashFamily::new(seed, u, k)?;
                let recon = if g > 0 {
                    let mut net = ReconNet::new(u, g)?;
                    net.set_params(&alpha)?;
                    Some(net)
                } else {
                    None
                };
                let dual = if r.u8()? == 1 {
                    let dual_seed = r.u64()?;
                    let k_prime = r.u32()? as usize;
                    let w_prime = r.array()?;
                    if w_prime.len() != k_prime {
                        return Err(Error::Checkpoint("dual vector size mismatch".into()));
                    }
                    let slots = recon
                        .as_ref()
                        .map(|n| n.param_count())
                        .ok_or_else(|| Error::Checkpoint("dual layer without recon net".into()))?;
                    Some(VirtualLayer::make_dual(
                        HashFamily::new(dual_seed, slots, k_prime)?,
                        w_prime,
                    ))
                } else {
                    None
                };
                let n_hops = r.u32()? as usize;
                let mut hops = Vec::with_capacity(n_hops);
                for _ in 0..n_hops {
                    let hop_seed = r.u64()?;
                    let buckets = r.u32()? as usize;
                    let hop_u = r.u32()? as usize;
                    let out_len = r.u32()? as usize;
                    let hop_g = r.u32()? as usize;
                    let hop_alpha = r.array()?;
                    let mut hop_net = ReconNet::new(hop_u, hop_g)?;
                    hop_net.set_params(&hop_alpha)?;
                    hops.push(VirtualLayer::make_hop(
                        HashFamily::new(hop_seed, hop_u, buckets)?,
                        hop_net,
                        out_len,
                    ));
                }
                let mut layer = VirtualLayer::from_raw_parts(
                    d_in, d_out, mode, family, recon, w_vec, bias, dual, hops,
                );
                if cached {
                    layer = layer.with_cached_hashes()?;
                }
                layers.push(Layer::Virtual(layer));
            }
            other => return Err(Error::Checkpoint(format!("unknown layer tag {other}"))),
        }
    }
    Network::new(layers, head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    #[test]
    fn round_trip_reproduces_outputs_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let layers = vec![
            Layer::Virtual(
                VirtualLayer::funhash(6, 5, 8, 4, 3, 301, &mut rng)
                    .unwrap()
                    .with_cached_hashes()
                    .unwrap(),
            ),
            Layer::Virtual(VirtualLayer::funhash_dual(5, 4, 6, 2, 2, 4, 302, &mut rng).unwrap()),
            Layer::Virtual(
                VirtualLayer::multihop(4, 4, 8, 2, 2, &[4, 2], 2, 2, 303, &mut rng).unwrap(),
            ),
            Layer::Dense(DenseLayer::new(4, 3, &mut rng)),
        ];
        let net = Network::new(layers, LossHead::SoftmaxCrossEntropy).unwrap();

        let dir = tempdir().unwrap();
        let path = dir.path().join("model.fhck");
        save(&net, &path).unwrap();
        let loaded = load(&path).unwrap();

        assert_eq!(loaded.stored_params(), net.stored_params());
        let x = Array2::from_shape_fn((3, 6), |_| rng.gen_range(-1.0..1.0));
        let orig = net.forward(&x).unwrap().output;
        let redo = loaded.forward(&x).unwrap().output;
        assert_eq!(orig, redo);
    }

    #[test]
    fn hashednets_layer_round_trips_without_recon() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let net = Network::new(
            vec![Layer::Virtual(
                VirtualLayer::hashednets(5, 4, 6, 304, &mut rng).unwrap(),
            )],
            LossHead::SquaredError,
        )
        .unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.fhck");
        save(&net, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.head(), LossHead::SquaredError);
        let x = Array2::from_shape_fn((2, 5), |_| rng.gen_range(-1.0..1.0));
        assert_eq!(net.forward(&x).unwrap().output, loaded.forward(&x).unwrap().output);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
        let truncated = dir.path().join("trunc");
        std::fs::write(&truncated, b"FH").unwrap();
        assert!(load(&truncated).is_err());
    }
}
