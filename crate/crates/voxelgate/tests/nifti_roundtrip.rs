use proptest::prelude::*;
use voxelgate::nifti::{self, Datatype, Endian, HEADER_SIZE, VOX_OFFSET};
use voxelgate::Error;
use voxelgate_core::Tensor;

/// Rewrites a little-endian single-file image in big-endian byte order.
fn to_big_endian(le: &[u8], dt: Datatype) -> Vec<u8> {
    let mut b = le.to_vec();
    let mut swap = |off: usize, width: usize| b[off..off + width].reverse();
    swap(0, 4);
    for i in 0..8 {
        swap(40 + 2 * i, 2);
    }
    swap(70, 2);
    swap(72, 2);
    for i in 0..8 {
        swap(76 + 4 * i, 4);
    }
    for off in [108, 112, 116] {
        swap(off, 4);
    }
    let w = dt.bytes();
    for i in (VOX_OFFSET..le.len()).step_by(w) {
        swap(i, w);
    }
    b
}

fn arb_volume(dt: Datatype) -> impl Strategy<Value = Tensor<f64>> {
    (1usize..6, 1usize..6, 1usize..6).prop_flat_map(move |(l, w, s)| {
        let n = l * w * s;
        let vals: BoxedStrategy<Vec<f64>> = match dt {
            Datatype::U8 => prop::collection::vec(any::<u8>().prop_map(f64::from), n).boxed(),
            Datatype::I16 => prop::collection::vec(any::<i16>().prop_map(f64::from), n).boxed(),
            _ => prop::collection::vec(
                any::<u32>().prop_map(f32::from_bits).prop_filter("finite", |f| f.is_finite()).prop_map(f64::from),
                n,
            )
            .boxed(),
        };
        vals.prop_map(move |v| Tensor::new(&[l, w, s], v).unwrap())
    })
}

fn bits(t: &Tensor<f64>) -> Vec<u64> {
    t.values().iter().map(|v| v.to_bits()).collect()
}

fn check_roundtrip(vol: &Tensor<f64>, dt: Datatype) {
    let le = nifti::encode(vol, dt, [1.0, 1.5, 2.0]).unwrap();
    assert_eq!(le.len(), VOX_OFFSET + vol.len() * dt.bytes());
    let variants = [le.clone(), nifti::gzip(&le).unwrap(), to_big_endian(&le, dt), nifti::gzip(&to_big_endian(&le, dt)).unwrap()];
    for (i, bytes) in variants.iter().enumerate() {
        let back = nifti::decode(bytes).unwrap();
        assert_eq!(back.header.endian, if i >= 2 { Endian::Big } else { Endian::Little });
        assert_eq!(back.extents(), <[usize; 3]>::try_from(vol.extents()).unwrap());
        assert_eq!(back.header.spacing(), [1.0, 1.5, 2.0]);
        assert_eq!(bits(&back.data), bits(vol), "variant {i}");
        assert_eq!(nifti::encode(&back.data, dt, back.header.spacing()).unwrap(), le, "re-encode of variant {i}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uint8_roundtrip_is_bit_exact(vol in arb_volume(Datatype::U8)) {
        check_roundtrip(&vol, Datatype::U8);
    }

    #[test]
    fn int16_roundtrip_is_bit_exact(vol in arb_volume(Datatype::I16)) {
        check_roundtrip(&vol, Datatype::I16);
    }

    #[test]
    fn float32_roundtrip_is_bit_exact(vol in arb_volume(Datatype::F32)) {
        check_roundtrip(&vol, Datatype::F32);
    }

    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..800)) {
        let _ = nifti::decode(&bytes);
    }

    #[test]
    fn mutated_headers_never_panic(
        flips in prop::collection::vec((0usize..VOX_OFFSET + 64, any::<u8>()), 1..12),
        truncate in prop::option::of(0usize..VOX_OFFSET + 64),
        gz in any::<bool>(),
    ) {
        let vol = Tensor::new(&[4, 4, 4], (0..64).map(f64::from).collect()).unwrap();
        let mut bytes = nifti::encode(&vol, Datatype::I16, [1.0; 3]).unwrap();
        for (off, v) in flips {
            if off < bytes.len() {
                bytes[off] = v;
            }
        }
        if let Some(t) = truncate {
            bytes.truncate(t);
        }
        if gz {
            bytes = nifti::gzip(&bytes).unwrap();
        }
        let _ = nifti::decode(&bytes);
    }
}

#[test]
fn fortran_order_maps_to_row_major() {
    let vol = Tensor::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
    let bytes = nifti::encode(&vol, Datatype::U8, [1.0; 3]).unwrap();
    // first axis fastest on disk
    let payload = &bytes[VOX_OFFSET..];
    assert_eq!(payload[0], 0);
    assert_eq!(payload[1], 12);
    assert_eq!(payload[2], 4);
    assert_eq!(payload[6], 1);
}

#[test]
fn scaling_is_applied() {
    let vol = Tensor::new(&[1, 1, 2], vec![3.0, 5.0]).unwrap();
    let mut bytes = nifti::encode(&vol, Datatype::I16, [1.0; 3]).unwrap();
    bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
    bytes[116..120].copy_from_slice(&(-1.0f32).to_le_bytes());
    assert_eq!(nifti::decode(&bytes).unwrap().data.values(), &[5.0, 9.0]);
    bytes[112..116].copy_from_slice(&0.0f32.to_le_bytes());
    assert_eq!(nifti::decode(&bytes).unwrap().data.values(), &[2.0, 4.0]);
}

fn sample() -> Vec<u8> {
    nifti::encode(&Tensor::new(&[2, 2, 2], vec![1.0; 8]).unwrap(), Datatype::U8, [1.0; 3]).unwrap()
}

#[test]
fn header_errors() {
    let mut b = sample();
    b[344..348].copy_from_slice(b"abc\0");
    assert!(matches!(nifti::decode(&b), Err(Error::BadMagic(m)) if &m == b"abc\0"));

    let mut b = sample();
    b[70..72].copy_from_slice(&128i16.to_le_bytes());
    assert!(matches!(nifti::decode(&b), Err(Error::UnsupportedDatatype(128))));

    let b = sample();
    assert!(matches!(nifti::decode(&b[..b.len() - 3]), Err(Error::TruncatedData { expected: 8, found: 5 })));
    assert!(matches!(nifti::decode(&b[..100]), Err(Error::CorruptHeader(_))));

    let mut b = sample();
    b[0..4].copy_from_slice(&349i32.to_le_bytes());
    assert!(matches!(nifti::decode(&b), Err(Error::CorruptHeader(_))));

    let mut b = sample();
    b[72..74].copy_from_slice(&16i16.to_le_bytes());
    assert!(matches!(nifti::decode(&b), Err(Error::CorruptHeader(_))));

    let mut b = sample();
    b[344..348].copy_from_slice(b"ni1\0");
    assert!(matches!(nifti::decode(&b), Err(Error::CorruptHeader(_))));

    let mut b = sample();
    b[40..42].copy_from_slice(&4i16.to_le_bytes());
    b[48..50].copy_from_slice(&2i16.to_le_bytes());
    assert!(matches!(nifti::decode(&b), Err(Error::CorruptHeader(_))));
}

#[test]
fn non_finite_payload_is_rejected() {
    let mut b = nifti::encode(&Tensor::new(&[1, 1, 2], vec![0.0, 1.0]).unwrap(), Datatype::F32, [1.0; 3]).unwrap();
    b[VOX_OFFSET..VOX_OFFSET + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(nifti::decode(&b), Err(Error::Core(voxelgate_core::Error::NonFiniteInput))));
}

#[test]
fn unrepresentable_values_overflow() {
    let t = |v: f64| Tensor::new(&[1, 1, 1], vec![v]).unwrap();
    assert!(matches!(nifti::encode(&t(256.0), Datatype::U8, [1.0; 3]), Err(Error::ValueOverflow(_))));
    assert!(matches!(nifti::encode(&t(-1.0), Datatype::U8, [1.0; 3]), Err(Error::ValueOverflow(_))));
    assert!(matches!(nifti::encode(&t(0.5), Datatype::I16, [1.0; 3]), Err(Error::ValueOverflow(_))));
    assert!(matches!(nifti::encode(&t(40000.0), Datatype::I16, [1.0; 3]), Err(Error::ValueOverflow(_))));
    assert!(matches!(nifti::encode(&t(1e39), Datatype::F32, [1.0; 3]), Err(Error::ValueOverflow(_))));
}

#[test]
fn header_layout() {
    let b = sample();
    assert_eq!(b.len(), VOX_OFFSET + 8);
    let h = nifti::parse_header(&b).unwrap();
    assert_eq!(h.sizeof_hdr, HEADER_SIZE as i32);
    assert_eq!(h.vox_offset, 352.0);
    assert_eq!(&b[344..348], b"n+1\0");
    assert_eq!(nifti::encode_header(&h)[..], b[..HEADER_SIZE]);
}

#[test]
fn files_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let vol = Tensor::new(&[3, 2, 2], (0..12).map(|v| v as f64 * 0.25).collect()).unwrap();
    for name in ["a.nii", "a.nii.gz"] {
        let p = dir.path().join(name);
        nifti::write_volume(&p, &vol, Datatype::F32, [1.0; 3]).unwrap();
        let raw = std::fs::read(&p).unwrap();
        assert_eq!(raw[..2] == [0x1f, 0x8b], name.ends_with(".gz"));
        assert_eq!(nifti::read_volume(&p).unwrap().data, vol);
    }
    let missing = nifti::read_volume(&dir.path().join("none.nii"));
    assert!(matches!(missing, Err(Error::Io { .. })));
}
