use std::fs;

use fastomo::io::{
    export_image, read_block, read_header, read_volume, write_volume, BlockReader, ImageFormat,
    Layout, VolumeHeader, VolumeWriter, HEADER_LEN,
};
use fastomo::phantom::{analytic_sinogram, Ellipsoid};
use fastomo::recon::PhantomVolume;
use fastomo::{slice_coordinate, AngleAxis, DetectorAxis, Error, ImageGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

fn random_volume(header: &VolumeHeader, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..header.value_count()).map(|_| rng.gen::<f32>() * 200.0 - 100.0).collect()
}

#[test]
fn zero_volume_file_size() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("z.tomo");
    let h = VolumeHeader::frames(2, 2, 2).unwrap();
    write_volume(&path, &h, &[0.0; 8]).unwrap();
    assert_eq!(fs::metadata(&path).unwrap().len(), 64 + 32);
    assert_eq!(HEADER_LEN, 64);
}

#[test]
fn round_trip_is_bit_exact_and_deterministic() {
    let dir = tempdir().unwrap();
    let h = VolumeHeader::frames(7, 5, 9).unwrap();
    let mut data = random_volume(&h, 1);
    data[3] = f32::MIN_POSITIVE / 4.0;
    data[4] = -0.0;
    let (a, b) = (dir.path().join("a.tomo"), dir.path().join("b.tomo"));
    write_volume(&a, &h, &data).unwrap();
    write_volume(&b, &h, &data).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let (back_h, back) = read_volume(&a).unwrap();
    assert_eq!(back_h, h);
    assert!(back.iter().zip(&data).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn frame_layout_gathers_slice_columns() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("f.tomo");
    let (n_angle, n_slice, n_det) = (6, 4, 5);
    let h = VolumeHeader::frames(n_angle, n_slice, n_det).unwrap();
    let data = random_volume(&h, 2);
    write_volume(&path, &h, &data).unwrap();
    let mut r = BlockReader::open(&path, 4).unwrap();
    let block = r.read_block::<f64>().unwrap().unwrap();
    for (k, y) in block.slices.iter().enumerate() {
        for j in 0..n_angle {
            for i in 0..n_det {
                assert_eq!(y.get(j, i), data[(j * n_slice + k) * n_det + i] as f64);
            }
        }
    }
}

#[test]
fn slice_layout_reads_contiguous_planes() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("s.tomo");
    let h = VolumeHeader::slices(3, 4, 4).unwrap();
    let data = random_volume(&h, 3);
    write_volume(&path, &h, &data).unwrap();
    let mut r = BlockReader::open(&path, 2).unwrap();
    assert_eq!(r.read_plane(2).unwrap(), data[32..48].to_vec());
}

#[test]
fn blocks_of_ten_from_twenty_five_slices() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("q.tomo");
    let h = VolumeHeader::frames(3, 25, 4).unwrap();
    let data = random_volume(&h, 4);
    write_volume(&path, &h, &data).unwrap();
    let mut r = BlockReader::open(&path, 10).unwrap();
    assert_eq!(r.n_blocks(), 3);
    let mut sizes = Vec::new();
    let mut firsts = Vec::new();
    while let Some(block) = read_block::<f32>(&mut r).unwrap() {
        sizes.push(block.len());
        firsts.push(block.first_slice);
        assert_eq!(r.cursor(), block.slice_range().end);
    }
    assert_eq!(sizes, vec![10, 10, 5]);
    assert_eq!(firsts, vec![0, 10, 20]);
    // End of volume stays end of volume.
    assert!(read_block::<f32>(&mut r).unwrap().is_none());

    let mut whole = BlockReader::open(&path, 40).unwrap();
    assert_eq!(whole.read_block::<f32>().unwrap().unwrap().len(), 25);
    assert!(whole.read_block::<f32>().unwrap().is_none());
    assert!(BlockReader::open(&path, 0).is_err());
}

#[test]
fn phantom_container_matches_analytic_sinograms() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("p.tomo");
    let e = Ellipsoid::new(0.5, 0.35, 0.7, 1.0, [0.05, -0.1, 0.1]).unwrap();
    let vol = PhantomVolume {
        n_det: 40,
        n_angles: 24,
        n_slices: 6,
        ellipsoid: e,
        counts: None,
    };
    let h = vol.write(&path).unwrap();
    assert_eq!(h.layout, Layout::Frames);
    let d = DetectorAxis::new(40).unwrap();
    let a = AngleAxis::new(24).unwrap();
    let mut r = BlockReader::open(&path, 4).unwrap();
    while let Some(block) = r.read_block::<f64>().unwrap() {
        for (k, y) in block.slice_range().zip(&block.slices) {
            let exact = analytic_sinogram(&e, slice_coordinate(k, 6), d, a).unwrap();
            for (got, want) in y.data().iter().zip(exact.data()) {
                assert_eq!(*got, *want as f32 as f64);
            }
        }
    }
}

#[test]
fn truncated_and_foreign_files_are_reported() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("t.tomo");
    let h = VolumeHeader::frames(4, 4, 4).unwrap();
    write_volume(&path, &h, &random_volume(&h, 5)).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    match read_header(&path) {
        Err(Error::Truncated { expected, actual, .. }) => {
            assert_eq!((expected, actual), (320, 310));
        }
        other => panic!("expected truncation, got {other:?}"),
    }
    let msg = read_volume(&path).unwrap_err().to_string();
    assert!(msg.contains("320") && msg.contains("310"), "{msg}");
    assert!(BlockReader::open(&path, 2).is_err());

    let foreign = dir.path().join("foreign.bin");
    fs::write(&foreign, b"P5\n2 2\n255\nabcd").unwrap();
    let err = read_header(&foreign).unwrap_err();
    assert!(matches!(err, Error::BadMagic { .. }));
    assert!(err.to_string().contains("not a TOMOVOL1 file"));
    assert!(matches!(read_header(dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn positional_writer_fills_any_order() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("w.tomo");
    let h = VolumeHeader::slices(5, 2, 2).unwrap();
    let data = random_volume(&h, 6);
    let w = VolumeWriter::create(&path, h).unwrap();
    w.write_slices(3, &data[12..20]).unwrap();
    w.write_slices(0, &data[0..12]).unwrap();
    assert!(w.write_slices(4, &data[0..8]).is_err());
    w.finish().unwrap();
    let (_, back) = read_volume(&path).unwrap();
    assert_eq!(back, data);
}

#[test]
fn pgm_export_examples() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("x.pgm");
    let grid = ImageGrid::new(2, vec![0.0f64, 1.0, 1.0, 0.0]).unwrap();
    export_image(&grid, &path, ImageFormat::Pgm16).unwrap();
    let bytes = fs::read(&path).unwrap();
    let header = b"P5\n2 2\n65535\n";
    assert_eq!(&bytes[..header.len()], header);
    let pixels: Vec<u16> = bytes[header.len()..]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    assert_eq!(pixels, vec![0, 65535, 65535, 0]);

    let flat = ImageGrid::new(3, vec![4.2f64; 9]).unwrap();
    export_image(&flat, &path, ImageFormat::Pgm16).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert!(bytes[b"P5\n3 3\n65535\n".len()..].iter().all(|&b| b == 0));
}

#[test]
fn csv_export_round_trips() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("x.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = ImageGrid::from_fn(6, |_, _| rng.gen::<f64>() * 1e3 - 500.0).unwrap();
    export_image(&grid, &path, ImageFormat::Csv).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(!text.contains('\r'));
    let values: Vec<f64> = text
        .lines()
        .flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()))
        .collect();
    assert_eq!(values.len(), 36);
    for (got, want) in values.iter().zip(grid.data()) {
        assert!((got - want).abs() <= 1e-6 * want.abs());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn block_reads_reproduce_every_value(
        n_angle in 1usize..6, n_slice in 1usize..12, n_det in 2usize..7, q in 1usize..15, seed in any::<u64>(),
    ) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.tomo");
        let h = VolumeHeader::frames(n_angle, n_slice, n_det).unwrap();
        let data = random_volume(&h, seed);
        write_volume(&path, &h, &data).unwrap();
        let mut r = BlockReader::open(&path, q).unwrap();
        let mut seen = 0;
        while let Some(block) = r.read_block::<f32>().unwrap() {
            prop_assert!(block.len() <= q);
            prop_assert_eq!(block.first_slice, seen);
            for (k, y) in block.slice_range().zip(&block.slices) {
                for j in 0..n_angle {
                    for i in 0..n_det {
                        prop_assert_eq!(y.get(j, i).to_bits(), data[(j * n_slice + k) * n_det + i].to_bits());
                    }
                }
            }
            seen += block.len();
        }
        prop_assert_eq!(seen, n_slice);
    }
}
