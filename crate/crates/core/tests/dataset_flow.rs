use std::collections::BTreeMap;

use echoanat_core::datasets::{
    crop_patches, load_busi_entry, scan_busi, stratified_split, ClassLabel, DatasetSplit, SplitRatios,
};
use echoanat_core::metrics::dice;
use echoanat_core::rle::RleMask;
use echoanat_core::segmentation::{morphgac_run, seed_from_mask, GacInput, GacParams};
use echoanat_core::synthdata::{generate_dataset, write_busi_layout, SynthConfig};
use echoanat_core::{ImageGrid, Mask, ValueRange};
use proptest::prelude::*;

#[test]
fn synthetic_tree_scans_back_losslessly() {
    let dir = tempfile::tempdir().unwrap();
    let config = SynthConfig {
        height: 40,
        width: 48,
        ..SynthConfig::default()
    };
    let data = generate_dataset(3, &config, 21).unwrap();
    write_busi_layout(&data.us, dir.path()).unwrap();

    let scan = scan_busi(dir.path()).unwrap();
    assert!(scan.offending.is_empty() && scan.warnings.is_empty());
    assert_eq!(scan.entries.len(), 9);
    let by_id: BTreeMap<_, _> = data.us.iter().map(|s| (s.id.clone(), s)).collect();
    for entry in &scan.entries {
        let original = by_id[&entry.id];
        let loaded = load_busi_entry(entry).unwrap();
        assert_eq!(loaded.class_label, original.class_label);
        assert_eq!(loaded.masks, original.masks, "{}", entry.id);
        assert_eq!(loaded.image.shape(), (40, 48));
        // 8-bit PNG storage
        let worst = loaded
            .image
            .data()
            .iter()
            .zip(original.image.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-12, "{}: {worst}", entry.id);
    }
}

#[test]
fn anatomy_phantoms_segment_from_their_own_seed() {
    let config = SynthConfig {
        height: 64,
        width: 64,
        ..SynthConfig::default()
    };
    let data = generate_dataset(4, &config, 8).unwrap();
    let mut scores = Vec::new();
    for s in data.anatomy.iter().filter(|s| s.class_label != ClassLabel::Normal) {
        let truth = &s.masks[0];
        let seed = seed_from_mask(truth).unwrap();
        let run = morphgac_run(GacInput::Image(&s.image), &seed, &GacParams::default(), 0).unwrap();
        scores.push(dice(&run.mask, truth).unwrap());
    }
    scores.sort_by(f64::total_cmp);
    let median = scores[scores.len() / 2];
    assert!(median >= 0.8, "{scores:?}");
}

fn labelled(counts: [usize; 3]) -> Vec<(String, ClassLabel)> {
    ClassLabel::ALL
        .into_iter()
        .zip(counts)
        .flat_map(|(class, n)| (1..=n).map(move |i| (format!("{class} ({i})"), class)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_stratified_and_survives_the_manifest(
        counts in proptest::array::uniform3(3usize..40),
        seed in any::<u64>(),
        shuffle in any::<u64>(),
    ) {
        let samples = labelled(counts);
        let ratios = SplitRatios::default();
        let split = stratified_split(&samples, ratios, seed).unwrap();

        let mut permuted = samples.clone();
        let n = permuted.len();
        for i in (1..n).rev() {
            permuted.swap(i, (shuffle.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let again = stratified_split(&permuted, ratios, seed).unwrap();
        prop_assert_eq!(&again.train, &split.train);
        prop_assert_eq!(&again.test, &split.test);

        for (class, n) in ClassLabel::ALL.into_iter().zip(counts) {
            let in_part = |ids: &[String]| ids.iter().filter(|id| ClassLabel::from_id(id) == Some(class)).count();
            let parts = [
                (in_part(&split.train), ratios.train),
                (in_part(&split.validation), ratios.validation),
                (in_part(&split.test), ratios.test),
            ];
            prop_assert_eq!(parts.iter().map(|p| p.0).sum::<usize>(), n);
            for (got, ratio) in parts {
                prop_assert!((got as f64 - ratio * n as f64).abs() <= 1.0, "{class}: {got} of {n} at {ratio}");
            }
        }

        let back = DatasetSplit::from_manifest(&split.to_manifest()).unwrap();
        for (id, _) in &samples {
            prop_assert_eq!(back.split_of(id), split.split_of(id));
        }
    }

    #[test]
    fn patches_cover_every_pixel(
        h in 1usize..120,
        w in 1usize..120,
        geometry in prop_oneof![Just((32usize, 16usize)), Just((16, 16)), Just((24, 10)), Just((64, 32))],
    ) {
        let (patch, stride) = geometry;
        let img = ImageGrid::from_fn(h, w, 1, ValueRange::Unit, |_, r, c| ((r * 131 + c * 17) % 255) as f64 / 255.0).unwrap();
        let set = crop_patches(&img, "p", patch, stride).unwrap();
        let (ph, pw) = set.padded_shape;
        prop_assert!(ph >= h.max(patch) && pw >= w.max(patch));
        let mut covered = vec![false; ph * pw];
        for p in &set.patches {
            prop_assert_eq!(p.image.shape(), (patch, patch));
            prop_assert!(p.origin.0 + patch <= ph && p.origin.1 + patch <= pw);
            for r in 0..patch {
                for c in 0..patch {
                    covered[(p.origin.0 + r) * pw + p.origin.1 + c] = true;
                }
            }
            // the top-left pixel of an in-bounds patch is a pixel of the parent
            if p.origin.0 < h && p.origin.1 < w {
                prop_assert_eq!(p.image.get(0, 0, 0), img.get(0, p.origin.0, p.origin.1));
            }
        }
        prop_assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn rle_survives_json(
        h in 1usize..24,
        w in 1usize..24,
        bits in proptest::collection::vec(any::<bool>(), 576),
    ) {
        let mask = Mask::from_fn(h, w, |r, c| bits[r * 24 + c]);
        let rle = RleMask::encode(&mask);
        prop_assert_eq!(rle.runs.iter().sum::<usize>(), h * w);
        prop_assert!(rle.runs.iter().skip(1).all(|&n| n > 0));
        let text = serde_json::to_string(&rle).unwrap();
        let back: RleMask = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.decode().unwrap(), mask);
    }
}
