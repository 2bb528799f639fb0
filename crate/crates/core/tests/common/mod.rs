#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use chromaset::imagecore::{self, MaskImage, RgbaImage};

/// A photo with an elliptical object on a noisy backdrop, plus its mask.
pub fn photo_and_mask(w: u32, h: u32, seed: u64) -> (RgbaImage, MaskImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cx = rng.random_range(0.35..0.65) * f64::from(w);
    let cy = rng.random_range(0.35..0.65) * f64::from(h);
    let rx = rng.random_range(0.15..0.3) * f64::from(w);
    let ry = rng.random_range(0.15..0.3) * f64::from(h);
    let body: [u8; 3] = [rng.random_range(120..250), rng.random_range(0..120), rng.random_range(120..250)];
    let inside = |x: u32, y: u32| {
        let dx = (f64::from(x) + 0.5 - cx) / rx;
        let dy = (f64::from(y) + 0.5 - cy) / ry;
        dx * dx + dy * dy <= 1.0
    };
    let noise: Vec<[u8; 3]> = (0..w * h).map(|_| rng.random()).collect();
    let photo = RgbaImage::from_fn(w, h, |x, y| {
        if inside(x, y) {
            let shade = ((x + y) % 16) as u8;
            [body[0].saturating_sub(shade), body[1], body[2].saturating_sub(shade), 255]
        } else {
            let [r, g, b] = noise[(y * w + x) as usize];
            [r, g, b, 255]
        }
    });
    let mask = MaskImage::from_fn(w, h, |x, y| if inside(x, y) { 1 } else { 0 });
    (photo, mask)
}

pub fn background(w: u32, h: u32, seed: u64) -> RgbaImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb6);
    let base: [u8; 3] = rng.random();
    RgbaImage::from_fn(w, h, |x, y| {
        [
            base[0].wrapping_add((x / 7) as u8),
            base[1].wrapping_add((y / 5) as u8),
            base[2].wrapping_add(((x * y) / 97) as u8),
            255,
        ]
    })
}

/// Writes `n` photo/mask pairs and `m` backgrounds under `root`.
/// Returns (images, masks, backgrounds) directories.
pub fn write_inputs(root: &Path, n: usize, m: usize, w: u32, h: u32) -> (PathBuf, PathBuf, PathBuf) {
    let images = root.join("images");
    let masks = root.join("masks");
    let bgs = root.join("backgrounds");
    for d in [&images, &masks, &bgs] {
        fs::create_dir_all(d).unwrap();
    }
    for i in 0..n {
        let (photo, mask) = photo_and_mask(w, h, i as u64);
        imagecore::save_image(&photo, images.join(format!("obj{i:03}.png"))).unwrap();
        imagecore::save_mask(&mask, masks.join(format!("obj{i:03}.png"))).unwrap();
    }
    for j in 0..m {
        imagecore::save_image(&background(w, h, j as u64), bgs.join(format!("scene{j:02}.png"))).unwrap();
    }
    (images, masks, bgs)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            collect_files(root, &p, out);
        } else {
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.push((rel, p));
        }
    }
}

/// SHA-256 over every file's relative path and bytes, in path order.
pub fn tree_hash(root: &Path) -> String {
    let mut files = Vec::new();
    collect_files(root, root, &mut files);
    files.sort();
    let mut h = Sha256::new();
    for (rel, p) in files {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(fs::read(p).unwrap());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn count_ext(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            let p = e.as_ref().unwrap().path();
            p.is_file() && p.extension().is_some_and(|x| x == ext)
        })
        .count()
}
pub mod oracles;
