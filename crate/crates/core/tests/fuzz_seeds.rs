//! Replays the checked-in fuzz corpus through each parser on stable Rust.

use std::fs;
use std::path::PathBuf;

use captain_core::formats::*;
use captain_core::reference::fetch::{parse_pexels_response, parse_unsplash_response};
use captain_core::reference::{phash64, GrayImage};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn binary_seeds_decode_and_re_encode() {
    for (p, b) in seeds("decode_latent") {
        let l = decode_latent(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(encode_latent(&l), b);
    }
    for (_, b) in seeds("decode_index") {
        assert_eq!(encode_index(&decode_index(&b).unwrap()), b);
    }
    for (_, b) in seeds("decode_phash_corpus") {
        assert_eq!(encode_phash_corpus(&decode_phash_corpus(&b).unwrap()), b);
    }
    for (_, b) in seeds("decode_image") {
        phash64(&GrayImage::decode(&b).unwrap());
    }
}

#[test]
fn text_seeds_parse() {
    for (_, b) in seeds("parse_trace_csv") {
        let tr = parse_trace_csv(text(&b)).unwrap();
        assert_eq!(parse_trace_csv(&trace_to_csv(&tr).unwrap()).unwrap(), tr);
    }
    for (_, b) in seeds("parse_gm_doc") {
        parse_gm_doc(text(&b)).unwrap();
    }
    for (_, b) in seeds("parse_attention_manifest") {
        parse_attention_manifest(text(&b)).unwrap();
    }
    for (_, b) in seeds("parse_pexels_response") {
        assert!(!parse_pexels_response(text(&b)).unwrap().is_empty());
    }
    for (_, b) in seeds("parse_unsplash_response") {
        assert!(!parse_unsplash_response(text(&b)).unwrap().is_empty());
    }
}

#[test]
fn truncated_binary_seeds_are_rejected() {
    for (_, b) in seeds("decode_latent") {
        assert!((0..b.len()).all(|cut| decode_latent(&b[..cut]).is_err()));
    }
    for (_, b) in seeds("decode_index") {
        assert!((0..b.len()).all(|cut| decode_index(&b[..cut]).is_err()));
    }
    for (_, b) in seeds("decode_phash_corpus") {
        assert!((0..b.len()).all(|cut| decode_phash_corpus(&b[..cut]).is_err()));
    }
}
