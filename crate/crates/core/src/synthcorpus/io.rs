//! Text formats for corpora.
//!
//! * `manifest.tsv`: `#source-trace-manifest v1 seed=<seed> ds=<d_s> f=<F>`, then
//!   `utt_id<TAB>source_spk<TAB>target_spk|-<TAB>method_id<TAB>split<TAB>n_frames`.
//! * `features_<split>.txt`: `utt <utt_id> <T> <F>` followed by `T` rows of `F` floats.
//! * `speakers.tsv`, `methods.tsv`: generator state (styles, projections).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{
    ConversionMethod, Corpus, CorpusDims, CorpusManifest, SpeakerProfile, SpeakerRole, Split, Utterance,
};
use crate::error::{Error, Result};
use crate::numerics::{format_sig9, Matrix};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const SPEAKERS_FILE: &str = "speakers.tsv";
pub const METHODS_FILE: &str = "methods.tsv";

pub fn features_file(split: Split) -> String {
    format!("features_{split}.txt")
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|&x| format_sig9(x)).collect::<Vec<_>>().join(" ")
}

fn parse_float(s: &str, loc: &dyn Fn() -> String) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|e| Error::parse(loc(), format!("bad float `{s}`: {e}")))
}

fn parse_num<T: std::str::FromStr>(s: &str, loc: &dyn Fn() -> String) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>()
        .map_err(|e| Error::parse(loc(), format!("bad number `{s}`: {e}")))
}

/// `key=value` lookup in a header line.
fn header_field<'a>(header: &'a str, key: &str, loc: &dyn Fn() -> String) -> Result<&'a str> {
    header
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::parse(loc(), format!("header lacks `{key}=`")))
}

pub fn write_manifest(m: &CorpusManifest, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "#source-trace-manifest v1 seed={} ds={} f={}",
        m.seed, m.dims.style_dim, m.dims.feat_dim
    )?;
    for u in &m.utterances {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            u.utt_id,
            u.source_speaker,
            u.target_speaker.as_deref().unwrap_or("-"),
            u.method_id,
            u.split,
            u.n_frames
        )?;
    }
    Ok(())
}

/// Parses a manifest; returns `(seed, d_s, F, utterances)`.
pub fn read_manifest(text: &str, name: &str) -> Result<(u64, usize, usize, Vec<Utterance>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(name, "empty manifest"))?;
    let hloc = || format!("{name}:1");
    if !header.starts_with("#source-trace-manifest v1") {
        return Err(Error::parse(hloc(), "missing `#source-trace-manifest v1` header"));
    }
    let seed = parse_num(header_field(header, "seed", &hloc)?, &hloc)?;
    let ds = parse_num(header_field(header, "ds", &hloc)?, &hloc)?;
    let f = parse_num(header_field(header, "f", &hloc)?, &hloc)?;
    let mut utts = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let loc = || format!("{name}:{}", i + 1);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::parse(loc(), format!("expected 6 fields, got {}", fields.len())));
        }
        let method_id: u32 = parse_num(fields[3], &loc)?;
        let target_speaker = (fields[2] != "-").then(|| fields[2].to_string());
        if (method_id == 0) != target_speaker.is_none() {
            return Err(Error::parse(loc(), "method 0 must coincide with target `-`"));
        }
        utts.push(Utterance {
            utt_id: fields[0].to_string(),
            source_speaker: fields[1].to_string(),
            target_speaker,
            method_id,
            split: fields[4].parse().map_err(|_| Error::parse(loc(), "bad split"))?,
            n_frames: parse_num(fields[5], &loc)?,
        });
    }
    Ok((seed, ds, f, utts))
}

pub fn write_features<'a>(
    entries: impl Iterator<Item = (&'a str, &'a Matrix)>,
    w: &mut impl Write,
) -> std::io::Result<()> {
    for (id, x) in entries {
        writeln!(w, "utt {} {} {}", id, x.rows(), x.cols())?;
        for r in 0..x.rows() {
            writeln!(w, "{}", join_floats(x.row(r)))?;
        }
    }
    Ok(())
}

pub fn read_features(reader: impl BufRead, name: &str) -> Result<BTreeMap<String, Matrix>> {
    let mut out = BTreeMap::new();
    let mut lines = reader.lines().enumerate();
    while let Some((i, line)) = lines.next() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.is_empty() {
            continue;
        }
        let loc = || format!("{name}:{}", i + 1);
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "utt" {
            return Err(Error::parse(loc(), "expected `utt <id> <T> <F>`"));
        }
        let (t, f): (usize, usize) = (parse_num(toks[2], &loc)?, parse_num(toks[3], &loc)?);
        let mut data = Vec::with_capacity(t * f);
        for _ in 0..t {
            let (j, row) = lines
                .next()
                .ok_or_else(|| Error::parse(loc(), "truncated feature block"))?;
            let row = row.map_err(|e| Error::io(name, e))?;
            let rloc = || format!("{name}:{}", j + 1);
            let before = data.len();
            for tok in row.split_whitespace() {
                data.push(parse_float(tok, &rloc)?);
            }
            if data.len() - before != f {
                return Err(Error::parse(rloc(), format!("expected {f} values")));
            }
        }
        out.insert(toks[1].to_string(), Matrix::new(t, f, data)?);
    }
    Ok(out)
}

fn write_speakers(m: &CorpusManifest, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "#source-trace-speakers v1 ds={}", m.dims.style_dim)?;
    for s in &m.speakers {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            s.speaker_id,
            s.role.as_str(),
            s.split,
            join_floats(&s.style)
        )?;
    }
    Ok(())
}

fn read_speakers(text: &str, name: &str) -> Result<Vec<SpeakerProfile>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let loc = || format!("{name}:{}", i + 1);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::parse(loc(), "expected 4 fields"));
        }
        let role = match f[1] {
            "source" => SpeakerRole::Source,
            "target" => SpeakerRole::Target,
            other => return Err(Error::parse(loc(), format!("bad role `{other}`"))),
        };
        let style = f[3]
            .split_whitespace()
            .map(|s| parse_float(s, &loc))
            .collect::<Result<_>>()?;
        out.push(SpeakerProfile {
            speaker_id: f[0].to_string(),
            role,
            split: f[2].parse().map_err(|_| Error::parse(loc(), "bad split"))?,
            style,
        });
    }
    Ok(out)
}

fn write_methods(m: &CorpusManifest, w: &mut impl Write) -> std::io::Result<()> {
    let d = &m.dims;
    writeln!(
        w,
        "#source-trace-methods v1 ds={} f={} tmin={} tmax={}",
        d.style_dim, d.feat_dim, d.min_frames, d.max_frames
    )?;
    for c in &m.methods {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            c.method_id,
            c.introduced,
            format_sig9(c.leak_strength),
            format_sig9(c.noise_scale),
            join_floats(c.mix.data()),
            join_floats(c.leak.data())
        )?;
    }
    Ok(())
}

fn read_methods(text: &str, name: &str) -> Result<(CorpusDims, Vec<ConversionMethod>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(name, "empty file"))?;
    let hloc = || format!("{name}:1");
    let dims = CorpusDims {
        style_dim: parse_num(header_field(header, "ds", &hloc)?, &hloc)?,
        feat_dim: parse_num(header_field(header, "f", &hloc)?, &hloc)?,
        min_frames: parse_num(header_field(header, "tmin", &hloc)?, &hloc)?,
        max_frames: parse_num(header_field(header, "tmax", &hloc)?, &hloc)?,
    };
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let loc = || format!("{name}:{}", i + 1);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::parse(loc(), "expected 6 fields"));
        }
        let floats = |s: &str| -> Result<Vec<f64>> { s.split_whitespace().map(|x| parse_float(x, &loc)).collect() };
        let mix = Matrix::new(dims.feat_dim, dims.style_dim, floats(f[4])?)?;
        let leak = Matrix::new(dims.feat_dim, dims.style_dim, floats(f[5])?)?;
        let leak_strength = parse_float(f[2], &loc)?;
        let noise = parse_float(f[3], &loc)?;
        // Files may hold zero-leak control corpora.
        out.push(ConversionMethod::control(
            parse_num(f[0], &loc)?,
            f[1].parse().map_err(|_| Error::parse(loc(), "bad split"))?,
            mix,
            leak,
            leak_strength,
            noise,
        )?);
    }
    Ok((dims, out))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Corpus {
    /// Writes manifest, generator state and per-split feature files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = &self.manifest;
        type Writer<'a> = &'a dyn Fn(&mut BufWriter<fs::File>) -> std::io::Result<()>;
        let writes: [(&str, Writer); 3] = [
            (MANIFEST_FILE, &|w| write_manifest(m, w)),
            (SPEAKERS_FILE, &|w| write_speakers(m, w)),
            (METHODS_FILE, &|w| write_methods(m, w)),
        ];
        for (file, write) in writes {
            let path = dir.join(file);
            let mut w = create(&path)?;
            write(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
        }
        for split in Split::ALL {
            let path = dir.join(features_file(split));
            let mut w = create(&path)?;
            let entries = m
                .utterances_in(split)
                .map(|u| (u.utt_id.as_str(), &self.features[&u.utt_id]));
            write_features(entries, &mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Corpus> {
        let mpath = dir.join(MANIFEST_FILE);
        let (seed, ds, f, utterances) = read_manifest(&read_text(&mpath)?, &mpath.display().to_string())?;
        let spath = dir.join(SPEAKERS_FILE);
        let speakers = read_speakers(&read_text(&spath)?, &spath.display().to_string())?;
        let mepath = dir.join(METHODS_FILE);
        let (dims, methods) = read_methods(&read_text(&mepath)?, &mepath.display().to_string())?;
        if (dims.style_dim, dims.feat_dim) != (ds, f) {
            return Err(Error::Data(format!(
                "manifest dims ({ds}, {f}) disagree with methods file ({}, {})",
                dims.style_dim, dims.feat_dim
            )));
        }
        let mut features = BTreeMap::new();
        for split in Split::ALL {
            let path = dir.join(features_file(split));
            let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            features.extend(read_features(BufReader::new(file), &path.display().to_string())?);
        }
        for u in &utterances {
            let x = features
                .get(&u.utt_id)
                .ok_or_else(|| Error::Data(format!("utterance `{}` has no features", u.utt_id)))?;
            if x.shape() != (u.n_frames, f) {
                return Err(Error::Data(format!(
                    "utterance `{}`: features {:?}, manifest says ({}, {f})",
                    u.utt_id,
                    x.shape(),
                    u.n_frames
                )));
            }
        }
        Ok(Corpus {
            manifest: CorpusManifest {
                seed,
                dims,
                speakers,
                methods,
                utterances,
            },
            features,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcorpus::{generate_corpus, CorpusConfig};

    fn tiny() -> Corpus {
        let cfg = CorpusConfig {
            train_speakers: 3,
            train_utts: 2,
            dev_speakers: 2,
            dev_utts: 2,
            test_speakers: 2,
            test_utts: 2,
            min_frames: 2,
            max_frames: 3,
            ..CorpusConfig::default()
        };
        generate_corpus(&cfg, 77).unwrap()
    }

    #[test]
    fn save_load_is_lossless() {
        let c = tiny();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path()).unwrap();
        let back = Corpus::load(dir.path()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn manifest_header_and_records() {
        let c = tiny();
        let mut buf = Vec::new();
        write_manifest(&c.manifest, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "#source-trace-manifest v1 seed=77 ds=8 f=20");
        let first = lines.next().unwrap();
        let fields: Vec<&str> = first.split('\t').collect();
        assert_eq!(fields.len(), 6);
        assert_eq!(&fields[..5], &["src-train-000-u000", "src-train-000", "-", "0", "train"]);
    }

    #[test]
    fn feature_block_layout() {
        let x = Matrix::new(2, 3, vec![1.0, -0.5, 1234.5678, 0.0, 1e-7, -3.0]).unwrap();
        let mut buf = Vec::new();
        write_features(std::iter::once(("u1", &x)), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "utt u1 2 3");
        assert_eq!(lines[1], "1.00000000e0 -5.00000000e-1 1.23456780e3");
        let back = read_features(text.as_bytes(), "mem").unwrap();
        assert_eq!(back["u1"], x);
    }

    #[test]
    fn truncated_feature_block_is_a_parse_error() {
        let text = "utt u1 2 2\n1 2\n";
        assert!(matches!(read_features(text.as_bytes(), "mem"), Err(Error::Parse { .. })));
    }

    #[test]
    fn bad_manifest_header() {
        assert!(read_manifest("#nope\n", "m").is_err());
    }
}
